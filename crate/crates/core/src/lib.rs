//! Feedback controllers that drive a stable LTI plant to the solution of a
//! linearly constrained convex steady-state program.

pub mod error;
pub mod frequency;
pub mod numerics;
pub mod optimality;
pub mod plant;
pub mod problem;
pub mod scenario;
pub mod sdp;
pub mod simulate;
pub mod stabilizer;
pub mod synthesis;

pub use error::{Error, Result};
