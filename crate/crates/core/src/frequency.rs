//! Frequency regulation of a networked power system: `m` buses with
//! controllable generation `u_i`, a scalar load step `w`, and a steady-state
//! frequency deviation `(1/beta) (1'u - w)` common to all buses.
//!
//! The dynamic realization used for simulation has, per bus, a first-order
//! turbine lag `T_g p_i' = -p_i + u_i` and a first-order frequency
//! measurement filter `T_f omega_i' = -omega_i + omega_bar`, coupled through
//! the aggregate swing equation `M omega_bar' = -beta omega_bar + 1'p - w`.
//! The measured output is `z = omega`, so the DC gains are exactly
//! `G_u = (1/beta) 1 1'` and `G_w = -(1/beta) 1`.

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::optimality::FeasibleSubspace;
use crate::plant::{DcGains, Plant};
use crate::problem::{ConvexFunction, OssProblem, Sector, SmoothResidual};
use crate::stabilizer::{
    two_loop_gains, ControlContext, InversionController, K2Choice, PrimalDualController, TwoLoopController,
};

pub const TURBINE_TIME: f64 = 0.5;
pub const INERTIA: f64 = 2.0;
pub const FILTER_TIME: f64 = 0.1;

/// `J_i(u) = a/2 u^2 + b u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusCost {
    pub a: f64,
    pub b: f64,
}

impl BusCost {
    pub fn marginal(&self, u: f64) -> f64 {
        self.a * u + self.b
    }
}

/// Optional generation limits enforced by a log barrier on every bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationLimits {
    pub lower: f64,
    pub upper: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyModel {
    pub beta: f64,
    pub costs: Vec<BusCost>,
    /// Undirected weighted edges `(i, j, a_ij)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub limits: Option<GenerationLimits>,
}

impl FrequencyModel {
    /// Unit-weight ring with `a_i = 1, 2, ..., m`.
    pub fn ring(m: usize, beta: f64) -> Result<Self> {
        let model = Self {
            beta,
            costs: (0..m).map(|i| BusCost { a: (i + 1) as f64, b: 0.0 }).collect(),
            edges: ring_edges(m),
            limits: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn buses(&self) -> usize {
        self.costs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.buses();
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidModel(format!("beta must be positive, got {}", self.beta)));
        }
        if m < 2 {
            return Err(Error::InvalidModel("at least two buses are required".into()));
        }
        for (k, c) in self.costs.iter().enumerate() {
            if !(c.a > 0.0 && c.a.is_finite() && c.b.is_finite()) {
                return Err(Error::InvalidModel(format!("bus {k} cost needs a > 0")));
            }
        }
        for &(i, j, a) in &self.edges {
            if i >= m || j >= m || i == j {
                return Err(Error::InvalidModel(format!("edge ({i}, {j}) is not between two distinct buses")));
            }
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidModel(format!("edge ({i}, {j}) weight must be positive")));
            }
        }
        if let Some(l) = &self.limits {
            if !(l.lower < 0.0 && 0.0 < l.upper && l.weight > 0.0) {
                return Err(Error::InvalidModel("generation limits must bracket zero with a positive weight".into()));
            }
        }
        let eig = numerics::sym_eigenvalues(&self.laplacian());
        if eig.len() < 2 || eig[1] <= 1e-9 {
            return Err(Error::InvalidModel("the communication graph is not connected".into()));
        }
        Ok(())
    }

    pub fn laplacian(&self) -> Matrix {
        let m = self.buses();
        let mut l = Matrix::zeros(m, m);
        for &(i, j, a) in &self.edges {
            l[(i, i)] += a;
            l[(j, j)] += a;
            l[(i, j)] -= a;
            l[(j, i)] -= a;
        }
        l
    }

    /// Leading `(m-1) x (m-1)` block of the Laplacian.
    pub fn l11(&self) -> Matrix {
        let m = self.buses();
        self.laplacian().view((0, 0), (m - 1, m - 1)).into_owned()
    }

    pub fn dc_gains(&self) -> Result<DcGains> {
        let m = self.buses();
        DcGains::from_matrices(
            Matrix::from_element(m, m, 1.0 / self.beta),
            Matrix::from_element(m, 1, -1.0 / self.beta),
        )
    }

    /// State order `(p_1..p_m, omega_bar, omega_1..omega_m)`.
    pub fn plant(&self) -> Result<Plant> {
        let m = self.buses();
        let n = 2 * m + 1;
        let mut a = Matrix::zeros(n, n);
        let mut b = Matrix::zeros(n, m);
        let mut b_w = Matrix::zeros(n, 1);
        let mut c = Matrix::zeros(m, n);
        for i in 0..m {
            a[(i, i)] = -1.0 / TURBINE_TIME;
            b[(i, i)] = 1.0 / TURBINE_TIME;
            a[(m, i)] = 1.0 / INERTIA;
            a[(m + 1 + i, m + 1 + i)] = -1.0 / FILTER_TIME;
            a[(m + 1 + i, m)] = 1.0 / FILTER_TIME;
            c[(i, m + 1 + i)] = 1.0;
        }
        a[(m, m)] = -self.beta / INERTIA;
        b_w[(m, 0)] = -1.0 / INERTIA;
        Plant::new(a, b, b_w, c, Matrix::zeros(m, m), Matrix::zeros(m, 1))
    }

    /// `sum_i J_i`, plus the generation barrier when limits are set.
    pub fn objective(&self) -> Result<ConvexFunction> {
        let m = self.buses();
        let q = Matrix::from_diagonal(&Vector::from_iterator(m, self.costs.iter().map(|c| c.a)));
        let lin = Vector::from_iterator(m, self.costs.iter().map(|c| c.b));
        let mut f0 = ConvexFunction::zero(m).with_quadratic(q)?;
        if lin.iter().any(|v| *v != 0.0) {
            f0 = f0.with_linear(lin)?;
        }
        if let Some(l) = &self.limits {
            let residual = SmoothResidual::LogBarrier {
                lower: Vector::from_element(m, l.lower),
                upper: Vector::from_element(m, l.upper),
                weight: l.weight,
            };
            f0 = f0.with_residual(residual, Sector::default())?;
        }
        Ok(f0)
    }

    /// Optimal dispatch for a load `w` without generation limits:
    /// `u_i = (lambda - b_i) / a_i` with `lambda` chosen so `1'u = w`.
    pub fn closed_form_dispatch(&self, w: f64) -> Vector {
        let inv: f64 = self.costs.iter().map(|c| 1.0 / c.a).sum();
        let shift: f64 = self.costs.iter().map(|c| c.b / c.a).sum();
        let lambda = (w + shift) / inv;
        Vector::from_iterator(self.buses(), self.costs.iter().map(|c| (lambda - c.b) / c.a))
    }

    /// `max_i dJ_i(u_i) - min_i dJ_i(u_i)`.
    pub fn marginal_cost_spread(&self, u: &Vector) -> f64 {
        let mc: Vec<f64> = self.costs.iter().zip(u.iter()).map(|(c, &v)| c.marginal(v)).collect();
        let hi = mc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = mc.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

pub fn ring_edges(m: usize) -> Vec<(usize, usize, f64)> {
    match m {
        0 | 1 => vec![],
        2 => vec![(0, 1, 1.0)],
        _ => (0..m).map(|i| (i, (i + 1) % m, 1.0)).collect(),
    }
}

/// Problem `min sum_i J_i(u_i)` s.t. `beta omega_m = 0`, with the basis
/// `T_z = 0`, `T_u` = first `m-1` columns of the Laplacian.
pub fn build_frequency_problem(model: &FrequencyModel) -> Result<(OssProblem, FeasibleSubspace)> {
    model.validate()?;
    let m = model.buses();
    let mut h_z = Matrix::zeros(1, m);
    h_z[(0, m - 1)] = model.beta;
    let prob = OssProblem::new(
        model.objective()?,
        ConvexFunction::zero(m),
        h_z,
        Matrix::zeros(1, m),
        Matrix::zeros(1, 1),
        None,
    )?;
    let t_u = model.laplacian().columns(0, m - 1).into_owned();
    let fs = FeasibleSubspace::with_basis(&model.dc_gains()?, &prob, Matrix::zeros(m, m - 1), t_u)?;
    Ok((prob, fs))
}

/// Plant, gains and control context for the model.
#[derive(Debug, Clone)]
pub struct FrequencyCase {
    pub model: FrequencyModel,
    pub plant: Plant,
    pub ctx: ControlContext,
}

impl FrequencyCase {
    pub fn new(model: FrequencyModel) -> Result<Self> {
        let (prob, fs) = build_frequency_problem(&model)?;
        let plant = model.plant()?;
        let realized = plant.dc_gains()?;
        let exact = model.dc_gains()?;
        let err = (&realized.g_u - &exact.g_u).amax().max((&realized.g_w - &exact.g_w).amax());
        if err > 1e-8 {
            return Err(Error::InternalConsistency(format!("realized DC gain deviates by {err:.3e}")));
        }
        let ctx = ControlContext::new(prob, exact, Some(fs))?;
        Ok(Self { model, plant, ctx })
    }

    pub fn primal_dual(&self, tau_p: f64, tau_d: f64) -> PrimalDualController {
        PrimalDualController { tau_p, tau_d }
    }

    pub fn inversion(&self, tau: f64) -> InversionController {
        InversionController { tau }
    }

    pub fn distributed(&self, tau1: f64, tau2: f64) -> Result<TwoLoopController> {
        distributed_controller(&self.model, &self.ctx, tau1, tau2)
    }
}

/// Two-loop controller with `K2 = e_m`, `P = L11^{-1}` and `K1 = [I; 0]`:
/// bus `i < m` integrates its weighted marginal-cost disagreement with its
/// neighbours, and bus `m` additionally integrates the frequency error.
pub fn distributed_controller(model: &FrequencyModel, ctx: &ControlContext, tau1: f64, tau2: f64) -> Result<TwoLoopController> {
    if !(tau1 > 0.0 && tau2 > 0.0) {
        return Err(invalid("time constants must be positive"));
    }
    let fs = ctx.fs.as_ref().ok_or_else(|| invalid("the context has no feasible subspace"))?;
    let m = model.buses();
    let (l11_inv, _) = numerics::inverse_with_condition(&model.l11())?;
    let p = (&l11_inv + l11_inv.transpose()) * 0.5;
    let mut e_m = Matrix::zeros(m, 1);
    e_m[(m - 1, 0)] = 1.0;
    let mut k1 = Matrix::zeros(m, m - 1);
    k1.view_mut((0, 0), (m - 1, m - 1)).fill_with_identity();
    let gains = two_loop_gains(fs, &ctx.cg, &p, K2Choice::Custom(e_m), Some(k1))?;
    Ok(TwoLoopController { gains, tau1, tau2 })
}
