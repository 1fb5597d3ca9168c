//! The steady-state program
//!
//! ```text
//! minimize   f0(u) + g0(z)
//! subject to z = G_u u + G_w w
//!            0 = H_z z + H_u u + H_w w
//! ```
//!
//! with objectives split into a quadratic part and a named smooth residual,
//! KKT residuals, and a reference solver used as an oracle by the tests and
//! the simulation reports.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Matrix, NewtonOptions, Vector};
use crate::optimality::FeasibleSubspace;
use crate::plant::DcGains;
use crate::sdp;
use crate::synthesis::ConvexityClass;

/// User-supplied smooth convex term with its derivatives.
pub trait CustomResidual: Send + Sync + fmt::Debug {
    fn value(&self, x: &Vector) -> Result<f64>;
    fn gradient(&self, x: &Vector) -> Result<Vector>;
    fn hessian(&self, x: &Vector) -> Result<Matrix>;
    /// Open box outside which the term is undefined.
    fn domain(&self) -> Option<(Vector, Vector)> {
        None
    }
}

/// The non-quadratic part of an objective.
#[derive(Debug, Clone)]
pub enum SmoothResidual {
    None,
    /// `weight * sum_k [-log(upper_k - x_k) - log(x_k - lower_k)]`.
    LogBarrier {
        lower: Vector,
        upper: Vector,
        weight: f64,
    },
    /// `weight * 1/2 * sum_k max(0, lower_k - x_k, x_k - upper_k)^2`; infinite
    /// bounds switch a side off.
    BoxPenalty {
        lower: Vector,
        upper: Vector,
        weight: f64,
    },
    /// `weight * log(sum_k exp(x_k))`.
    LogSumExp { weight: f64 },
    Custom(Arc<dyn CustomResidual>),
}

impl SmoothResidual {
    pub fn is_none(&self) -> bool {
        matches!(self, SmoothResidual::None)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SmoothResidual::None => "none",
            SmoothResidual::LogBarrier { .. } => "log-barrier",
            SmoothResidual::BoxPenalty { .. } => "box-penalty",
            SmoothResidual::LogSumExp { .. } => "log-sum-exp",
            SmoothResidual::Custom(_) => "custom",
        }
    }

    fn domain(&self) -> Option<(Vector, Vector)> {
        match self {
            SmoothResidual::LogBarrier { lower, upper, .. } => Some((lower.clone(), upper.clone())),
            SmoothResidual::Custom(c) => c.domain(),
            _ => None,
        }
    }

    fn check_domain(&self, x: &Vector) -> Result<()> {
        if let Some((lo, hi)) = self.domain() {
            for k in 0..x.len() {
                if !(x[k] > lo[k] && x[k] < hi[k]) {
                    return Err(Error::Domain(format!(
                        "component {k} = {} outside open interval ({}, {})",
                        x[k], lo[k], hi[k]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match self {
            SmoothResidual::None => 0.0,
            SmoothResidual::LogBarrier { lower, upper, weight } => {
                weight
                    * (0..x.len())
                        .map(|k| -(upper[k] - x[k]).ln() - (x[k] - lower[k]).ln())
                        .sum::<f64>()
            }
            SmoothResidual::BoxPenalty { lower, upper, weight } => {
                0.5 * weight
                    * (0..x.len())
                        .map(|k| {
                            let v = (lower[k] - x[k]).max(x[k] - upper[k]).max(0.0);
                            v * v
                        })
                        .sum::<f64>()
            }
            SmoothResidual::LogSumExp { weight } => {
                let mx = x.max();
                weight * (mx + x.iter().map(|v| (v - mx).exp()).sum::<f64>().ln())
            }
            SmoothResidual::Custom(c) => c.value(x)?,
        })
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_domain(x)?;
        Ok(match self {
            SmoothResidual::None => Vector::zeros(x.len()),
            SmoothResidual::LogBarrier { lower, upper, weight } => Vector::from_fn(x.len(), |k, _| {
                weight * (1.0 / (upper[k] - x[k]) - 1.0 / (x[k] - lower[k]))
            }),
            SmoothResidual::BoxPenalty { lower, upper, weight } => Vector::from_fn(x.len(), |k, _| {
                if x[k] > upper[k] {
                    weight * (x[k] - upper[k])
                } else if x[k] < lower[k] {
                    weight * (x[k] - lower[k])
                } else {
                    0.0
                }
            }),
            SmoothResidual::LogSumExp { weight } => softmax(x) * *weight,
            SmoothResidual::Custom(c) => c.gradient(x)?,
        })
    }

    /// Hessian; for the penalty this is the one-sided generalized derivative.
    pub fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.check_domain(x)?;
        let n = x.len();
        Ok(match self {
            SmoothResidual::None => Matrix::zeros(n, n),
            SmoothResidual::LogBarrier { lower, upper, weight } => {
                Matrix::from_diagonal(&Vector::from_fn(n, |k, _| {
                    weight * ((upper[k] - x[k]).powi(-2) + (x[k] - lower[k]).powi(-2))
                }))
            }
            SmoothResidual::BoxPenalty { lower, upper, weight } => {
                Matrix::from_diagonal(&Vector::from_fn(n, |k, _| {
                    if x[k] > upper[k] || x[k] < lower[k] {
                        *weight
                    } else {
                        0.0
                    }
                }))
            }
            SmoothResidual::LogSumExp { weight } => {
                let s = softmax(x);
                (Matrix::from_diagonal(&s) - &s * s.transpose()) * *weight
            }
            SmoothResidual::Custom(c) => c.hessian(x)?,
        })
    }

    fn scaled(&self, alpha: f64) -> Result<Self> {
        Ok(match self {
            SmoothResidual::None => SmoothResidual::None,
            SmoothResidual::LogBarrier { lower, upper, weight } => SmoothResidual::LogBarrier {
                lower: lower.clone(),
                upper: upper.clone(),
                weight: weight * alpha,
            },
            SmoothResidual::BoxPenalty { lower, upper, weight } => SmoothResidual::BoxPenalty {
                lower: lower.clone(),
                upper: upper.clone(),
                weight: weight * alpha,
            },
            SmoothResidual::LogSumExp { weight } => SmoothResidual::LogSumExp { weight: weight * alpha },
            SmoothResidual::Custom(_) => {
                return Err(invalid("custom residuals cannot be rescaled"));
            }
        })
    }
}

fn softmax(x: &Vector) -> Vector {
    let mx = x.max();
    let e = x.map(|v| (v - mx).exp());
    let s = e.sum();
    e / s
}

/// Declared incremental sector `(m, L)` of the residual gradient, optionally
/// only over a sub-box of the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Sector {
    pub m: f64,
    /// May be `f64::INFINITY`.
    pub l: f64,
    pub region: Option<(Vector, Vector)>,
}

impl Sector {
    pub fn new(m: f64, l: f64) -> Self {
        Self { m, l, region: None }
    }

    pub fn class(&self) -> ConvexityClass {
        ConvexityClass::from_parameters(self.m, self.l)
    }
}

impl Default for Sector {
    fn default() -> Self {
        Sector::new(0.0, f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorCheck {
    pub pairs: usize,
    /// Minimum of the sector form divided by `|dp|^2 + |dq|^2`.
    pub min_normalized_form: f64,
}

impl SectorCheck {
    pub fn holds(&self) -> bool {
        self.min_normalized_form >= -1e-12
    }
}

/// Convex objective `1/2 x'Qx + c'x + residual(x)`.
#[derive(Debug, Clone)]
pub struct ConvexFunction {
    dim: usize,
    quadratic: Option<Matrix>,
    linear: Option<Vector>,
    residual: SmoothResidual,
    sector: Sector,
}

impl ConvexFunction {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            quadratic: None,
            linear: None,
            residual: SmoothResidual::None,
            sector: Sector::new(0.0, 0.0),
        }
    }

    /// `1/2 |x|^2`.
    pub fn half_norm_squared(dim: usize) -> Self {
        Self::zero(dim).with_quadratic(Matrix::identity(dim, dim)).expect("identity is PSD")
    }

    pub fn with_quadratic(mut self, q: Matrix) -> Result<Self> {
        if q.shape() != (self.dim, self.dim) {
            return Err(invalid(format!("quadratic term must be {0}x{0}", self.dim)));
        }
        if !numerics::all_finite(&q) {
            return Err(invalid("quadratic term has non-finite entries"));
        }
        let asym = (&q - q.transpose()).norm();
        if asym > 1e-10 * q.norm().max(1.0) {
            return Err(invalid("quadratic term must be symmetric"));
        }
        if numerics::sym_min_eig(&q) < -1e-10 * q.norm().max(1.0) {
            return Err(invalid("quadratic term must be positive semidefinite"));
        }
        self.quadratic = Some((&q + q.transpose()) * 0.5);
        Ok(self)
    }

    pub fn with_linear(mut self, c: Vector) -> Result<Self> {
        if c.len() != self.dim {
            return Err(invalid(format!("linear term must have length {}", self.dim)));
        }
        self.linear = Some(c);
        Ok(self)
    }

    pub fn with_residual(mut self, residual: SmoothResidual, sector: Sector) -> Result<Self> {
        let n = self.dim;
        match &residual {
            SmoothResidual::LogBarrier { lower, upper, weight } => {
                if lower.len() != n || upper.len() != n {
                    return Err(invalid("barrier bounds have wrong length"));
                }
                if (0..n).any(|k| !(lower[k].is_finite() && upper[k].is_finite() && lower[k] < upper[k])) {
                    return Err(invalid("barrier bounds must be finite with lower < upper"));
                }
                if !(*weight > 0.0) {
                    return Err(invalid("barrier weight must be positive"));
                }
            }
            SmoothResidual::BoxPenalty { lower, upper, weight } => {
                if lower.len() != n || upper.len() != n {
                    return Err(invalid("penalty bounds have wrong length"));
                }
                if (0..n).any(|k| !(lower[k] <= upper[k])) {
                    return Err(invalid("penalty bounds must satisfy lower <= upper"));
                }
                if !(*weight > 0.0) {
                    return Err(invalid("penalty weight must be positive"));
                }
            }
            SmoothResidual::LogSumExp { weight } => {
                if !(*weight > 0.0) {
                    return Err(invalid("log-sum-exp weight must be positive"));
                }
            }
            SmoothResidual::None | SmoothResidual::Custom(_) => {}
        }
        if !(sector.m >= 0.0) || !(sector.l > 0.0 || (sector.l == 0.0 && residual.is_none())) || sector.m > sector.l {
            return Err(invalid(format!(
                "sector parameters must satisfy 0 <= m <= L, L > 0 (got m={}, L={})",
                sector.m, sector.l
            )));
        }
        if let Some((lo, hi)) = &sector.region {
            if lo.len() != n || hi.len() != n || (0..n).any(|k| !(lo[k] < hi[k])) {
                return Err(invalid("sector region must be a non-empty box of matching dimension"));
            }
        }
        self.residual = residual;
        self.sector = sector;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn residual(&self) -> &SmoothResidual {
        &self.residual
    }

    pub fn sector(&self) -> &Sector {
        &self.sector
    }

    pub fn linear(&self) -> Option<&Vector> {
        self.linear.as_ref()
    }

    /// `Q`, zero when absent.
    pub fn quadratic_matrix(&self) -> Matrix {
        self.quadratic.clone().unwrap_or_else(|| Matrix::zeros(self.dim, self.dim))
    }

    pub fn has_quadratic(&self) -> bool {
        self.quadratic.is_some()
    }

    /// Open box of the domain, if any.
    pub fn domain_box(&self) -> Option<(Vector, Vector)> {
        self.residual.domain()
    }

    pub fn in_domain(&self, x: &Vector) -> bool {
        self.residual.check_domain(x).is_ok()
    }

    /// Center of the domain box, or the origin.
    pub fn center(&self) -> Vector {
        match self.domain_box() {
            Some((lo, hi)) => (lo + hi) * 0.5,
            None => Vector::zeros(self.dim),
        }
    }

    /// Lower bound on the strong convexity modulus.
    pub fn strong_convexity(&self) -> f64 {
        let q = self.quadratic.as_ref().map(numerics::sym_min_eig).unwrap_or(0.0);
        q.max(0.0) + if self.residual.is_none() { 0.0 } else { self.sector.m }
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!("expected a vector of length {}, got {}", self.dim, x.len())));
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        let mut v = self.residual.value(x)?;
        if let Some(q) = &self.quadratic {
            v += 0.5 * x.dot(&(q * x));
        }
        if let Some(c) = &self.linear {
            v += c.dot(x);
        }
        Ok(v)
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        let mut g = self.residual.gradient(x)?;
        if let Some(q) = &self.quadratic {
            g += q * x;
        }
        if let Some(c) = &self.linear {
            g += c;
        }
        Ok(g)
    }

    /// Gradient of the residual alone (the sector-bounded nonlinearity).
    pub fn residual_gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        self.residual.gradient(x)
    }

    pub fn hessian(&self, x: &Vector) -> Result<Matrix> {
        self.check_dim(x)?;
        let mut h = self.residual.hessian(x)?;
        if let Some(q) = &self.quadratic {
            h += q;
        }
        Ok(h)
    }

    /// The same function multiplied by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(invalid("scale must be positive"));
        }
        Ok(Self {
            dim: self.dim,
            quadratic: self.quadratic.as_ref().map(|q| q * alpha),
            linear: self.linear.as_ref().map(|c| c * alpha),
            residual: self.residual.scaled(alpha)?,
            sector: Sector {
                m: self.sector.m * alpha,
                l: self.sector.l * alpha,
                region: self.sector.region.clone(),
            },
        })
    }

    /// Box over which the sector check samples.
    pub fn sector_region(&self) -> (Vector, Vector) {
        if let Some(r) = &self.sector.region {
            return r.clone();
        }
        if let Some((lo, hi)) = self.domain_box() {
            let pad = (&hi - &lo) * 1e-3;
            return (lo + &pad, hi - pad);
        }
        (Vector::from_element(self.dim, -10.0), Vector::from_element(self.dim, 10.0))
    }

    /// Sample pairs inside the sector region and evaluate the incremental
    /// sector form of the residual gradient.
    pub fn check_sector(&self, pairs: usize, seed: u64) -> Result<SectorCheck> {
        let core = self.sector.class().core(self.sector.m, self.sector.l)?;
        let (lo, hi) = self.sector_region();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = |rng: &mut ChaCha8Rng| {
            Vector::from_fn(self.dim, |k, _| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>())
        };
        let mut min_form = f64::INFINITY;
        for _ in 0..pairs {
            let q1 = sample(&mut rng);
            let q2 = sample(&mut rng);
            let dp = self.residual_gradient(&q1)? - self.residual_gradient(&q2)?;
            let dq = q1 - q2;
            let denom = dp.norm_squared() + dq.norm_squared();
            if denom == 0.0 {
                continue;
            }
            let form = core[(0, 0)] * dp.norm_squared()
                + 2.0 * core[(0, 1)] * dp.dot(&dq)
                + core[(1, 1)] * dq.norm_squared();
            min_form = min_form.min(form / denom);
        }
        Ok(SectorCheck {
            pairs,
            min_normalized_form: min_form,
        })
    }
}

/// `N = H_z G_u + H_u` and `N~ = H_z G_w + H_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGains {
    pub n: Matrix,
    pub n_tilde: Matrix,
}

impl ConstraintGains {
    pub fn new(prob: &OssProblem, gains: &DcGains) -> Self {
        Self {
            n: &prob.h_z * &gains.g_u + &prob.h_u,
            n_tilde: &prob.h_z * &gains.g_w + &prob.h_w,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OssProblem {
    pub f0: ConvexFunction,
    pub g0: ConvexFunction,
    pub h_z: Matrix,
    pub h_u: Matrix,
    pub h_w: Matrix,
    pub disturbance_box: Option<(Vector, Vector)>,
}

impl OssProblem {
    pub fn new(
        f0: ConvexFunction,
        g0: ConvexFunction,
        h_z: Matrix,
        h_u: Matrix,
        h_w: Matrix,
        disturbance_box: Option<(Vector, Vector)>,
    ) -> Result<Self> {
        let n_c = h_z.nrows();
        if h_z.ncols() != g0.dim() {
            return Err(invalid(format!("H_z must have {} columns", g0.dim())));
        }
        if h_u.shape() != (n_c, f0.dim()) {
            return Err(invalid(format!("H_u must be {}x{}", n_c, f0.dim())));
        }
        if h_w.nrows() != n_c {
            return Err(invalid(format!("H_w must have {n_c} rows")));
        }
        if n_c > f0.dim() {
            return Err(invalid(format!(
                "{n_c} engineering constraints exceed the {} inputs",
                f0.dim()
            )));
        }
        if let Some((lo, hi)) = &disturbance_box {
            if lo.len() != h_w.ncols() || hi.len() != h_w.ncols() || (0..lo.len()).any(|k| lo[k] > hi[k]) {
                return Err(invalid("disturbance box does not match H_w"));
            }
        }
        Ok(Self {
            f0,
            g0,
            h_z,
            h_u,
            h_w,
            disturbance_box,
        })
    }

    /// Problem without engineering constraints.
    pub fn unconstrained(f0: ConvexFunction, g0: ConvexFunction, n_w: usize) -> Result<Self> {
        let (m, r) = (f0.dim(), g0.dim());
        Self::new(f0, g0, Matrix::zeros(0, r), Matrix::zeros(0, m), Matrix::zeros(0, n_w), None)
    }

    pub fn inputs(&self) -> usize {
        self.f0.dim()
    }
    pub fn outputs(&self) -> usize {
        self.g0.dim()
    }
    pub fn constraints(&self) -> usize {
        self.h_z.nrows()
    }
    pub fn disturbances(&self) -> usize {
        self.h_w.ncols()
    }

    /// Dimension check against a plant's DC gains.
    pub fn check_compatible(&self, gains: &DcGains) -> Result<()> {
        if gains.inputs() != self.inputs() || gains.outputs() != self.outputs() || gains.disturbances() != self.disturbances() {
            return Err(invalid(format!(
                "problem dimensions (m={}, r={}, n_w={}) do not match plant (m={}, r={}, n_w={})",
                self.inputs(),
                self.outputs(),
                self.disturbances(),
                gains.inputs(),
                gains.outputs(),
                gains.disturbances()
            )));
        }
        Ok(())
    }

    /// Engineering constraint violation `H_z z + H_u u + H_w w`.
    pub fn constraint_violation(&self, z: &Vector, u: &Vector, w: &Vector) -> Vector {
        &self.h_z * z + &self.h_u * u + &self.h_w * w
    }

    pub fn objective(&self, u: &Vector, z: &Vector) -> Result<f64> {
        Ok(self.f0.value(u)? + self.g0.value(z)?)
    }

    /// The same problem with both objectives multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Ok(Self {
            f0: self.f0.scaled(alpha)?,
            g0: self.g0.scaled(alpha)?,
            ..self.clone()
        })
    }

    pub fn validate_sectors(&self, pairs: usize, seed: u64) -> Result<(SectorCheck, SectorCheck)> {
        Ok((self.f0.check_sector(pairs, seed)?, self.g0.check_sector(pairs, seed.wrapping_add(1))?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint {
    pub u_star: Vector,
    pub z_star: Vector,
    pub mu_star: Vector,
    pub stationarity_residual: f64,
    pub feasibility_residual: f64,
}

/// `(grad f0(u) + G_u' grad g0(z) + N' mu, H_z z + H_u u + H_w w)`.
pub fn kkt_vectors(prob: &OssProblem, gains: &DcGains, u: &Vector, z: &Vector, mu: &Vector, w: &Vector) -> Result<(Vector, Vector)> {
    let n = &prob.h_z * &gains.g_u + &prob.h_u;
    if mu.len() != n.nrows() {
        return Err(invalid(format!("multiplier must have length {}", n.nrows())));
    }
    let stat = prob.f0.gradient(u)? + gains.g_u.transpose() * prob.g0.gradient(z)? + n.transpose() * mu;
    let feas = prob.constraint_violation(z, u, w);
    Ok((stat, feas))
}

/// Euclidean norms of the stationarity and feasibility residuals.
pub fn kkt_residual(prob: &OssProblem, gains: &DcGains, u: &Vector, z: &Vector, mu: &Vector, w: &Vector) -> Result<(f64, f64)> {
    let (s, f) = kkt_vectors(prob, gains, u, z, mu, w)?;
    Ok((s.norm(), f.norm()))
}

/// Multiplier minimizing the stationarity residual at `(u, z)`.
pub fn least_squares_multiplier(prob: &OssProblem, gains: &DcGains, u: &Vector, z: &Vector) -> Result<Vector> {
    let n = &prob.h_z * &gains.g_u + &prob.h_u;
    if n.nrows() == 0 {
        return Ok(Vector::zeros(0));
    }
    let g = prob.f0.gradient(u)? + gains.g_u.transpose() * prob.g0.gradient(z)?;
    Ok(-(numerics::pseudoinverse(&n.transpose())? * g))
}

/// Solves `grad c(u) = xi` by damped Newton from the center of the domain.
pub fn grad_inverse(c: &ConvexFunction, xi: &Vector) -> Result<Vector> {
    if xi.len() != c.dim() {
        return Err(invalid(format!("expected a vector of length {}", c.dim())));
    }
    if !(c.strong_convexity() > 0.0) {
        return Err(Error::Precondition("gradient inversion needs a strongly convex function".into()));
    }
    let opts = NewtonOptions {
        tol: 1e-10,
        max_iter: 500,
        bounds: c.domain_box(),
    };
    let x0 = c.center();
    numerics::newton_solve(
        |u| {
            let g = c.gradient(u)? - xi;
            Ok((g, c.hessian(u)?))
        },
        &x0,
        &opts,
    )
}

/// Strictly feasible `xi` for the reduced variables, i.e. `T_u xi + u0` in
/// the domain of `f0` and `T_z xi + z0` in the domain of `g0`.
fn feasible_start(prob: &OssProblem, t_u: &Matrix, t_z: &Matrix, u0: &Vector, z0: &Vector) -> Result<Vector> {
    let q = t_u.ncols();
    let fbox = prob.f0.domain_box();
    let gbox = prob.g0.domain_box();
    if fbox.is_none() && gbox.is_none() {
        return Ok(Vector::zeros(q));
    }
    // Project the domain centers onto the affine feasible set first.
    let mut rows: Vec<&Matrix> = vec![];
    let mut rhs: Vec<Vector> = vec![];
    if fbox.is_some() {
        rows.push(t_u);
        rhs.push(prob.f0.center() - u0);
    }
    if gbox.is_some() {
        rows.push(t_z);
        rhs.push(prob.g0.center() - z0);
    }
    let stacked = numerics::vstack(&rows);
    let target = Vector::from_iterator(rhs.iter().map(|v| v.len()).sum(), rhs.iter().flat_map(|v| v.iter().copied()));
    let xi = if q == 0 {
        Vector::zeros(0)
    } else {
        numerics::pseudoinverse(&stacked)? * target
    };
    let inside = |xi: &Vector| {
        prob.f0.in_domain(&(t_u * xi + u0)) && prob.g0.in_domain(&(t_z * xi + z0))
    };
    if inside(&xi) {
        return Ok(xi);
    }
    if q == 0 {
        return Err(Error::Infeasible("the unique constraint solution lies outside the objective domain".into()));
    }
    // Maximize the normalized distance to the box faces (an LP).
    let mut a_rows = vec![];
    let mut b_vals = vec![];
    let mut push_box = |t: &Matrix, off: &Vector, bx: &Option<(Vector, Vector)>| {
        if let Some((lo, hi)) = bx {
            for k in 0..off.len() {
                let half = 0.5 * (hi[k] - lo[k]);
                // (t_k xi + off_k - lo_k) / half - s >= 0 and (hi_k - t_k xi - off_k) / half - s >= 0
                a_rows.push((t.row(k).transpose() / half, -1.0));
                b_vals.push((off[k] - lo[k]) / half);
                a_rows.push((-t.row(k).transpose() / half, -1.0));
                b_vals.push((hi[k] - off[k]) / half);
            }
        }
    };
    push_box(t_u, u0, &fbox);
    push_box(t_z, z0, &gbox);
    let nvar = q + 1;
    let mut lp = sdp::SdpProblem::new(nvar);
    for ((row, s_coef), b) in a_rows.into_iter().zip(b_vals) {
        let mut coeffs = row.iter().copied().collect::<Vec<_>>();
        coeffs.push(s_coef);
        lp.add_linear_inequality(&coeffs, b)?;
    }
    // s <= 1 keeps the LP bounded.
    let mut cap = vec![0.0; nvar];
    cap[q] = -1.0;
    lp.add_linear_inequality(&cap, 1.0)?;
    let mut obj = vec![0.0; nvar];
    obj[q] = -1.0;
    lp.set_objective(&obj)?;
    lp.set_variable_bound(1e6);
    let sol = sdp::solve_sdp(&lp, 1e-8);
    match sol.status {
        sdp::SdpStatus::Optimal => {
            let s = sol.x[q];
            if s <= 1e-9 {
                return Err(Error::Infeasible("no strictly feasible point inside the objective domains".into()));
            }
            let xi = sol.x.rows(0, q).into_owned();
            if inside(&xi) {
                Ok(xi)
            } else {
                Err(Error::Infeasible("phase-one point left the objective domains".into()))
            }
        }
        _ => Err(Error::Infeasible("no strictly feasible point inside the objective domains".into())),
    }
}

/// Reference optimizer: damped Newton on the stationarity condition of the
/// problem reduced to the feasible subspace, then least squares for the
/// multiplier.
pub fn solve_reference(prob: &OssProblem, gains: &DcGains, w: &Vector) -> Result<KktPoint> {
    prob.check_compatible(gains)?;
    if w.len() != prob.disturbances() {
        return Err(invalid(format!("disturbance must have length {}", prob.disturbances())));
    }
    let fs = FeasibleSubspace::build_allow_trivial(gains, prob)?;
    let (u0, z0) = (fs.u0(w), fs.z0(w));
    // The particular solution must satisfy the stacked constraints.
    let resid = (&z0 - gains.steady_output(&u0, w)).norm() + prob.constraint_violation(&z0, &u0, w).norm();
    let scale = 1.0 + w.norm() * (gains.g_w.norm() + prob.h_w.norm()) + u0.norm() * gains.g_u.norm();
    if resid > 1e-8 * scale {
        return Err(Error::Infeasible(format!(
            "the steady-state and engineering constraints are inconsistent (residual {resid:.3e})"
        )));
    }
    let t_u = fs.t_u.clone();
    let t_z = fs.t_z.clone();
    let xi0 = feasible_start(prob, &t_u, &t_z, &u0, &z0)?;
    let xi = if fs.q() == 0 {
        xi0
    } else {
        let opts = NewtonOptions {
            tol: 1e-11,
            max_iter: 500,
            bounds: None,
        };
        numerics::newton_solve(
            |xi| {
                let u = &t_u * xi + &u0;
                let z = &t_z * xi + &z0;
                let g = t_u.transpose() * prob.f0.gradient(&u)? + t_z.transpose() * prob.g0.gradient(&z)?;
                let h = t_u.transpose() * prob.f0.hessian(&u)? * &t_u + t_z.transpose() * prob.g0.hessian(&z)? * &t_z;
                Ok((g, h))
            },
            &xi0,
            &opts,
        )?
    };
    let u_star = &t_u * &xi + &u0;
    let z_star = gains.steady_output(&u_star, w);
    let mu_star = least_squares_multiplier(prob, gains, &u_star, &z_star)?;
    let (stationarity_residual, feasibility_residual) = kkt_residual(prob, gains, &u_star, &z_star, &mu_star, w)?;
    Ok(KktPoint {
        u_star,
        z_star,
        mu_star,
        stationarity_residual,
        feasibility_residual,
    })
}
