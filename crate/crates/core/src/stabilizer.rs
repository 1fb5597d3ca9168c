//! Controllers whose equilibria solve the steady-state program: primal-dual
//! gradient flow, gradient-inversion with a dual integrator, the two-loop
//! feasible-subspace design and a static gain on the feasible-subspace
//! integrators.
//!
//! Each controller is an ODE right-hand side in its own state plus an output
//! map producing `u`.

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::optimality::{om2_error, FeasibleSubspace};
use crate::plant::DcGains;
pub use crate::problem::ConstraintGains;
use crate::problem::{self, grad_inverse, OssProblem};

/// Residual bound for the two-loop gain identities.
pub const GAIN_TOL: f64 = 1e-10;

/// Data shared by every controller: problem, DC gains, constraint gains and
/// the feasible subspace (when it exists).
#[derive(Debug, Clone)]
pub struct ControlContext {
    pub prob: OssProblem,
    pub gains: DcGains,
    pub cg: ConstraintGains,
    pub fs: Option<FeasibleSubspace>,
}

impl ControlContext {
    pub fn new(prob: OssProblem, gains: DcGains, fs: Option<FeasibleSubspace>) -> Result<Self> {
        prob.check_compatible(&gains)?;
        let cg = ConstraintGains::new(&prob, &gains);
        Ok(Self { prob, gains, cg, fs })
    }

    /// Builds the canonical subspace when none is given.
    pub fn with_canonical_subspace(prob: OssProblem, gains: DcGains) -> Result<Self> {
        let fs = FeasibleSubspace::build(&gains, &prob)?;
        Self::new(prob, gains, Some(fs))
    }

    fn subspace(&self) -> Result<&FeasibleSubspace> {
        self.fs
            .as_ref()
            .ok_or_else(|| Error::Precondition("controller needs a feasible subspace".into()))
    }

    fn require_full_row_rank_n(&self) -> Result<()> {
        if self.cg.n.nrows() > 0 && !numerics::has_full_row_rank(&self.cg.n)? {
            return Err(Error::Precondition("N = H_z G_u + H_u must have full row rank".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualController {
    pub tau_p: f64,
    pub tau_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionController {
    pub tau: f64,
}

/// Gains of the two-loop controller `u = K1 eta1 + K2 eta2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLoopGains {
    pub k1: Matrix,
    pub k2: Matrix,
    pub pi_c: Matrix,
    pub p: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLoopController {
    pub gains: TwoLoopGains,
    pub tau1: f64,
    pub tau2: f64,
}

/// `u = K col(eta1, eta2)` with one time constant.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGainController {
    pub k: Matrix,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum K2Choice {
    /// `K2 = N^+`.
    PseudoInverse,
    Custom(Matrix),
}

fn check_tau(name: &str, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid(format!("{name} must be a positive time constant")));
    }
    Ok(())
}

/// `(u', mu')` of the primal-dual flow at measured `z`.
pub fn primal_dual_rhs(c: &PrimalDualController, ctx: &ControlContext, u: &Vector, mu: &Vector, z: &Vector, w: &Vector) -> Result<(Vector, Vector)> {
    let (stat, viol) = problem::kkt_vectors(&ctx.prob, &ctx.gains, u, z, mu, w)?;
    Ok((-stat / c.tau_p, viol / c.tau_d))
}

/// `u = (grad f0)^-1(-G_u' grad g0(z) - N' mu)`.
pub fn inversion_output(ctx: &ControlContext, mu: &Vector, z: &Vector) -> Result<Vector> {
    let xi = -(ctx.gains.g_u.transpose() * ctx.prob.g0.gradient(z)?) - ctx.cg.n.transpose() * mu;
    grad_inverse(&ctx.prob.f0, &xi)
}

/// Two-loop gains: `K2` (default `N^+`), `Pi_c = I - K2 (N K2)^-1 N` and
/// `K1` solving `Pi_c K1 = T_u P`, minimum-norm unless supplied.
pub fn two_loop_gains(fs: &FeasibleSubspace, cg: &ConstraintGains, p: &Matrix, k2_choice: K2Choice, k1: Option<Matrix>) -> Result<TwoLoopGains> {
    let m = fs.t_u.nrows();
    let q = fs.q();
    let n_c = cg.n.nrows();
    if cg.n.ncols() != m {
        return Err(invalid("constraint gain N does not match the subspace"));
    }
    if n_c > 0 && !numerics::has_full_row_rank(&cg.n)? {
        return Err(Error::Precondition("N must have full row rank".into()));
    }
    if p.shape() != (q, q) || (p - p.transpose()).amax() > 1e-12 * p.amax().max(1.0) || numerics::sym_min_eig(p) <= 0.0 {
        return Err(invalid(format!("P must be a symmetric positive definite {q}x{q} matrix")));
    }
    let k2 = match k2_choice {
        K2Choice::PseudoInverse => numerics::pseudoinverse(&cg.n)?,
        K2Choice::Custom(k) => {
            if k.shape() != (m, n_c) {
                return Err(invalid(format!("K2 must be {m}x{n_c}")));
            }
            k
        }
    };
    let nk2 = &cg.n * &k2;
    if n_c > 0 && !numerics::is_hurwitz(&(-&nk2))? {
        return Err(Error::GainChoice("-N K2 is not Hurwitz".into()));
    }
    let pi_c = if n_c == 0 {
        Matrix::identity(m, m)
    } else {
        let (inv, _) = numerics::inverse_with_condition(&nk2)?;
        Matrix::identity(m, m) - &k2 * inv * &cg.n
    };
    let target = &fs.t_u * p;
    let k1 = match k1 {
        Some(k) => {
            if k.shape() != (m, q) {
                return Err(invalid(format!("K1 must be {m}x{q}")));
            }
            k
        }
        None => numerics::pseudoinverse_tol(&pi_c, GAIN_TOL)? * &target,
    };
    let resid = (&pi_c * &k1 - &target).amax();
    if resid > GAIN_TOL * target.amax().max(1.0) {
        return Err(Error::InternalConsistency(format!("Pi_c K1 = T_u P fails with residual {resid:.3e}")));
    }
    if !numerics::has_full_column_rank(&k1)? {
        return Err(Error::InternalConsistency("K1 lacks full column rank".into()));
    }
    Ok(TwoLoopGains { k1, k2, pi_c, p: p.clone() })
}

impl TwoLoopGains {
    /// `[K1 K2]`.
    pub fn stacked(&self) -> Matrix {
        numerics::hstack(&[&self.k1, &self.k2])
    }

    pub fn output(&self, eta1: &Vector, eta2: &Vector) -> Vector {
        &self.k1 * eta1 + &self.k2 * eta2
    }
}

/// `(eta1', eta2') = (-e1 / tau1, -e2 / tau2)`.
pub fn two_loop_rhs(c: &TwoLoopController, fs: &FeasibleSubspace, prob: &OssProblem, z: &Vector, u: &Vector, w: &Vector) -> Result<(Vector, Vector)> {
    let (e1, e2) = om2_error(fs, prob, z, u, w)?;
    Ok((-e1 / c.tau1, -e2 / c.tau2))
}

/// `eta' = -col(e1, e2) / tau`.
pub fn static_gain_rhs(c: &StaticGainController, fs: &FeasibleSubspace, prob: &OssProblem, z: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
    let (e1, e2) = om2_error(fs, prob, z, u, w)?;
    Ok(Vector::from_iterator(e1.len() + e2.len(), e1.iter().chain(e2.iter()).map(|v| -v / c.tau)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    PrimalDual(PrimalDualController),
    Inversion(InversionController),
    TwoLoop(TwoLoopController),
    StaticGain(StaticGainController),
}

impl Controller {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Controller::PrimalDual(_) => "primal-dual",
            Controller::Inversion(_) => "inversion",
            Controller::TwoLoop(_) => "two-loop",
            Controller::StaticGain(_) => "static-gain",
        }
    }

    /// Checks preconditions against the context.
    pub fn validate(&self, ctx: &ControlContext) -> Result<()> {
        let m = ctx.prob.inputs();
        let n_c = ctx.prob.constraints();
        match self {
            Controller::PrimalDual(c) => {
                check_tau("tau_p", c.tau_p)?;
                check_tau("tau_d", c.tau_d)?;
                ctx.require_full_row_rank_n()
            }
            Controller::Inversion(c) => {
                check_tau("tau", c.tau)?;
                ctx.require_full_row_rank_n()?;
                if !(ctx.prob.f0.strong_convexity() > 0.0) {
                    return Err(Error::Precondition("inversion needs a strongly convex f0".into()));
                }
                Ok(())
            }
            Controller::TwoLoop(c) => {
                check_tau("tau1", c.tau1)?;
                check_tau("tau2", c.tau2)?;
                let q = ctx.subspace()?.q();
                if c.gains.k1.shape() != (m, q) || c.gains.k2.shape() != (m, n_c) {
                    return Err(invalid("two-loop gain shapes do not match the problem"));
                }
                Ok(())
            }
            Controller::StaticGain(c) => {
                check_tau("tau", c.tau)?;
                let q = ctx.subspace()?.q();
                if c.k.shape() != (m, q + n_c) {
                    return Err(invalid(format!("static gain must be {m}x{}", q + n_c)));
                }
                Ok(())
            }
        }
    }

    /// Whether `u` depends on the measured output, which needs `D = 0`.
    pub fn output_uses_measurement(&self) -> bool {
        matches!(self, Controller::Inversion(_))
    }

    pub fn state_dim(&self, ctx: &ControlContext) -> usize {
        let m = ctx.prob.inputs();
        let n_c = ctx.prob.constraints();
        let q = ctx.fs.as_ref().map(|f| f.q()).unwrap_or(0);
        match self {
            Controller::PrimalDual(_) => m + n_c,
            Controller::Inversion(_) => n_c,
            Controller::TwoLoop(_) | Controller::StaticGain(_) => q + n_c,
        }
    }

    /// `mu = 0`, `eta = 0`, primal-dual `u` at the center of the f0 domain.
    pub fn initial_state(&self, ctx: &ControlContext) -> Vector {
        let mut x = Vector::zeros(self.state_dim(ctx));
        if let Controller::PrimalDual(_) = self {
            let c = ctx.prob.f0.center();
            x.rows_mut(0, c.len()).copy_from(&c);
        }
        x
    }

    /// Control input. `z` is the measured output; for the inversion
    /// controller it must not depend on `u`.
    pub fn output(&self, ctx: &ControlContext, xc: &Vector, z: &Vector) -> Result<Vector> {
        let m = ctx.prob.inputs();
        match self {
            Controller::PrimalDual(_) => Ok(xc.rows(0, m).into_owned()),
            Controller::Inversion(_) => inversion_output(ctx, xc, z),
            Controller::TwoLoop(c) => {
                let q = c.gains.k1.ncols();
                Ok(c.gains.output(&xc.rows(0, q).into_owned(), &xc.rows(q, xc.len() - q).into_owned()))
            }
            Controller::StaticGain(c) => Ok(&c.k * xc),
        }
    }

    pub fn derivative(&self, ctx: &ControlContext, xc: &Vector, z: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
        let m = ctx.prob.inputs();
        match self {
            Controller::PrimalDual(c) => {
                let mu = xc.rows(m, xc.len() - m).into_owned();
                let (du, dmu) = primal_dual_rhs(c, ctx, u, &mu, z, w)?;
                Ok(concat(&du, &dmu))
            }
            Controller::Inversion(c) => Ok(ctx.prob.constraint_violation(z, u, w) / c.tau),
            Controller::TwoLoop(c) => {
                let (d1, d2) = two_loop_rhs(c, ctx.subspace()?, &ctx.prob, z, u, w)?;
                Ok(concat(&d1, &d2))
            }
            Controller::StaticGain(c) => static_gain_rhs(c, ctx.subspace()?, &ctx.prob, z, u, w),
        }
    }

    /// Multiplier estimate used for KKT residuals: the dual state when the
    /// controller has one, least squares otherwise.
    pub fn multiplier(&self, ctx: &ControlContext, xc: &Vector, u: &Vector, z: &Vector) -> Result<Vector> {
        let m = ctx.prob.inputs();
        match self {
            Controller::PrimalDual(_) => Ok(xc.rows(m, xc.len() - m).into_owned()),
            Controller::Inversion(_) => Ok(xc.clone()),
            _ => problem::least_squares_multiplier(&ctx.prob, &ctx.gains, u, z),
        }
    }
}

fn concat(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{generate_stable_plant, GeneratorOptions};
    use crate::problem::{solve_reference, ConvexFunction, Sector, SmoothResidual};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded_context(seed: u64) -> ControlContext {
        let plant = generate_stable_plant(seed, 12, 4, 5, 3, &GeneratorOptions::default()).unwrap();
        let gains = plant.dc_gains().unwrap();
        let f0 = ConvexFunction::half_norm_squared(4)
            .with_residual(
                SmoothResidual::LogBarrier {
                    lower: Vector::from_element(4, -5.0),
                    upper: Vector::from_element(4, 5.0),
                    weight: 0.01,
                },
                Sector::default(),
            )
            .unwrap();
        let mut h_z = Matrix::zeros(2, 5);
        h_z[(0, 0)] = 1.0;
        h_z[(1, 1)] = 1.0;
        let mut h_w = Matrix::zeros(2, 3);
        h_w[(0, 0)] = -1.0;
        h_w[(1, 1)] = -1.0;
        let prob = OssProblem::new(f0, ConvexFunction::half_norm_squared(5), h_z, Matrix::zeros(2, 4), h_w, None).unwrap();
        ControlContext::with_canonical_subspace(prob, gains).unwrap()
    }

    #[test]
    fn controllers_are_stationary_at_the_oracle() {
        let ctx = seeded_context(1);
        let w = Vector::from_vec(vec![0.3, -0.2, 0.5]);
        let kkt = solve_reference(&ctx.prob, &ctx.gains, &w).unwrap();
        let pd = PrimalDualController { tau_p: 2.0, tau_d: 2.0 };
        let (du, dmu) = primal_dual_rhs(&pd, &ctx, &kkt.u_star, &kkt.mu_star, &kkt.z_star, &w).unwrap();
        assert!(du.norm() < 1e-8 && dmu.norm() < 1e-8);
        let u = inversion_output(&ctx, &kkt.mu_star, &kkt.z_star).unwrap();
        assert!((u - &kkt.u_star).norm() < 1e-6);
        let fs = ctx.fs.as_ref().unwrap();
        let gains = two_loop_gains(fs, &ctx.cg, &Matrix::identity(2, 2), K2Choice::PseudoInverse, None).unwrap();
        let tl = TwoLoopController { gains, tau1: 5.0, tau2: 1.0 };
        let (d1, d2) = two_loop_rhs(&tl, fs, &ctx.prob, &kkt.z_star, &kkt.u_star, &w).unwrap();
        assert!(d1.norm() < 1e-8 && d2.norm() < 1e-8);
    }

    #[test]
    fn primal_dual_without_constraints_is_gradient_flow() {
        let gains = DcGains::from_matrices(Matrix::identity(2, 2), Matrix::zeros(2, 1)).unwrap();
        let prob = OssProblem::unconstrained(ConvexFunction::half_norm_squared(2), ConvexFunction::zero(2), 1).unwrap();
        let ctx = ControlContext::new(prob, gains, None).unwrap();
        let c = PrimalDualController { tau_p: 4.0, tau_d: 1.0 };
        let u = Vector::from_vec(vec![1.0, -2.0]);
        let (du, dmu) = primal_dual_rhs(&c, &ctx, &u, &Vector::zeros(0), &u, &Vector::zeros(1)).unwrap();
        assert!((du + &u / 4.0).norm() < 1e-15);
        assert_eq!(dmu.len(), 0);
    }

    #[test]
    fn inversion_of_half_norm_at_zero_multiplier() {
        let gains = DcGains::from_matrices(Matrix::identity(2, 2), Matrix::zeros(2, 1)).unwrap();
        let prob = OssProblem::unconstrained(ConvexFunction::half_norm_squared(2), ConvexFunction::zero(2), 1).unwrap();
        let ctx = ControlContext::new(prob, gains, None).unwrap();
        let u = inversion_output(&ctx, &Vector::zeros(0), &Vector::from_vec(vec![3.0, 1.0])).unwrap();
        assert!(u.norm() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_k2_gives_identity_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = Matrix::from_fn(2, 4, |_, _| rng.random::<f64>() - 0.5);
        let k2 = numerics::pseudoinverse(&n).unwrap();
        let nk2 = -(&n * &k2);
        assert!((&nk2 + Matrix::identity(2, 2)).norm() < 1e-12);
        assert!(numerics::is_hurwitz(&nk2).unwrap());
    }

    #[test]
    fn non_hurwitz_k2_is_rejected() {
        let ctx = seeded_context(2);
        let fs = ctx.fs.as_ref().unwrap();
        let bad = -numerics::pseudoinverse(&ctx.cg.n).unwrap();
        let r = two_loop_gains(fs, &ctx.cg, &Matrix::identity(2, 2), K2Choice::Custom(bad), None);
        assert!(matches!(r, Err(Error::GainChoice(_))));
    }

    #[test]
    fn frequency_gain_closed_forms() {
        // N = 1', ring Laplacian with m = 4, T_u = first three columns of L.
        let m = 4;
        let mut l = Matrix::zeros(m, m);
        for i in 0..m {
            let j = (i + 1) % m;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        let ones = Matrix::from_element(1, m, 1.0);
        let cg = ConstraintGains { n: ones.clone(), n_tilde: Matrix::zeros(1, 1) };
        let beta = 1.0;
        let gains = DcGains::from_matrices(Matrix::from_element(m, m, 1.0 / beta), Matrix::from_element(m, 1, -1.0 / beta)).unwrap();
        let mut h_z = Matrix::zeros(1, m);
        h_z[(0, m - 1)] = beta;
        let prob = OssProblem::new(ConvexFunction::half_norm_squared(m), ConvexFunction::zero(m), h_z, Matrix::zeros(1, m), Matrix::zeros(1, 1), None).unwrap();
        let t_u = l.columns(0, m - 1).into_owned();
        let fs = FeasibleSubspace::with_basis(&gains, &prob, Matrix::zeros(m, m - 1), t_u).unwrap();
        let l11 = l.view((0, 0), (m - 1, m - 1)).into_owned();
        let p = l11.try_inverse().unwrap();
        let mut e_m = Matrix::zeros(m, 1);
        e_m[(m - 1, 0)] = 1.0;
        let mut k1 = Matrix::zeros(m, m - 1);
        k1.view_mut((0, 0), (m - 1, m - 1)).copy_from(&Matrix::identity(m - 1, m - 1));
        let g = two_loop_gains(&fs, &cg, &((&p + p.transpose()) * 0.5), K2Choice::Custom(e_m.clone()), Some(k1.clone())).unwrap();
        assert_eq!(g.pi_c, Matrix::identity(m, m) - &e_m * &ones);
        assert_eq!(g.k1, k1);
    }

    #[test]
    fn static_gain_matches_two_loop_with_equal_time_constants() {
        let ctx = seeded_context(3);
        let fs = ctx.fs.as_ref().unwrap();
        let gains = two_loop_gains(fs, &ctx.cg, &Matrix::identity(2, 2), K2Choice::PseudoInverse, None).unwrap();
        let tl = Controller::TwoLoop(TwoLoopController { gains: gains.clone(), tau1: 3.0, tau2: 3.0 });
        let sg = Controller::StaticGain(StaticGainController { k: gains.stacked(), tau: 3.0 });
        let xc = Vector::from_vec(vec![0.1, -0.2, 0.3, 0.05]);
        let z = Vector::from_fn(5, |i, _| i as f64 * 0.1);
        let w = Vector::from_vec(vec![0.2, 0.1, -0.3]);
        let u1 = tl.output(&ctx, &xc, &z).unwrap();
        let u2 = sg.output(&ctx, &xc, &z).unwrap();
        assert!((&u1 - &u2).norm() < 1e-15);
        let d1 = tl.derivative(&ctx, &xc, &z, &u1, &w).unwrap();
        let d2 = sg.derivative(&ctx, &xc, &z, &u2, &w).unwrap();
        assert!((d1 - d2).norm() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn two_loop_algebra(seed in 0u64..100_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = rng.random_range(2..6usize);
                let r = rng.random_range(1..6usize);
                let n_c = rng.random_range(1..m);
                let n_w = 2;
                let gains = DcGains::from_matrices(
                    Matrix::from_fn(r, m, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                    Matrix::from_fn(r, n_w, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                ).unwrap();
                let prob = OssProblem::new(
                    ConvexFunction::half_norm_squared(m),
                    ConvexFunction::zero(r),
                    Matrix::from_fn(n_c, r, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                    Matrix::from_fn(n_c, m, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                    Matrix::zeros(n_c, n_w),
                    None,
                ).unwrap();
                let ctx = ControlContext::with_canonical_subspace(prob, gains).unwrap();
                prop_assume!(numerics::has_full_row_rank(&ctx.cg.n).unwrap());
                let fs = ctx.fs.as_ref().unwrap();
                let q = fs.q();
                let a = Matrix::from_fn(q, q, |_, _| rng.random::<f64>() - 0.5);
                let p = &a * a.transpose() + Matrix::identity(q, q);
                let g = two_loop_gains(fs, &ctx.cg, &p, K2Choice::PseudoInverse, None).unwrap();
                prop_assert!((&g.pi_c * &g.pi_c - &g.pi_c).amax() <= GAIN_TOL);
                prop_assert!((&g.pi_c * &g.k1 - &fs.t_u * &p).amax() <= GAIN_TOL * p.amax().max(1.0));
                prop_assert!((&ctx.cg.n * &fs.t_u).amax() <= GAIN_TOL);
                prop_assert!(numerics::is_hurwitz(&(-(&ctx.cg.n * &g.k2))).unwrap());
            }
        }
    }
}
