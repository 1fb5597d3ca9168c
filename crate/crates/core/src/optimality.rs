//! Optimality models: the dual-integrator model (error `e` plus multiplier
//! state) and the feasible-subspace model (errors `e1`, `e2` without a dual
//! state), together with the subspace basis `T` and the rank properties of
//! its blocks.

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::plant::DcGains;
use crate::problem::OssProblem;

/// Defining tolerance of the basis equations.
pub const BASIS_TOL: f64 = 1e-10;

/// `[I, -G_u; H_z, H_u]`.
pub fn stacked_constraint_matrix(gains: &DcGains, prob: &OssProblem) -> Matrix {
    let (r, m, n_c) = (gains.outputs(), gains.inputs(), prob.constraints());
    let mut s = Matrix::zeros(r + n_c, r + m);
    s.view_mut((0, 0), (r, r)).copy_from(&Matrix::identity(r, r));
    s.view_mut((0, r), (r, m)).copy_from(&(-&gains.g_u));
    s.view_mut((r, 0), (n_c, r)).copy_from(&prob.h_z);
    s.view_mut((r, r), (n_c, m)).copy_from(&prob.h_u);
    s
}

/// `[G_w; -H_w]`.
fn stacked_disturbance_matrix(gains: &DcGains, prob: &OssProblem) -> Matrix {
    numerics::vstack(&[&gains.g_w, &(-&prob.h_w)])
}

/// Parametrization `(z, u) = T xi + (z0(w), u0(w))` of the steady states
/// satisfying the engineering constraints.
#[derive(Debug, Clone)]
pub struct FeasibleSubspace {
    pub t_z: Matrix,
    pub t_u: Matrix,
    z0_map: Matrix,
    u0_map: Matrix,
    pub warnings: Vec<String>,
}

impl FeasibleSubspace {
    /// Orthonormal basis from the SVD nullspace of the stacked constraints.
    pub fn build(gains: &DcGains, prob: &OssProblem) -> Result<Self> {
        let fs = Self::build_allow_trivial(gains, prob)?;
        if fs.q() == 0 {
            return Err(Error::NoFreedom);
        }
        Ok(fs)
    }

    /// As [`FeasibleSubspace::build`] but returns `q = 0` instead of failing.
    pub fn build_allow_trivial(gains: &DcGains, prob: &OssProblem) -> Result<Self> {
        prob.check_compatible(gains)?;
        let s = stacked_constraint_matrix(gains, prob);
        let t = numerics::nullspace_default(&s)?;
        let r = gains.outputs();
        let m = gains.inputs();
        let q = t.ncols();
        let mut warnings = vec![];
        let rank = numerics::rank_default(&s)?;
        if rank < s.nrows() {
            warnings.push(format!(
                "stacked constraint matrix is rank deficient (rank {rank} < {} rows); engineering constraints are redundant or N lacks full row rank",
                s.nrows()
            ));
        }
        let (z0_map, u0_map) = particular_maps(gains, prob, &s)?;
        Ok(Self {
            t_z: t.rows(0, r).into_owned(),
            t_u: t.rows(r, m).into_owned(),
            z0_map,
            u0_map,
            warnings,
        }
        .with_q_check(q))
    }

    fn with_q_check(self, q: usize) -> Self {
        debug_assert_eq!(self.t_u.ncols(), q);
        self
    }

    /// User-supplied basis, verified against the defining equations.
    pub fn with_basis(gains: &DcGains, prob: &OssProblem, t_z: Matrix, t_u: Matrix) -> Result<Self> {
        prob.check_compatible(gains)?;
        let (r, m) = (gains.outputs(), gains.inputs());
        if t_z.nrows() != r || t_u.nrows() != m || t_z.ncols() != t_u.ncols() {
            return Err(invalid(format!("basis blocks must be {r}xq and {m}xq with matching q")));
        }
        if t_u.ncols() == 0 {
            return Err(Error::NoFreedom);
        }
        let s = stacked_constraint_matrix(gains, prob);
        let t = numerics::vstack(&[&t_z, &t_u]);
        let resid = numerics::norm2(&(&s * &t));
        let scale = numerics::norm2(&s).max(1.0) * numerics::norm2(&t).max(1.0);
        if resid > BASIS_TOL * scale {
            return Err(invalid(format!("supplied basis violates the defining equation (residual {resid:.3e})")));
        }
        if !numerics::has_full_column_rank(&t)? {
            return Err(invalid("supplied basis does not have full column rank"));
        }
        let dim_null = s.ncols() - numerics::rank_default(&s)?;
        if t.ncols() != dim_null {
            return Err(invalid(format!(
                "supplied basis has {} columns but the feasible subspace has dimension {dim_null}",
                t.ncols()
            )));
        }
        let (z0_map, u0_map) = particular_maps(gains, prob, &s)?;
        Ok(Self {
            t_z,
            t_u,
            z0_map,
            u0_map,
            warnings: vec![],
        })
    }

    pub fn q(&self) -> usize {
        self.t_u.ncols()
    }

    pub fn z0(&self, w: &Vector) -> Vector {
        &self.z0_map * w
    }

    pub fn u0(&self, w: &Vector) -> Vector {
        &self.u0_map * w
    }

    /// `[T_z; T_u]`.
    pub fn basis(&self) -> Matrix {
        numerics::vstack(&[&self.t_z, &self.t_u])
    }

    /// Residuals of `S T = 0` and `S (z0, u0) = (G_w w, -H_w w)`.
    pub fn defining_residuals(&self, gains: &DcGains, prob: &OssProblem, w: &Vector) -> (f64, f64) {
        let s = stacked_constraint_matrix(gains, prob);
        let t_res = numerics::norm2(&(&s * self.basis()));
        let p = Vector::from_iterator(
            self.z0_map.nrows() + self.u0_map.nrows(),
            self.z0(w).iter().chain(self.u0(w).iter()).copied(),
        );
        let p_res = (&s * p - stacked_disturbance_matrix(gains, prob) * w).norm();
        (t_res, p_res)
    }
}

fn particular_maps(gains: &DcGains, prob: &OssProblem, s: &Matrix) -> Result<(Matrix, Matrix)> {
    let r = gains.outputs();
    let m = gains.inputs();
    let map = numerics::pseudoinverse(s)? * stacked_disturbance_matrix(gains, prob);
    Ok((map.rows(0, r).into_owned(), map.rows(r, m).into_owned()))
}

/// Constructive basis available when `G_u` has full row rank.
#[derive(Debug, Clone)]
pub struct RowRankCandidate {
    pub x: Matrix,
    pub t_z: Matrix,
    pub t_u: Matrix,
    /// Norm of `S [T_z; T_u]`.
    pub defining_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SubspaceStructureReport {
    pub t_u_full_column_rank: bool,
    pub t_z_full_column_rank: bool,
    /// `range(T_u) ⊆ range(G_u')`, tested through `|(I - G_u^+ G_u) T_u|`.
    pub range_inclusion: bool,
    pub range_inclusion_residual: f64,
    /// The two tests above coincide.
    pub rank_matches_range_test: bool,
    pub g_u_full_column_rank: bool,
    /// `G_u` full column rank implies `T_z` full column rank.
    pub column_rank_transfers: bool,
    pub g_u_full_row_rank: bool,
    pub row_rank_candidate: Option<RowRankCandidate>,
}

pub fn subspace_structure_report(fs: &FeasibleSubspace, gains: &DcGains, prob: &OssProblem) -> Result<SubspaceStructureReport> {
    let g_u = &gains.g_u;
    let m = g_u.ncols();
    let t_u_full_column_rank = numerics::has_full_column_rank(&fs.t_u)?;
    // Measured against the scale of the basis, not of `T_z`: a block that is
    // all rounding noise must not count as full rank.
    let basis_scale = numerics::norm2(&fs.basis());
    let t_z_full_column_rank = fs.q() == 0
        || numerics::singular_values(&fs.t_z)?.get(fs.q() - 1).is_some_and(|&s| s > BASIS_TOL * basis_scale);
    let pinv = numerics::pseudoinverse(g_u)?;
    let proj = Matrix::identity(m, m) - &pinv * g_u;
    let range_inclusion_residual = numerics::norm2(&(&proj * &fs.t_u));
    let scale = numerics::norm2(&fs.t_u).max(1e-300);
    let range_inclusion = range_inclusion_residual <= 1e-8 * scale;
    let g_u_full_column_rank = numerics::has_full_column_rank(g_u)?;
    let g_u_full_row_rank = numerics::has_full_row_rank(g_u)?;
    let row_rank_candidate = if g_u_full_row_rank {
        let reduced = &prob.h_z + &prob.h_u * &pinv;
        let x = numerics::nullspace_default(&reduced)?;
        if x.ncols() == 0 {
            None
        } else {
            let t_u = &pinv * &x;
            let s = stacked_constraint_matrix(gains, prob);
            let defining_residual = numerics::norm2(&(&s * numerics::vstack(&[&x, &t_u])));
            Some(RowRankCandidate {
                t_z: x.clone(),
                x,
                t_u,
                defining_residual,
            })
        }
    } else {
        None
    };
    Ok(SubspaceStructureReport {
        t_u_full_column_rank,
        t_z_full_column_rank,
        range_inclusion,
        range_inclusion_residual,
        rank_matches_range_test: t_z_full_column_rank == range_inclusion,
        g_u_full_column_rank,
        column_rank_transfers: !g_u_full_column_rank || t_z_full_column_rank,
        g_u_full_row_rank,
        row_rank_candidate,
    })
}

/// Dual-integrator state of the first optimality model.
#[derive(Debug, Clone, PartialEq)]
pub struct Om1State {
    pub mu: Vector,
    pub tau: f64,
}

impl Om1State {
    pub fn new(mu: Vector, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("time constant must be positive"));
        }
        Ok(Self { mu, tau })
    }
}

/// `(mu_dot, e)` with `tau mu_dot = H_z z + H_u u + H_w w` and
/// `e = grad f0(u) + G_u' grad g0(z) + N' mu`.
pub fn om1_step(state: &Om1State, prob: &OssProblem, gains: &DcGains, z: &Vector, u: &Vector, w: &Vector) -> Result<(Vector, Vector)> {
    let (e, viol) = crate::problem::kkt_vectors(prob, gains, u, z, &state.mu, w)?;
    Ok((viol / state.tau, e))
}

/// `(e1, e2)` with `e1 = T_u' grad f0(u) + T_z' grad g0(z)` and
/// `e2 = H_z z + H_u u + H_w w`.
pub fn om2_error(fs: &FeasibleSubspace, prob: &OssProblem, z: &Vector, u: &Vector, w: &Vector) -> Result<(Vector, Vector)> {
    let e1 = fs.t_u.transpose() * prob.f0.gradient(u)? + fs.t_z.transpose() * prob.g0.gradient(z)?;
    let e2 = prob.constraint_violation(z, u, w);
    Ok((e1, e2))
}
