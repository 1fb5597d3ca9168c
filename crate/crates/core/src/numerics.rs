//! Dense linear algebra helpers, a fixed-step RK4 integrator and a damped
//! Newton root finder.
//!
//! Everything here is a pure function over `nalgebra` dense matrices; the
//! SVD is computed by `faer`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Real parts of the spectrum of a square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigen_real_parts: Vec<f64>,
    pub max_real_part: f64,
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if all_finite(m) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite entries")))
    }
}

/// Default relative rank tolerance: `max(rows, cols) * eps`.
pub fn default_rank_tol(m: &Matrix) -> f64 {
    m.nrows().max(m.ncols()).max(1) as f64 * f64::EPSILON
}

/// Full SVD `m = U diag(s) V^T` with `s` nonincreasing, `U` square of size
/// `rows` and `V` square of size `cols`.
struct DenseSvd {
    u: Matrix,
    s: Vec<f64>,
    v: Matrix,
}

fn dense_svd(m: &Matrix) -> Result<DenseSvd> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(DenseSvd {
            u: Matrix::identity(rows, rows),
            s: vec![],
            v: Matrix::identity(cols, cols),
        });
    }
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = f.svd().map_err(|e| Error::Numeric {
        iterations: 0,
        message: format!("singular value decomposition failed: {e:?}"),
    })?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
    let mut u = Matrix::from_fn(rows, rows, |i, j| fu[(i, j)]);
    let mut v = Matrix::from_fn(cols, cols, |i, j| fv[(i, j)]);
    let (u0, v0) = (u.clone(), v.clone());
    for (j, &i) in order.iter().enumerate() {
        u.set_column(j, &u0.column(i));
        v.set_column(j, &v0.column(i));
    }
    let s = order.iter().map(|&i| fs[i]).collect();
    Ok(DenseSvd { u, s, v })
}

/// Singular values (padded with zeros to `cols`) and a complete right
/// singular basis whose trailing columns span the nullspace.
pub(crate) struct FullSvd {
    pub singular_values: Vec<f64>,
    /// `cols x cols`; column `i` pairs with `singular_values[i]`.
    pub v: Matrix,
}

pub(crate) fn full_svd(m: &Matrix) -> Result<FullSvd> {
    let d = dense_svd(m)?;
    let mut singular_values = d.s;
    singular_values.resize(m.ncols(), 0.0);
    Ok(FullSvd { singular_values, v: d.v })
}

pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    Ok(dense_svd(m)?.s)
}

/// Numerical rank: singular values above `tol * sigma_max` count.
pub fn rank(m: &Matrix, tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > tol * smax).count())
}

pub fn rank_default(m: &Matrix) -> Result<usize> {
    rank(m, default_rank_tol(m))
}

pub fn has_full_column_rank(m: &Matrix) -> Result<bool> {
    Ok(m.ncols() == 0 || rank_default(m)? == m.ncols())
}

pub fn has_full_row_rank(m: &Matrix) -> Result<bool> {
    Ok(m.nrows() == 0 || rank_default(m)? == m.nrows())
}

/// Orthonormal basis of `null(m)`. Singular values at or below
/// `tol * sigma_max` are treated as zero.
pub fn nullspace(m: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite(m, "matrix")?;
    if !(tol > 0.0) {
        return Err(invalid("nullspace tolerance must be positive"));
    }
    let cols = m.ncols();
    if m.nrows() == 0 {
        return Ok(Matrix::identity(cols, cols));
    }
    let svd = full_svd(m)?;
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let r = if smax == 0.0 {
        0
    } else {
        svd.singular_values
            .iter()
            .filter(|&&s| s > tol * smax)
            .count()
    };
    Ok(svd.v.columns(r, cols - r).into_owned())
}

pub fn nullspace_default(m: &Matrix) -> Result<Matrix> {
    nullspace(m, default_rank_tol(m))
}

/// Moore-Penrose pseudoinverse through the SVD with the default rank cutoff.
pub fn pseudoinverse(m: &Matrix) -> Result<Matrix> {
    pseudoinverse_tol(m, default_rank_tol(m))
}

/// Pseudoinverse treating singular values at or below `tol * sigma_max` as zero.
pub fn pseudoinverse_tol(m: &Matrix, tol: f64) -> Result<Matrix> {
    let d = dense_svd(m)?;
    let (rows, cols) = m.shape();
    let smax = d.s.first().copied().unwrap_or(0.0);
    let cut = tol * smax;
    let mut pinv = Matrix::zeros(cols, rows);
    for (i, &s) in d.s.iter().enumerate() {
        if s > cut {
            pinv += (d.v.column(i) * d.u.column(i).transpose()) / s;
        }
    }
    Ok(pinv)
}

/// Least-squares solution of `a x = b` with minimum norm.
pub fn lstsq(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Ok(pseudoinverse(a)? * b)
}

/// Eigenvalues of a square matrix as `(re, im)` pairs, computed by `faer`.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    ensure_finite(m, "matrix")?;
    if !m.is_square() {
        return Err(invalid(format!("eigenvalues require a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Ok(vec![]);
    }
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let ev = f.eigenvalues().map_err(|e| Error::Numeric {
        iterations: 0,
        message: format!("eigenvalue iteration failed: {e:?}"),
    })?;
    Ok(ev.iter().map(|z| (z.re, z.im)).collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|&(re, im)| re.hypot(im)).fold(0.0, f64::max))
}

pub fn max_eig_real(m: &Matrix) -> Result<SpectrumReport> {
    ensure_finite(m, "matrix")?;
    if !m.is_square() {
        return Err(invalid(format!(
            "spectrum requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(SpectrumReport {
            eigen_real_parts: vec![],
            max_real_part: f64::NEG_INFINITY,
        });
    }
    let mut re: Vec<f64> = eigenvalues(m)?.iter().map(|z| z.0).collect();
    re.sort_by(|a, b| b.total_cmp(a));
    let max_real_part = re[0];
    Ok(SpectrumReport {
        eigen_real_parts: re,
        max_real_part,
    })
}

pub fn is_hurwitz(m: &Matrix) -> Result<bool> {
    Ok(max_eig_real(m)?.max_real_part < 0.0)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return vec![];
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut e: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

pub fn sym_max_eig(m: &Matrix) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn sym_min_eig(m: &Matrix) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Inverse by LU with partial pivoting, plus a 2-norm condition estimate.
pub fn inverse_with_condition(m: &Matrix) -> Result<(Matrix, f64)> {
    ensure_finite(m, "matrix")?;
    if !m.is_square() {
        return Err(invalid("inverse requires a square matrix"));
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| invalid("matrix is singular"))?;
    let s = singular_values(m)?;
    let cond = match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    };
    Ok((inv, cond))
}

pub fn solve_square(a: &Matrix, b: &Vector) -> Option<Vector> {
    a.clone().lu().solve(b)
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(f: &F, t: f64, x: &Vector, dt: f64) -> Result<Vector>
where
    F: Fn(f64, &Vector) -> Result<Vector>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)))?;
    let k3 = f(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Fixed-step RK4 samples over `[t0, t1]`. The last step is shortened so the
/// final sample lands on `t1`.
pub fn integrate<F>(f: F, x0: &Vector, t0: f64, t1: f64, dt: f64) -> Result<Vec<(f64, Vector)>>
where
    F: Fn(f64, &Vector) -> Result<Vector>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("step size must be positive and finite"));
    }
    if !(t1 >= t0) {
        return Err(invalid("time span must be non-decreasing"));
    }
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    out.push((t0, x.clone()));
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let h = dt.min(t1 - t);
        x = rk4_step(&f, t, &x, h)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t + h });
        }
        out.push((if k + 1 == steps { t1 } else { t + h }, x.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Open box the iterates must stay strictly inside.
    pub bounds: Option<(Vector, Vector)>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            bounds: None,
        }
    }
}

fn strictly_inside(x: &Vector, bounds: &Option<(Vector, Vector)>) -> bool {
    match bounds {
        None => true,
        Some((lo, hi)) => x
            .iter()
            .zip(lo.iter().zip(hi.iter()))
            .all(|(v, (l, h))| v > l && v < h),
    }
}

/// Damped Newton iteration for `g(x) = 0`.
///
/// `g` returns the residual and its Jacobian. Steps are halved until the
/// residual norm decreases and the trial point stays strictly inside the
/// bounds; a `Domain` error from `g` also triggers halving.
pub fn newton_solve<G>(g: G, x0: &Vector, opts: &NewtonOptions) -> Result<Vector>
where
    G: Fn(&Vector) -> Result<(Vector, Matrix)>,
{
    if !strictly_inside(x0, &opts.bounds) {
        return Err(invalid("Newton start point must lie strictly inside the bounds"));
    }
    let mut x = x0.clone();
    let (mut r, mut jac) = g(&x)?;
    let mut rnorm = r.norm();
    for _ in 0..opts.max_iter {
        if rnorm <= opts.tol {
            return Ok(x);
        }
        let step = match solve_square(&jac, &(-&r)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => -(pseudoinverse(&jac)? * &r),
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &step * alpha;
            if strictly_inside(&trial, &opts.bounds) {
                match g(&trial) {
                    Ok((rt, jt)) => {
                        let nt = rt.norm();
                        if nt.is_finite() && nt < rnorm {
                            accepted = Some((trial, rt, jt, nt));
                            break;
                        }
                    }
                    Err(Error::Domain(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xn, rn, jn, nn)) => {
                x = xn;
                r = rn;
                jac = jn;
                rnorm = nn;
            }
            None => {
                // No decrease is possible at floating-point resolution.
                if rnorm <= opts.tol * 1e3 {
                    return Ok(x);
                }
                return Err(Error::NonConvergence {
                    iterations: opts.max_iter,
                    residual: rnorm,
                });
            }
        }
    }
    if rnorm <= opts.tol {
        Ok(x)
    } else {
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            residual: rnorm,
        })
    }
}

/// Induced 2-norm.
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m)
        .ok()
        .and_then(|s| s.first().copied())
        .unwrap_or(f64::NAN)
}

pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(*b);
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn nullspace_of_ones_row() {
        let m = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let n = nullspace_default(&m).unwrap();
        assert_eq!(n.ncols(), 1);
        assert!((&m * &n).norm() <= 1e-12);
        let v = n.column(0);
        assert!((v[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v[0] + v[1]).abs() < 1e-12);
    }

    #[test]
    fn nullspace_of_identity_is_empty() {
        let n = nullspace_default(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(n.shape(), (3, 0));
    }

    #[test]
    fn nullspace_of_random_wide_matrix() {
        let m = random(4, 6, 11);
        // Independent rank check through the eigenvalues of m m^T.
        let gram_eigs = sym_eigenvalues(&(&m * m.transpose()));
        assert!(gram_eigs[0] > 1e-6);
        let n = nullspace_default(&m).unwrap();
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() <= 1e-10);
        assert!((n.transpose() * &n - Matrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn nullspace_rejects_non_finite() {
        let m = Matrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(nullspace_default(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pseudoinverse_examples() {
        let p = pseudoinverse(&Matrix::from_element(1, 1, 2.0)).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);

        let ones = Matrix::from_element(1, 5, 1.0);
        let p = pseudoinverse(&ones).unwrap();
        assert_eq!(p.shape(), (5, 1));
        for v in p.iter() {
            assert!((v - 0.2).abs() < 1e-14);
        }

        let m = random(3, 5, 3);
        let p = pseudoinverse(&m).unwrap();
        assert!((&m * &p - Matrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn spectrum_examples() {
        let r = max_eig_real(&(-Matrix::identity(2, 2))).unwrap();
        assert!((r.max_real_part + 1.0).abs() < 1e-12);

        let rot = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(max_eig_real(&rot).unwrap().max_real_part.abs() < 1e-12);

        let companion = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let r = max_eig_real(&companion).unwrap();
        assert!((r.max_real_part + 1.0).abs() < 1e-10);
        assert!((r.eigen_real_parts[1] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn spectrum_rejects_rectangular() {
        assert!(max_eig_real(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn integrate_scalar_exponential() {
        let x0 = Vector::from_element(1, 1.0);
        let out = integrate(|_, x| Ok(-x), &x0, 0.0, 1.0, 1e-3).unwrap();
        let (t, x) = out.last().unwrap();
        assert_eq!(*t, 1.0);
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn integrate_zero_field_is_constant() {
        let x0 = Vector::from_vec(vec![1.5, -2.0]);
        let out = integrate(|_, x| Ok(x * 0.0), &x0, 0.0, 3.0, 0.1).unwrap();
        assert!(out.iter().all(|(_, x)| x == &x0));
    }

    #[test]
    fn integrate_linear_system_against_matrix_exponential() {
        let a = -Matrix::identity(2, 2);
        let x0 = Vector::from_vec(vec![1.0, -0.5]);
        let out = integrate(|_, x| Ok(&a * x), &x0, 0.0, 2.0, 1e-3).unwrap();
        let exact = a.scale(2.0).exp() * &x0;
        assert!((&out.last().unwrap().1 - exact).norm() <= 1e-8);
    }

    #[test]
    fn integrate_is_fourth_order() {
        let x0 = Vector::from_element(1, 1.0);
        let err = |dt: f64| {
            let out = integrate(|_, x| Ok(-x), &x0, 0.0, 1.0, dt).unwrap();
            (out.last().unwrap().1[0] - (-1.0f64).exp()).abs()
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn integrate_reports_divergence_time() {
        let x0 = Vector::from_element(1, 1.0);
        let r = integrate(|_, x| Ok(x.map(|v| v * v * 1e300)), &x0, 0.0, 1.0, 0.1);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn newton_linear_and_cubic() {
        let x = newton_solve(
            |x| Ok((x.add_scalar(-3.0), Matrix::identity(1, 1))),
            &Vector::zeros(1),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);

        let x = newton_solve(
            |x| {
                let v = x[0];
                Ok((
                    Vector::from_element(1, v * v * v - 8.0),
                    Matrix::from_element(1, 1, 3.0 * v * v),
                ))
            },
            &Vector::from_element(1, 1.0),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert!((x[0] - 2.0).abs() < 1e-10);
    }

    fn barrier_grad(u: f64) -> f64 {
        u + 0.01 * (1.0 / (0.75 - u) - 1.0 / (u + 0.75))
    }

    fn bisect(target: f64) -> f64 {
        let (mut lo, mut hi) = (-0.75f64, 0.75f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if barrier_grad(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn newton_barrier_matches_bisection() {
        let targets = [0.0, 0.3, -2.0, 10.0, -40.0];
        let ubound = Vector::from_element(targets.len(), 0.75);
        let opts = NewtonOptions {
            tol: 1e-11,
            max_iter: 200,
            bounds: Some((-&ubound, ubound.clone())),
        };
        let x = newton_solve(
            |u| {
                let r = Vector::from_fn(targets.len(), |i, _| barrier_grad(u[i]) - targets[i]);
                let j = Matrix::from_diagonal(&u.map(|v| {
                    1.0 + 0.01 * (1.0 / (0.75 - v).powi(2) + 1.0 / (v + 0.75).powi(2))
                }));
                Ok((r, j))
            },
            &Vector::zeros(targets.len()),
            &opts,
        )
        .unwrap();
        for (i, &t) in targets.iter().enumerate() {
            assert!((x[i] - bisect(t)).abs() < 1e-8, "target {t}");
        }
    }

    #[test]
    fn newton_rejects_start_outside_box() {
        let opts = NewtonOptions {
            bounds: Some((Vector::from_element(1, -1.0), Vector::from_element(1, 1.0))),
            ..Default::default()
        };
        let r = newton_solve(
            |x| Ok((x.clone(), Matrix::identity(1, 1))),
            &Vector::from_element(1, 2.0),
            &opts,
        );
        assert!(r.is_err());
    }

    #[test]
    fn newton_reports_non_convergence() {
        // x^2 + 1 has no real root.
        let r = newton_solve(
            |x| {
                Ok((
                    Vector::from_element(1, x[0] * x[0] + 1.0),
                    Matrix::from_element(1, 1, 2.0 * x[0]),
                ))
            },
            &Vector::from_element(1, 0.5),
            &NewtonOptions {
                max_iter: 50,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn nullspace_annihilates(seed in 0u64..10_000, rows in 1usize..6, cols in 1usize..7) {
                let m = random(rows, cols, seed);
                let tol = default_rank_tol(&m);
                let n = nullspace(&m, tol).unwrap();
                prop_assert!(norm2(&(&m * &n)) <= tol * norm2(&m));
            }

            #[test]
            fn penrose_identities(seed in 0u64..10_000, rows in 1usize..6, cols in 1usize..6) {
                let m = random(rows, cols, seed);
                let p = pseudoinverse(&m).unwrap();
                let scale = m.norm().max(1.0) * p.norm().max(1.0);
                prop_assert!((&m * &p * &m - &m).norm() <= 1e-10 * scale * m.norm());
                prop_assert!((&p * &m * &p - &p).norm() <= 1e-10 * scale * p.norm());
                let mp = &m * &p;
                let pm = &p * &m;
                prop_assert!((&mp - mp.transpose()).norm() <= 1e-10 * scale);
                prop_assert!((&pm - pm.transpose()).norm() <= 1e-10 * scale);
            }

            #[test]
            fn newton_stays_inside_box(target in -100.0f64..100.0) {
                let opts = NewtonOptions {
                    tol: 1e-10,
                    max_iter: 200,
                    bounds: Some((Vector::from_element(1, -0.75), Vector::from_element(1, 0.75))),
                };
                let x = newton_solve(
                    |u| Ok((
                        Vector::from_element(1, barrier_grad(u[0]) - target),
                        Matrix::from_element(1, 1, 1.0 + 0.01 * (1.0 / (0.75 - u[0]).powi(2) + 1.0 / (u[0] + 0.75).powi(2))),
                    )),
                    &Vector::zeros(1),
                    &opts,
                ).unwrap();
                prop_assert!(x[0] > -0.75 && x[0] < 0.75);
            }
        }
    }
}
