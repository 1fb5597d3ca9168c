//! Small dense semidefinite programs
//!
//! ```text
//! minimize c'y  subject to  F_j(y) = F_j0 + sum_i y_i F_ji ⪰ 0
//! ```
//!
//! solved by a log-det barrier method with damped Newton centering steps.
//! A phase-one problem `F_j(y) + s I ⪰ 0, min s` finds a strictly feasible
//! start or certifies that none exists. An optional Euclidean ball
//! `|y| <= R` keeps every subproblem bounded.
//!
//! Sized for desk-scale problems: at most [`MAX_TOTAL_SIZE`] summed block
//! rows.

use crate::error::{invalid, Result};
use crate::numerics::{Matrix, Vector};

pub const MAX_TOTAL_SIZE: usize = 200;

#[derive(Debug, Clone)]
struct Block {
    constant: Matrix,
    coefficients: Vec<Matrix>,
}

impl Block {
    fn eval(&self, y: &Vector) -> Matrix {
        let mut f = self.constant.clone();
        for (i, fi) in self.coefficients.iter().enumerate() {
            if y[i] != 0.0 {
                f += fi * y[i];
            }
        }
        f
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    n: usize,
    objective: Vector,
    blocks: Vec<Block>,
    bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vector,
    pub objective: f64,
    /// Smallest eigenvalue over all constraint blocks at `x`.
    pub min_margin: f64,
    pub iterations: usize,
    pub message: String,
}

fn symmetric(m: &Matrix) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
}

impl SdpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            objective: Vector::zeros(n),
            blocks: vec![],
            bound: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn total_size(&self) -> usize {
        self.blocks.iter().map(|b| b.constant.nrows()).sum()
    }

    /// Adds `F0 + sum_i y_i F_i ⪰ 0`.
    pub fn add_lmi(&mut self, constant: Matrix, coefficients: Vec<Matrix>) -> Result<()> {
        if coefficients.len() != self.n {
            return Err(invalid(format!("LMI needs {} coefficient matrices", self.n)));
        }
        let k = constant.nrows();
        if !symmetric(&constant) || coefficients.iter().any(|c| c.shape() != (k, k) || !symmetric(c)) {
            return Err(invalid("LMI coefficient matrices must be symmetric and of equal size"));
        }
        let sym = |m: Matrix| (&m + m.transpose()) * 0.5;
        self.blocks.push(Block {
            constant: sym(constant),
            coefficients: coefficients.into_iter().map(sym).collect(),
        });
        Ok(())
    }

    /// Adds `F0 + sum_i y_i F_i ⪯ 0`.
    pub fn add_lmi_nsd(&mut self, constant: Matrix, coefficients: Vec<Matrix>) -> Result<()> {
        self.add_lmi(-constant, coefficients.into_iter().map(|c| -c).collect())
    }

    /// Adds `a'y + b >= 0`.
    pub fn add_linear_inequality(&mut self, a: &[f64], b: f64) -> Result<()> {
        if a.len() != self.n {
            return Err(invalid(format!("linear inequality needs {} coefficients", self.n)));
        }
        self.add_lmi(
            Matrix::from_element(1, 1, b),
            a.iter().map(|v| Matrix::from_element(1, 1, *v)).collect(),
        )
    }

    pub fn set_objective(&mut self, c: &[f64]) -> Result<()> {
        if c.len() != self.n {
            return Err(invalid(format!("objective needs {} coefficients", self.n)));
        }
        self.objective = Vector::from_column_slice(c);
        Ok(())
    }

    /// Restricts the search to `|y| <= radius`.
    pub fn set_variable_bound(&mut self, radius: f64) {
        self.bound = Some(radius);
    }

    /// Smallest eigenvalue over all blocks.
    pub fn margin(&self, y: &Vector) -> f64 {
        self.blocks
            .iter()
            .map(|b| crate::numerics::sym_min_eig(&b.eval(y)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Internal barrier problem over `v` = `(y)` or `(y, s)` for phase one.
struct Barrier<'a> {
    p: &'a SdpProblem,
    /// Phase one: the last variable shifts every block by `s I`.
    shifted: bool,
    c: Vector,
}

struct Eval {
    value: f64,
    grad: Vector,
    hess: Matrix,
}

impl<'a> Barrier<'a> {
    fn nvar(&self) -> usize {
        self.p.n + usize::from(self.shifted)
    }

    fn block_value(&self, b: &Block, v: &Vector) -> Matrix {
        let y = v.rows(0, self.p.n).into_owned();
        let mut f = b.eval(&y);
        if self.shifted {
            let k = f.nrows();
            f += Matrix::identity(k, k) * v[self.p.n];
        }
        f
    }

    fn ball_slack(&self, v: &Vector) -> Option<f64> {
        self.p.bound.map(|r| r * r - v.rows(0, self.p.n).norm_squared())
    }

    /// Barrier value only; `None` outside the domain.
    fn value(&self, v: &Vector, t: f64) -> Option<f64> {
        let mut val = t * self.c.dot(v);
        for b in &self.p.blocks {
            let f = self.block_value(b, v);
            let ch = f.cholesky()?;
            val -= 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        if let Some(s) = self.ball_slack(v) {
            if s <= 0.0 {
                return None;
            }
            val -= s.ln();
        }
        if self.shifted {
            // s >= -1 keeps phase one bounded below.
            let s = v[self.p.n] + 1.0;
            if s <= 0.0 {
                return None;
            }
            val -= s.ln();
        }
        val.is_finite().then_some(val)
    }

    fn eval(&self, v: &Vector, t: f64) -> Option<Eval> {
        let nv = self.nvar();
        let ny = self.p.n;
        let value = self.value(v, t)?;
        let mut grad = &self.c * t;
        let mut hess = Matrix::zeros(nv, nv);
        for b in &self.p.blocks {
            let f = self.block_value(b, v);
            let k = f.nrows();
            let ch = f.cholesky()?;
            let l = ch.l();

            let whiten = |m: &Matrix| -> Matrix {
                let a = l.solve_lower_triangular(m).expect("cholesky factor is nonsingular");
                l.solve_lower_triangular(&a.transpose()).expect("cholesky factor is nonsingular")
            };
            let mut ms: Vec<Matrix> = b.coefficients.iter().map(whiten).collect();
            if self.shifted {
                ms.push(whiten(&Matrix::identity(k, k)));
            }
            for i in 0..nv {
                grad[i] -= ms[i].trace();
            }
            for i in 0..nv {
                for j in i..nv {
                    let h = ms[i].dot(&ms[j]);
                    hess[(i, j)] += h;
                    if i != j {
                        hess[(j, i)] += h;
                    }
                }
            }
        }
        if let Some(s) = self.ball_slack(v) {
            let y = v.rows(0, ny).into_owned();
            for i in 0..ny {
                grad[i] += 2.0 * y[i] / s;
                hess[(i, i)] += 2.0 / s;
            }
            let outer = &y * y.transpose() * (4.0 / (s * s));
            let mut top = hess.view_mut((0, 0), (ny, ny));
            top += &outer;
        }
        if self.shifted {
            let s = v[ny] + 1.0;
            grad[ny] -= 1.0 / s;
            hess[(ny, ny)] += 1.0 / (s * s);
        }
        Some(Eval { value, grad, hess })
    }

    /// Barrier parameter count, i.e. the duality-gap weight `n_tot / t`.
    fn degree(&self) -> f64 {
        self.p.total_size() as f64 + f64::from(u8::from(self.p.bound.is_some())) + f64::from(u8::from(self.shifted))
    }

    /// Newton centering at parameter `t`. Returns the iteration count.
    fn center(&self, v: &mut Vector, t: f64, stop: &dyn Fn(&Vector) -> bool) -> std::result::Result<usize, String> {
        const MAX_NEWTON: usize = 200;
        for it in 0..MAX_NEWTON {
            if stop(v) {
                return Ok(it);
            }
            let ev = self.eval(v, t).ok_or_else(|| "iterate left the domain".to_string())?;
            let h = &ev.hess + Matrix::identity(ev.hess.nrows(), ev.hess.ncols()) * (1e-14 * ev.hess.diagonal().amax().max(1e-300));
            let dir = match h.clone().cholesky() {
                Some(ch) => -ch.solve(&ev.grad),
                None => -h.lu().solve(&ev.grad).ok_or_else(|| "singular Newton system".to_string())?,
            };
            let decrement = -ev.grad.dot(&dir);
            if !decrement.is_finite() {
                return Err("non-finite Newton decrement".into());
            }
            if decrement / 2.0 <= 1e-11 {
                return Ok(it);
            }
            let mut alpha = 1.0 / (1.0 + decrement.sqrt()).max(1.0);
            if decrement < 0.25 {
                alpha = 1.0;
            }
            let mut accepted = false;
            for _ in 0..80 {
                let cand = &*v + &dir * alpha;
                if let Some(val) = self.value(&cand, t) {
                    if val <= ev.value - 0.25 * alpha * decrement {
                        *v = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No further progress is possible at machine precision.
                return Ok(it);
            }
        }
        Ok(MAX_NEWTON)
    }
}

fn failure(n: usize, iterations: usize, message: impl Into<String>) -> SdpSolution {
    SdpSolution {
        status: SdpStatus::NumericalFailure,
        x: Vector::zeros(n),
        objective: f64::NAN,
        min_margin: f64::NAN,
        iterations,
        message: message.into(),
    }
}

/// Phase one: a strictly feasible point or `None` when the constraints have
/// no interior.
fn phase_one(p: &SdpProblem, tol: f64, iterations: &mut usize) -> std::result::Result<Option<Vector>, String> {
    let y0 = Vector::zeros(p.n);
    if p.blocks.is_empty() || p.margin(&y0) > 0.0 {
        return Ok(Some(y0));
    }
    let mut c = Vector::zeros(p.n + 1);
    c[p.n] = 1.0;
    let bar = Barrier { p, shifted: true, c };
    let mut v = Vector::zeros(p.n + 1);
    v[p.n] = (-p.margin(&y0)).max(0.0) + 1.0;
    let ny = p.n;
    let stop = move |v: &Vector| v[ny] < -1e-3;
    let mut t = 1.0;
    loop {
        *iterations += bar.center(&mut v, t, &stop)?;
        let y = v.rows(0, ny).into_owned();
        if v[ny] < 0.0 && p.margin(&y) > 0.0 {
            return Ok(Some(y));
        }
        let gap = bar.degree() / t;
        if v[ny] - gap > 0.0 {
            return Ok(None);
        }
        if gap < tol * 1e-2 {
            return Ok(None);
        }
        t *= 10.0;
        if t > 1e16 {
            return Ok(None);
        }
    }
}

/// Solves the problem to duality-gap tolerance `tol`. A zero objective
/// returns the analytic center of the feasible set.
pub fn solve_sdp(p: &SdpProblem, tol: f64) -> SdpSolution {
    let mut iterations = 0;
    if p.total_size() > MAX_TOTAL_SIZE {
        return failure(p.n, 0, format!("problem size {} exceeds the cap {MAX_TOTAL_SIZE}", p.total_size()));
    }
    let start = match phase_one(p, tol, &mut iterations) {
        Ok(Some(y)) => y,
        Ok(None) => {
            return SdpSolution {
                status: SdpStatus::Infeasible,
                x: Vector::zeros(p.n),
                objective: f64::NAN,
                min_margin: f64::NAN,
                iterations,
                message: "constraints have no strictly feasible point".into(),
            }
        }
        Err(msg) => return failure(p.n, iterations, format!("phase one: {msg}")),
    };
    let bar = Barrier {
        p,
        shifted: false,
        c: p.objective.clone(),
    };
    let mut y = start;
    let never = |_: &Vector| false;
    let feasibility_only = p.objective.iter().all(|v| *v == 0.0);
    let mut t = if feasibility_only { 0.0 } else { 1.0 };
    loop {
        match bar.center(&mut y, t, &never) {
            Ok(it) => iterations += it,
            Err(msg) => return failure(p.n, iterations, msg),
        }
        if y.norm() > 1e12 {
            return failure(p.n, iterations, "iterates are unbounded; add a variable bound");
        }
        if feasibility_only || bar.degree() / t < tol {
            break;
        }
        t *= 10.0;
    }
    let min_margin = p.margin(&y);
    SdpSolution {
        status: if min_margin >= -tol {
            SdpStatus::Optimal
        } else {
            SdpStatus::NumericalFailure
        },
        objective: p.objective.dot(&y),
        x: y,
        min_margin,
        iterations,
        message: String::new(),
    }
}

/// Basis `E_k` of symmetric `n x n` matrices, ordered row-wise over the upper
/// triangle.
pub fn symmetric_basis(n: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = Matrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

/// Inverse of [`symmetric_basis`] expansion: `sum_k v_k E_k`.
pub fn symmetric_from_coordinates(n: usize, v: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lyapunov_trace(a: &Matrix) -> SdpSolution {
        let n = a.nrows();
        let basis = symmetric_basis(n);
        let mut p = SdpProblem::new(basis.len());
        // A'P + PA + I ⪯ 0
        p.add_lmi_nsd(Matrix::identity(n, n), basis.iter().map(|e| a.transpose() * e + e * a).collect())
            .unwrap();
        p.add_lmi(Matrix::zeros(n, n), basis.clone()).unwrap();
        let c: Vec<f64> = basis.iter().map(|e| e.trace()).collect();
        p.set_objective(&c).unwrap();
        solve_sdp(&p, 1e-9)
    }

    #[test]
    fn two_by_two_determinant_example() {
        let mut p = SdpProblem::new(1);
        p.add_lmi(
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            vec![Matrix::identity(2, 2)],
        )
        .unwrap();
        p.set_objective(&[1.0]).unwrap();
        let sol = solve_sdp(&p, 1e-9);
        assert_eq!(sol.status, SdpStatus::Optimal, "{}", sol.message);
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "{}", sol.x[0]);
        assert!(sol.min_margin >= -1e-9);
    }

    #[test]
    fn lyapunov_trace_example() {
        let sol = lyapunov_trace(&(-Matrix::identity(2, 2)));
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-6, "{}", sol.objective);
        let pm = symmetric_from_coordinates(2, sol.x.as_slice());
        assert!((pm - Matrix::identity(2, 2) * 0.5).norm() < 1e-5);
    }

    #[test]
    fn lyapunov_feasibility_for_seeded_hurwitz_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4;
        let mut a = Matrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let shift = crate::numerics::max_eig_real(&a).unwrap().max_real_part + 0.5;
        a -= Matrix::identity(n, n) * shift;
        let basis = symmetric_basis(n);
        let mut p = SdpProblem::new(basis.len());
        p.add_lmi_nsd(Matrix::zeros(n, n), basis.iter().map(|e| a.transpose() * e + e * &a).collect())
            .unwrap();
        p.add_lmi(Matrix::zeros(n, n), basis.clone()).unwrap();
        // Normalization excludes P = 0.
        p.add_lmi_nsd(-Matrix::identity(n, n) * 10.0, basis.clone()).unwrap();
        let sol = solve_sdp(&p, 1e-8);
        assert_eq!(sol.status, SdpStatus::Optimal);
        let pm = symmetric_from_coordinates(n, sol.x.as_slice());
        assert!(crate::numerics::sym_min_eig(&pm) > 0.0);
        assert!(crate::numerics::sym_max_eig(&(a.transpose() * &pm + &pm * &a)) < 0.0);
    }

    #[test]
    fn infeasible_constraints_are_reported() {
        // x >= 1 and x <= -1
        let mut p = SdpProblem::new(1);
        p.add_linear_inequality(&[1.0], -1.0).unwrap();
        p.add_linear_inequality(&[-1.0], -1.0).unwrap();
        let sol = solve_sdp(&p, 1e-8);
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn unstable_lyapunov_is_infeasible() {
        let n = 2;
        let a = Matrix::identity(n, n) * 0.3;
        let basis = symmetric_basis(n);
        let mut p = SdpProblem::new(basis.len());
        p.add_lmi_nsd(Matrix::identity(n, n), basis.iter().map(|e| a.transpose() * e + e * &a).collect())
            .unwrap();
        p.add_lmi(Matrix::zeros(n, n), basis.clone()).unwrap();
        p.set_variable_bound(1e4);
        assert_eq!(solve_sdp(&p, 1e-8).status, SdpStatus::Infeasible);
    }

    #[test]
    fn linear_program_with_bound() {
        // maximize x1 + x2 in the unit ball and x1 <= 0.5
        let mut p = SdpProblem::new(2);
        p.add_linear_inequality(&[-1.0, 0.0], 0.5).unwrap();
        p.set_objective(&[-1.0, -1.0]).unwrap();
        p.set_variable_bound(1.0);
        let sol = solve_sdp(&p, 1e-9);
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-5 && (sol.x[1] - 0.75f64.sqrt()).abs() < 1e-5, "{:?}", sol.x);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut p = SdpProblem::new(1);
        let r = p.add_lmi(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), vec![Matrix::identity(2, 2)]);
        assert!(r.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(30))]

            #[test]
            fn returned_points_satisfy_constraints(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = 3;
                let k = 4;
                let mut p = SdpProblem::new(n);
                let sym = |rng: &mut ChaCha8Rng| {
                    let m = Matrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5);
                    &m + m.transpose()
                };
                let coeffs: Vec<Matrix> = (0..n).map(|_| sym(&mut rng)).collect();
                let f0 = sym(&mut rng);
                p.add_lmi(f0, coeffs).unwrap();
                let c: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                p.set_objective(&c).unwrap();
                p.set_variable_bound(10.0);
                let sol = solve_sdp(&p, 1e-8);
                prop_assert!(sol.status != SdpStatus::NumericalFailure, "{}", sol.message);
                if sol.status == SdpStatus::Optimal {
                    prop_assert!(sol.min_margin >= -1e-8);
                    prop_assert!(sol.x.norm() <= 10.0 + 1e-9);
                }
            }
        }
    }
}
