//! Robust static-gain synthesis for the reduced controller dynamics.
//!
//! With `u = K eta` and the gradient nonlinearities pulled out as sector
//! bounded channels `p1 = grad f~0(q1)`, `p2 = grad g~0(q2)`, the reduced
//! dynamics are the linear fractional system
//!
//! ```text
//! eta' = A eta + B u + B1 p + B2 w
//! q    = C1 eta + E1 u + D1 p + D12 w
//! z    = C2 eta + E2 u + D21 p + D2 w
//! ```
//!
//! A gain is certified by the dissipation inequality with storage `eta'P eta`,
//! per-channel sector multipliers `Theta_i / theta_i` and performance
//! `|z|^2 <= gamma^2 |w|^2`. The dual of that inequality is affine in
//! `(Y, Z, theta, gamma^2)` with `Y = P^-1`, `Z = K Y`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Matrix, Vector};
use crate::optimality::FeasibleSubspace;
use crate::plant::DcGains;
use crate::problem::{ConstraintGains, ConvexFunction, OssProblem, SmoothResidual};
use crate::sdp::{self, SdpProblem, SdpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvexityClass {
    /// (i) merely convex.
    Convex,
    /// (ii) convex with `L`-Lipschitz gradient.
    SmoothConvex,
    /// (iii) `m`-strongly convex.
    StronglyConvex,
    /// (iv) `m`-strongly convex with `L`-Lipschitz gradient.
    StronglyConvexSmooth,
}

impl ConvexityClass {
    pub fn from_parameters(m: f64, l: f64) -> Self {
        match (m > 0.0, l.is_finite()) {
            (true, true) => ConvexityClass::StronglyConvexSmooth,
            (false, true) => ConvexityClass::SmoothConvex,
            (true, false) => ConvexityClass::StronglyConvex,
            (false, false) => ConvexityClass::Convex,
        }
    }

    /// 2x2 core on `(dp, dq)`; the form is nonnegative on increments of a
    /// gradient in the class.
    pub fn core(self, m: f64, l: f64) -> Result<Matrix> {
        let bad = || invalid(format!("sector parameters m={m}, L={l} do not fit class {self:?}"));
        let c = match self {
            ConvexityClass::StronglyConvexSmooth => {
                if !(m > 0.0 && m <= l && l.is_finite()) {
                    return Err(bad());
                }
                [-2.0, m + l, -2.0 * m * l]
            }
            ConvexityClass::Convex => [0.0, 1.0, 0.0],
            ConvexityClass::SmoothConvex => {
                if !(l > 0.0 && l.is_finite()) {
                    return Err(bad());
                }
                [-2.0, l, 0.0]
            }
            ConvexityClass::StronglyConvex => {
                if !(m > 0.0) {
                    return Err(bad());
                }
                [0.0, 1.0, -2.0 * m]
            }
        };
        Ok(Matrix::from_row_slice(2, 2, &[c[0], c[1], c[1], c[2]]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorMultiplier {
    pub class: ConvexityClass,
    pub theta_core: Matrix,
    pub channel_dim: usize,
    pub theta: f64,
}

pub fn sector_matrix(class: ConvexityClass, m: f64, l: f64, dim: usize) -> Result<SectorMultiplier> {
    Ok(SectorMultiplier {
        class,
        theta_core: class.core(m, l)?,
        channel_dim: dim,
        theta: 1.0,
    })
}

/// Multiplier for the residual of `c`, or `None` when the residual vanishes.
pub fn multiplier_for(c: &ConvexFunction) -> Result<Option<SectorMultiplier>> {
    if c.residual().is_none() {
        return Ok(None);
    }
    let s = c.sector();
    sector_matrix(s.class(), s.m, s.l, c.dim()).map(Some)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfrSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub b1: Matrix,
    pub b2: Matrix,
    pub c1: Matrix,
    pub e1: Matrix,
    pub d1: Matrix,
    pub d12: Matrix,
    pub c2: Matrix,
    pub e2: Matrix,
    pub d21: Matrix,
    pub d2: Matrix,
    pub rho: f64,
    /// Sizes of the two uncertainty channels (`m`, `r`).
    pub channel_dims: (usize, usize),
}

impl LfrSystem {
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn uncertainty_dim(&self) -> usize {
        self.b1.ncols()
    }
    pub fn disturbances(&self) -> usize {
        self.b2.ncols()
    }
    pub fn performance_dim(&self) -> usize {
        self.c2.nrows()
    }

    /// `(eta', q, z)` at the given signals.
    pub fn evaluate(&self, eta: &Vector, u: &Vector, p: &Vector, w: &Vector) -> (Vector, Vector, Vector) {
        (
            &self.a * eta + &self.b * u + &self.b1 * p + &self.b2 * w,
            &self.c1 * eta + &self.e1 * u + &self.d1 * p + &self.d12 * w,
            &self.c2 * eta + &self.e2 * u + &self.d21 * p + &self.d2 * w,
        )
    }
}

/// Reduced dynamics of the two-loop controller with one time constant and
/// performance outputs `z1 = eta1'`, `z2 = rho eta2'`.
pub fn assemble_lfr(fs: &FeasibleSubspace, prob: &OssProblem, gains: &DcGains, cg: &ConstraintGains, rho: f64) -> Result<LfrSystem> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("performance weight must be positive"));
    }
    if matches!(prob.f0.residual(), SmoothResidual::Custom(_)) && !prob.f0.has_quadratic() {
        return Err(Error::Precondition("f0 needs an explicit quadratic/residual split".into()));
    }
    let (m, r, n_c, n_w, q) = (gains.inputs(), gains.outputs(), prob.constraints(), gains.disturbances(), fs.q());
    let n = q + n_c;
    let q1 = prob.f0.quadratic_matrix();
    let q2 = prob.g0.quadratic_matrix();
    let qq = fs.t_u.transpose() * &q1 + fs.t_z.transpose() * &q2 * &gains.g_u;
    let t2g = fs.t_z.transpose() * &q2 * &gains.g_w;

    let b = numerics::vstack(&[&(-&qq), &(-&cg.n)]);
    let mut b1 = Matrix::zeros(n, m + r);
    b1.view_mut((0, 0), (q, m)).copy_from(&(-fs.t_u.transpose()));
    b1.view_mut((0, m), (q, r)).copy_from(&(-fs.t_z.transpose()));
    let b2 = numerics::vstack(&[&(-&t2g), &(-&cg.n_tilde)]);
    let e1 = numerics::vstack(&[&Matrix::identity(m, m), &gains.g_u]);
    let d12 = numerics::vstack(&[&Matrix::zeros(m, n_w), &gains.g_w]);
    let e2 = numerics::vstack(&[&(-&qq), &(-&cg.n * rho)]);
    let d2 = numerics::vstack(&[&(-&t2g), &(-&cg.n_tilde * rho)]);
    Ok(LfrSystem {
        a: Matrix::zeros(n, n),
        b,
        d21: b1.clone(),
        b1,
        b2,
        c1: Matrix::zeros(m + r, n),
        e1,
        d1: Matrix::zeros(m + r, m + r),
        d12,
        c2: Matrix::zeros(n, n),
        e2,
        d2,
        rho,
        channel_dims: (m, r),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthesisMode {
    FixedGamma(f64),
    MinimizeGamma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    /// Radius of the decision-variable ball.
    pub variable_bound: f64,
    pub tol: f64,
    /// Relative width at which the gamma bisection stops.
    pub bisection_tol: f64,
    /// The returned gain is computed at `backoff * gamma_min^2`.
    pub backoff: f64,
    /// Guaranteed exponential decay rate `alpha >= 0` of the storage
    /// function, imposed by replacing `A` with `A + alpha I`.
    pub decay_rate: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            variable_bound: 1e4,
            tol: 1e-9,
            bisection_tol: 1e-3,
            backoff: 1.1,
            decay_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub k: Matrix,
    pub y: Matrix,
    pub z: Matrix,
    pub thetas: (Option<f64>, Option<f64>),
    /// Performance level certified by `k`.
    pub gamma: f64,
    /// Smallest feasible level found by bisection (minimize mode).
    pub gamma_min: Option<f64>,
    /// Largest eigenvalue of the normalized primal certificate; negative.
    pub certificate_margin: f64,
}

/// Active uncertainty channel: which columns of `p`/rows of `q` and its
/// multiplier.
struct Channel<'a> {
    offset: usize,
    dim: usize,
    mult: &'a SectorMultiplier,
}

struct DualLayout<'a> {
    n: usize,
    m: usize,
    channels: Vec<Channel<'a>>,
    gamma_var: bool,
}

impl DualLayout<'_> {
    fn n_y(&self) -> usize {
        self.n * (self.n + 1) / 2
    }
    fn n_z(&self) -> usize {
        self.m * self.n
    }
    fn theta_index(&self, k: usize) -> usize {
        self.n_y() + self.n_z() + k
    }
    fn gamma_index(&self) -> usize {
        self.n_y() + self.n_z() + self.channels.len()
    }
    fn nvar(&self) -> usize {
        self.gamma_index() + usize::from(self.gamma_var)
    }
    fn p_dim(&self) -> usize {
        self.channels.iter().map(|c| c.dim).sum()
    }

    fn unpack(&self, v: &Vector) -> (Matrix, Matrix) {
        let y = sdp::symmetric_from_coordinates(self.n, &v.as_slice()[..self.n_y()]);
        let z = Matrix::from_column_slice(self.m, self.n, &v.as_slice()[self.n_y()..self.n_y() + self.n_z()]);
        (y, z)
    }
}

/// Rows/columns of the active channels.
fn channel_selection(channels: &[Channel<'_>], total: usize) -> Matrix {
    let p: usize = channels.iter().map(|c| c.dim).sum();
    let mut s = Matrix::zeros(p, total);
    let mut row = 0;
    for ch in channels {
        for k in 0..ch.dim {
            s[(row, ch.offset + k)] = 1.0;
            row += 1;
        }
    }
    s
}

/// Dual matrix `[-W~'; I]' Pi~^-1 [-W~'; I]` at decision vector `v`.
fn dual_matrix(lfr: &LfrSystem, layout: &DualLayout<'_>, v: &Vector, gamma2_fixed: f64) -> Matrix {
    let (y, z) = layout.unpack(v);
    let sel = channel_selection(&layout.channels, lfr.uncertainty_dim());
    let n = layout.n;
    let np = layout.p_dim();
    let nw = lfr.disturbances();
    let nz = lfr.performance_dim();
    let b1 = &lfr.b1 * sel.transpose();
    let c1 = &sel * &lfr.c1;
    let e1 = &sel * &lfr.e1;
    let d1 = &sel * &lfr.d1 * sel.transpose();
    let d12 = &sel * &lfr.d12;
    let d21 = &lfr.d21 * sel.transpose();

    let out_dim = n + np + nz;
    let in_dim = n + np + nw;
    // W~ : in-dual <- out-dual block matrix.
    let mut wt = Matrix::zeros(out_dim, in_dim);
    wt.view_mut((0, 0), (n, n)).copy_from(&(&lfr.a * &y + &lfr.b * &z));
    wt.view_mut((0, n), (n, np)).copy_from(&b1);
    wt.view_mut((0, n + np), (n, nw)).copy_from(&lfr.b2);
    wt.view_mut((n, 0), (np, n)).copy_from(&(&c1 * &y + &e1 * &z));
    wt.view_mut((n, n), (np, np)).copy_from(&d1);
    wt.view_mut((n, n + np), (np, nw)).copy_from(&d12);
    wt.view_mut((n + np, 0), (nz, n)).copy_from(&(&lfr.c2 * &y + &lfr.e2 * &z));
    wt.view_mut((n + np, n), (nz, np)).copy_from(&d21);
    wt.view_mut((n + np, n + np), (nz, nw)).copy_from(&lfr.d2);

    let mut g = Matrix::zeros(in_dim + out_dim, out_dim);
    g.view_mut((0, 0), (in_dim, out_dim)).copy_from(&(-wt.transpose()));
    g.view_mut((in_dim, 0), (out_dim, out_dim)).copy_from(&Matrix::identity(out_dim, out_dim));

    let gamma2 = if layout.gamma_var { v[layout.gamma_index()] } else { gamma2_fixed };
    let mut pi = Matrix::zeros(in_dim + out_dim, in_dim + out_dim);
    for k in 0..n {
        pi[(k, in_dim + k)] = 1.0;
        pi[(in_dim + k, k)] = 1.0;
    }
    let mut off = 0;
    for (ci, ch) in layout.channels.iter().enumerate() {
        let theta = v[layout.theta_index(ci)];
        let inv = core_inverse(&ch.mult.theta_core) * theta;
        for k in 0..ch.dim {
            let ip = n + off + k;
            let iq = in_dim + n + off + k;
            pi[(ip, ip)] = inv[(0, 0)];
            pi[(ip, iq)] = inv[(0, 1)];
            pi[(iq, ip)] = inv[(1, 0)];
            pi[(iq, iq)] = inv[(1, 1)];
        }
        off += ch.dim;
    }
    for k in 0..nw {
        pi[(n + np + k, n + np + k)] = -1.0;
    }
    for k in 0..nz {
        pi[(in_dim + n + np + k, in_dim + n + np + k)] = gamma2;
    }
    let f = g.transpose() * pi * g;
    (&f + f.transpose()) * 0.5
}

fn core_inverse(c: &Matrix) -> Matrix {
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
    Matrix::from_row_slice(2, 2, &[c[(1, 1)] / det, -c[(0, 1)] / det, -c[(1, 0)] / det, c[(0, 0)] / det])
}

/// Largest eigenvalue of the primal dissipation matrix divided by its norm.
pub fn primal_certificate(
    lfr: &LfrSystem,
    k: &Matrix,
    p: &Matrix,
    multipliers: (Option<&SectorMultiplier>, Option<&SectorMultiplier>),
    thetas: (Option<f64>, Option<f64>),
    gamma2: f64,
) -> Result<f64> {
    let channels = active_channels(lfr, multipliers)?;
    let th = [thetas.0, thetas.1];
    let theta_by_channel: Vec<f64> = {
        let mut out = vec![];
        if multipliers.0.is_some() {
            out.push(th[0].ok_or_else(|| invalid("missing multiplier for the first channel"))?);
        }
        if multipliers.1.is_some() {
            out.push(th[1].ok_or_else(|| invalid("missing multiplier for the second channel"))?);
        }
        out
    };
    let sel = channel_selection(&channels, lfr.uncertainty_dim());
    let n = lfr.states();
    let np = sel.nrows();
    let nw = lfr.disturbances();
    let nz = lfr.performance_dim();
    let in_dim = n + np + nw;
    let out_dim = n + np + nz;
    let acl = &lfr.a + &lfr.b * k;
    let c1cl = &sel * (&lfr.c1 + &lfr.e1 * k);
    let c2cl = &lfr.c2 + &lfr.e2 * k;
    let mut w = Matrix::zeros(out_dim, in_dim);
    w.view_mut((0, 0), (n, n)).copy_from(&acl);
    w.view_mut((0, n), (n, np)).copy_from(&(&lfr.b1 * sel.transpose()));
    w.view_mut((0, n + np), (n, nw)).copy_from(&lfr.b2);
    w.view_mut((n, 0), (np, n)).copy_from(&c1cl);
    w.view_mut((n, n), (np, np)).copy_from(&(&sel * &lfr.d1 * sel.transpose()));
    w.view_mut((n, n + np), (np, nw)).copy_from(&(&sel * &lfr.d12));
    w.view_mut((n + np, 0), (nz, n)).copy_from(&c2cl);
    w.view_mut((n + np, n), (nz, np)).copy_from(&(&lfr.d21 * sel.transpose()));
    w.view_mut((n + np, n + np), (nz, nw)).copy_from(&lfr.d2);
    let g = numerics::vstack(&[&Matrix::identity(in_dim, in_dim), &w]);

    let mut pi = Matrix::zeros(in_dim + out_dim, in_dim + out_dim);
    pi.view_mut((0, in_dim), (n, n)).copy_from(p);
    pi.view_mut((in_dim, 0), (n, n)).copy_from(p);
    let mut off = 0;
    for (ch, theta) in channels.iter().zip(&theta_by_channel) {
        let c = &ch.mult.theta_core / *theta;
        for kk in 0..ch.dim {
            let ip = n + off + kk;
            let iq = in_dim + n + off + kk;
            pi[(ip, ip)] = c[(0, 0)];
            pi[(ip, iq)] = c[(0, 1)];
            pi[(iq, ip)] = c[(1, 0)];
            pi[(iq, iq)] = c[(1, 1)];
        }
        off += ch.dim;
    }
    for kk in 0..nw {
        pi[(n + np + kk, n + np + kk)] = -1.0;
    }
    for kk in 0..nz {
        pi[(in_dim + n + np + kk, in_dim + n + np + kk)] = 1.0 / gamma2;
    }
    let mm = g.transpose() * pi * g;
    let mm = (&mm + mm.transpose()) * 0.5;
    let scale = numerics::norm2(&mm).max(1e-300);
    Ok(numerics::sym_max_eig(&mm) / scale)
}

fn active_channels<'a>(lfr: &LfrSystem, multipliers: (Option<&'a SectorMultiplier>, Option<&'a SectorMultiplier>)) -> Result<Vec<Channel<'a>>> {
    let (m, r) = lfr.channel_dims;
    let mut out = vec![];
    for (mult, offset, dim) in [(multipliers.0, 0, m), (multipliers.1, m, r)] {
        if let Some(mu) = mult {
            if mu.channel_dim != dim {
                return Err(invalid(format!("multiplier size {} does not match channel size {dim}", mu.channel_dim)));
            }
            let c = &mu.theta_core;
            if c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)] >= 0.0 {
                return Err(Error::Precondition(format!(
                    "sector core of class {:?} is not indefinite; the dual multiplier block is undefined",
                    mu.class
                )));
            }
            out.push(Channel { offset, dim, mult: mu });
        }
    }
    Ok(out)
}

struct Candidate {
    y: Matrix,
    z: Matrix,
    thetas: (Option<f64>, Option<f64>),
}

fn feasibility(lfr: &LfrSystem, channels: Vec<Channel<'_>>, gamma2: f64, opts: &SynthesisOptions) -> Result<Option<Candidate>> {
    let has = (
        channels.iter().any(|c| c.offset == 0 && lfr.channel_dims.0 > 0),
        channels.iter().any(|c| c.offset == lfr.channel_dims.0 && lfr.channel_dims.1 > 0),
    );
    let layout = DualLayout {
        n: lfr.states(),
        m: lfr.inputs(),
        channels,
        gamma_var: false,
    };
    let nv = layout.nvar();
    let f0 = dual_matrix(lfr, &layout, &Vector::zeros(nv), gamma2);
    let fi: Vec<Matrix> = (0..nv)
        .map(|i| {
            let mut e = Vector::zeros(nv);
            e[i] = 1.0;
            dual_matrix(lfr, &layout, &e, gamma2) - &f0
        })
        .collect();
    let mut prob = SdpProblem::new(nv);
    prob.add_lmi(f0, fi)?;
    // Y ≻ 0
    let n = layout.n;
    let mut yi = sdp::symmetric_basis(n);
    yi.extend((0..nv - layout.n_y()).map(|_| Matrix::zeros(n, n)));
    prob.add_lmi(Matrix::zeros(n, n), yi)?;
    for k in 0..layout.channels.len() {
        let mut a = vec![0.0; nv];
        a[layout.theta_index(k)] = 1.0;
        prob.add_linear_inequality(&a, 0.0)?;
    }
    prob.set_variable_bound(opts.variable_bound);
    let sol = sdp::solve_sdp(&prob, opts.tol);
    match sol.status {
        SdpStatus::Optimal if sol.min_margin > 0.0 => {
            let (y, z) = layout.unpack(&sol.x);
            let mut thetas = (None, None);
            let mut idx = 0;
            if has.0 {
                thetas.0 = Some(sol.x[layout.theta_index(idx)]);
                idx += 1;
            }
            if has.1 {
                thetas.1 = Some(sol.x[layout.theta_index(idx)]);
            }
            Ok(Some(Candidate { y, z, thetas }))
        }
        SdpStatus::NumericalFailure => Err(Error::Numeric {
            iterations: sol.iterations,
            message: sol.message,
        }),
        _ => Ok(None),
    }
}

fn finish(
    lfr: &LfrSystem,
    multipliers: (Option<&SectorMultiplier>, Option<&SectorMultiplier>),
    cand: Candidate,
    gamma2: f64,
    gamma_min: Option<f64>,
) -> Result<SynthesisResult> {
    let (yinv, _) = numerics::inverse_with_condition(&cand.y)?;
    let k = &cand.z * &yinv;
    let p = (&yinv + yinv.transpose()) * 0.5;
    let margin = primal_certificate(lfr, &k, &p, multipliers, cand.thetas, gamma2)?;
    if !(margin < -1e-8) {
        return Err(Error::CertificateMismatch { margin });
    }
    Ok(SynthesisResult {
        k,
        y: cand.y,
        z: cand.z,
        thetas: cand.thetas,
        gamma: gamma2.sqrt(),
        gamma_min,
        certificate_margin: margin,
    })
}

pub fn synthesize(
    lfr: &LfrSystem,
    th1: Option<&SectorMultiplier>,
    th2: Option<&SectorMultiplier>,
    mode: SynthesisMode,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    if !(opts.decay_rate >= 0.0 && opts.decay_rate.is_finite()) {
        return Err(invalid("decay rate must be nonnegative"));
    }
    let shifted;
    let lfr = if opts.decay_rate > 0.0 {
        let mut l = lfr.clone();
        let n = l.states();
        l.a += Matrix::identity(n, n) * opts.decay_rate;
        shifted = l;
        &shifted
    } else {
        lfr
    };
    let mults = (th1, th2);
    let chans = || active_channels(lfr, mults);
    match mode {
        SynthesisMode::FixedGamma(gamma) => {
            if !(gamma > 0.0) {
                return Err(invalid("gamma must be positive"));
            }
            let g2 = gamma * gamma;
            match feasibility(lfr, chans()?, g2, opts)? {
                Some(c) => finish(lfr, mults, c, g2, None),
                None => Err(Error::SynthesisInfeasible(format!("no certificate at gamma = {gamma}"))),
            }
        }
        SynthesisMode::MinimizeGamma => {
            const FLOOR: f64 = 1e-8;
            let mut hi = 1.0;
            let mut lo = FLOOR;
            if feasibility(lfr, chans()?, hi, opts)?.is_some() {
                if feasibility(lfr, chans()?, FLOOR, opts)?.is_some() {
                    hi = FLOOR;
                }
            } else {
                while feasibility(lfr, chans()?, hi, opts)?.is_none() {
                    hi *= 10.0;
                    if hi > 1e12 {
                        return Err(Error::SynthesisInfeasible("no certificate for any gamma up to 1e6".into()));
                    }
                }
                lo = hi / 10.0;
            }
            while hi > FLOOR && hi / lo > 1.0 + opts.bisection_tol {
                let mid = (lo * hi).sqrt();
                if feasibility(lfr, chans()?, mid, opts)?.is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let g2 = hi * opts.backoff;
            let cand = feasibility(lfr, chans()?, g2, opts)?
                .ok_or_else(|| Error::SynthesisInfeasible("backed-off level lost feasibility".into()))?;
            finish(lfr, mults, cand, g2, Some(hi.sqrt()))
        }
    }
}

/// Convenience wrapper: subspace, LFR, multipliers and synthesis for `prob`.
pub fn synthesize_for_problem(
    prob: &OssProblem,
    gains: &DcGains,
    fs: &FeasibleSubspace,
    rho: f64,
    mode: SynthesisMode,
    opts: &SynthesisOptions,
) -> Result<(LfrSystem, SynthesisResult)> {
    let cg = ConstraintGains::new(prob, gains);
    let lfr = assemble_lfr(fs, prob, gains, &cg, rho)?;
    let m1 = multiplier_for(&prob.f0)?;
    let m2 = multiplier_for(&prob.g0)?;
    let res = synthesize(&lfr, m1.as_ref(), m2.as_ref(), mode, opts)?;
    Ok((lfr, res))
}
