//! Closed-loop simulation of plant and controller under piecewise-constant
//! disturbances, convergence metrics against the reference optimizer, and
//! time-constant sweeps.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::numerics::{self, Vector};
use crate::plant::Plant;
use crate::problem::{kkt_residual, solve_reference, KktPoint};
use crate::stabilizer::{ControlContext, Controller};

/// Samples in band required for settling.
pub const SETTLE_SAMPLES: usize = 5;
/// State norm treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e6;
/// Step count above which the default step is enlarged.
pub const MAX_STEPS: usize = 400_000;

/// `w(t)` equals the value of the last entry with `time <= t`, zero before
/// the first entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSchedule {
    steps: Vec<(f64, Vector)>,
    dim: usize,
}

impl DisturbanceSchedule {
    pub fn new(dim: usize, steps: Vec<(f64, Vector)>) -> Result<Self> {
        for (k, (t, v)) in steps.iter().enumerate() {
            if v.len() != dim {
                return Err(invalid(format!("schedule entry {k} has length {} instead of {dim}", v.len())));
            }
            if !t.is_finite() || *t < 0.0 {
                return Err(invalid(format!("schedule time {t} must be finite and nonnegative")));
            }
            if k > 0 && !(steps[k - 1].0 < *t) {
                return Err(invalid("schedule times must be strictly increasing"));
            }
        }
        Ok(Self { steps, dim })
    }

    pub fn constant(w: Vector) -> Self {
        let dim = w.len();
        Self { steps: vec![(0.0, w)], dim }
    }

    pub fn at(&self, t: f64) -> Vector {
        self.steps
            .iter()
            .rev()
            .find(|(s, _)| *s <= t)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| Vector::zeros(self.dim))
    }

    /// Interval boundaries `[t_k, t_{k+1})` covering `[0, horizon]` with the
    /// disturbance on each.
    pub fn intervals(&self, horizon: f64) -> Vec<(f64, f64, Vector)> {
        let mut starts: Vec<f64> = vec![0.0];
        starts.extend(self.steps.iter().map(|(t, _)| *t).filter(|t| *t > 0.0 && *t < horizon));
        starts
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let e = starts.get(k + 1).copied().unwrap_or(horizon);
                (s, e, self.at(s))
            })
            .collect()
    }

    pub fn last_time(&self) -> f64 {
        self.steps.last().map(|(t, _)| *t).unwrap_or(0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> &[(f64, Vector)] {
        &self.steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub stationarity: f64,
    pub feasibility: f64,
    pub u_error: f64,
    /// Band around `u*` used for settling times.
    pub settle_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stationarity: 1e-4,
            feasibility: 1e-4,
            u_error: 1e-3,
            settle_band: 1e-3,
        }
    }
}

/// A closed-loop experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: Plant,
    pub ctx: ControlContext,
    pub controller: Controller,
    pub schedule: DisturbanceSchedule,
    pub horizon: f64,
    /// Integration step; `None` selects [`default_dt`].
    pub dt: Option<f64>,
    /// Initial plant state; `None` starts at the origin.
    pub x0: Option<Vector>,
    /// Initial controller state; `None` uses the controller default.
    pub xc0: Option<Vector>,
    pub tolerances: Tolerances,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.controller.validate(&self.ctx)?;
        if self.plant.inputs() != self.ctx.prob.inputs()
            || self.plant.outputs() != self.ctx.prob.outputs()
            || self.plant.disturbances() != self.ctx.prob.disturbances()
        {
            return Err(invalid("plant dimensions do not match the problem"));
        }
        if self.schedule.dim() != self.plant.disturbances() {
            return Err(invalid("schedule dimension does not match the plant"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || self.horizon < self.schedule.last_time() {
            return Err(invalid("horizon must be positive and not before the last schedule time"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt <= self.horizon) {
                return Err(invalid("dt must be positive and at most the horizon"));
            }
        }
        if self.controller.output_uses_measurement() && !self.plant.is_strictly_proper() {
            return Err(Error::Precondition(
                "the inversion controller needs D = 0; feedthrough would create an algebraic loop".into(),
            ));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.plant.states() {
                return Err(invalid("initial plant state has the wrong length"));
            }
        }
        if let Some(xc0) = &self.xc0 {
            if xc0.len() != self.controller.state_dim(&self.ctx) {
                return Err(invalid("initial controller state has the wrong length"));
            }
        }
        Ok(())
    }

    /// Step actually used: the requested one or the default, adjusted so an
    /// integer number of steps spans the horizon.
    pub fn step(&self) -> Result<(f64, usize)> {
        let dt = match self.dt {
            Some(dt) => dt,
            None => default_dt(&self.plant, &self.controller, self.horizon)?,
        };
        let n = (self.horizon / dt - 1e-9).ceil().max(1.0) as usize;
        Ok((self.horizon / n as f64, n))
    }

    /// Reference optimum on every disturbance interval.
    pub fn oracle(&self) -> Result<Vec<(f64, f64, KktPoint)>> {
        self.schedule
            .intervals(self.horizon)
            .into_iter()
            .map(|(s, e, w)| Ok((s, e, solve_reference(&self.ctx.prob, &self.ctx.gains, &w)?)))
            .collect()
    }
}

fn min_time_constant(c: &Controller) -> f64 {
    match c {
        Controller::PrimalDual(p) => p.tau_p.min(p.tau_d),
        Controller::Inversion(i) => i.tau,
        Controller::TwoLoop(t) => t.tau1.min(t.tau2),
        Controller::StaticGain(s) => s.tau,
    }
}

fn max_time_constant(c: &Controller) -> f64 {
    match c {
        Controller::PrimalDual(p) => p.tau_p.max(p.tau_d),
        Controller::Inversion(i) => i.tau,
        Controller::TwoLoop(t) => t.tau1.max(t.tau2),
        Controller::StaticGain(s) => s.tau,
    }
}

/// `min(tau_min, 1 / rho(A)) / 200`, enlarged if the horizon would need more
/// than [`MAX_STEPS`] steps.
pub fn default_dt(plant: &Plant, controller: &Controller, horizon: f64) -> Result<f64> {
    let radius = numerics::spectral_radius(plant.a())?;
    let plant_scale = 1.0 / radius.max(1e-12);
    let dt = min_time_constant(controller).min(plant_scale) / 200.0;
    Ok(dt.max(horizon / MAX_STEPS as f64))
}

/// One recorded sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub u: Vector,
    pub z: Vector,
    pub xc: Vector,
    pub kkt_stationarity: f64,
    pub kkt_feasibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub z: Vec<Vector>,
    pub xc: Vec<Vector>,
    pub kkt_stationarity: Vec<f64>,
    pub kkt_feasibility: Vec<f64>,
    /// Sample indices at which the disturbance switches.
    pub events: Vec<usize>,
    pub divergence: Option<Divergence>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max_t |u(t)|_inf`.
    pub fn max_abs_input(&self) -> f64 {
        self.u.iter().map(|u| u.amax()).fold(0.0, f64::max)
    }

    pub fn sample(&self, k: usize) -> Sample {
        Sample {
            t: self.times[k],
            x: self.x[k].clone(),
            u: self.u[k].clone(),
            z: self.z[k].clone(),
            xc: self.xc[k].clone(),
            kkt_stationarity: self.kkt_stationarity[k],
            kkt_feasibility: self.kkt_feasibility[k],
        }
    }

    /// CSV with header `t,x_0..,u_0..,z_0..,ctrl_0..,kkt_stat,kkt_feas` and
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (nx, nu, nz) = (
            self.x.first().map_or(0, |v| v.len()),
            self.u.first().map_or(0, |v| v.len()),
            self.z.first().map_or(0, |v| v.len()),
        );
        let nc = self.xc.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("x_{i}")));
        header.extend((0..nu).map(|i| format!("u_{i}")));
        header.extend((0..nz).map(|i| format!("z_{i}")));
        header.extend((0..nc).map(|i| format!("ctrl_{i}")));
        header.push("kkt_stat".into());
        header.push("kkt_feas".into());
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            push_num(&mut line, self.times[k]);
            for v in self.x[k].iter().chain(self.u[k].iter()).chain(self.z[k].iter()).chain(self.xc[k].iter()) {
                line.push(',');
                push_num(&mut line, *v);
            }
            line.push(',');
            push_num(&mut line, self.kkt_stationarity[k]);
            line.push(',');
            push_num(&mut line, self.kkt_feasibility[k]);
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn push_num(s: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(s, "{v:.16e}");
}

fn concat(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

struct ClosedLoop<'a> {
    s: &'a Scenario,
    n: usize,
}

impl ClosedLoop<'_> {
    fn signals(&self, state: &Vector, w: &Vector) -> Result<(Vector, Vector, Vector, Vector)> {
        let x = state.rows(0, self.n).into_owned();
        let xc = state.rows(self.n, state.len() - self.n).into_owned();
        let plant = &self.s.plant;
        let u = if self.s.controller.output_uses_measurement() {
            let zm = plant.output_without_feedthrough(&x, w);
            self.s.controller.output(&self.s.ctx, &xc, &zm)?
        } else {
            self.s.controller.output(&self.s.ctx, &xc, &Vector::zeros(plant.outputs()))?
        };
        let z = plant.output(&x, &u, w);
        Ok((x, xc, u, z))
    }

    fn rhs(&self, state: &Vector, w: &Vector) -> Result<Vector> {
        let (x, xc, u, z) = self.signals(state, w)?;
        let dx = self.s.plant.state_derivative(&x, &u, w);
        let dxc = self.s.controller.derivative(&self.s.ctx, &xc, &z, &u, w)?;
        Ok(concat(&dx, &dxc))
    }

    fn sample(&self, t: f64, state: &Vector, w: &Vector) -> Result<Sample> {
        let (x, xc, u, z) = self.signals(state, w)?;
        let mu = self.s.controller.multiplier(&self.s.ctx, &xc, &u, &z)?;
        let (st, fe) = kkt_residual(&self.s.ctx.prob, &self.s.ctx.gains, &u, &z, &mu, w)?;
        Ok(Sample {
            t,
            x,
            u,
            z,
            xc,
            kkt_stationarity: st,
            kkt_feasibility: fe,
        })
    }
}

/// Integrates the closed loop with RK4, `w` held over each step, and feeds
/// every sample to `observe`. Divergence ends the run and is returned, not
/// raised.
pub fn run_with<F: FnMut(&Sample, bool)>(s: &Scenario, mut observe: F) -> Result<Option<Divergence>> {
    s.validate()?;
    let (dt, steps) = s.step()?;
    let cl = ClosedLoop { s, n: s.plant.states() };
    let x0 = s.x0.clone().unwrap_or_else(|| Vector::zeros(s.plant.states()));
    let xc0 = s.xc0.clone().unwrap_or_else(|| s.controller.initial_state(&s.ctx));
    let mut state = concat(&x0, &xc0);
    let diverged = |time: f64, reason: String| Ok(Some(Divergence { time, reason }));
    let mut w_prev: Option<Vector> = None;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let w = s.schedule.at(t);
        let switched = w_prev.as_ref().is_some_and(|p| *p != w);
        let smp = match cl.sample(t, &state, &w) {
            Ok(v) => v,
            Err(e) => return diverged(t, e.to_string()),
        };
        observe(&smp, switched);
        w_prev = Some(w.clone());
        if k == steps {
            break;
        }
        let f = |_t: f64, v: &Vector| cl.rhs(v, &w);
        match numerics::rk4_step(&f, t, &state, dt) {
            Ok(next) => state = next,
            Err(e) => return diverged(t + dt, e.to_string()),
        }
        if !state.iter().all(|v| v.is_finite()) || state.norm() > DIVERGENCE_NORM {
            return diverged(t + dt, "state norm exceeded the divergence threshold".into());
        }
    }
    Ok(None)
}

/// Full trace of a run.
pub fn run(s: &Scenario) -> Result<Trace> {
    run_strided(s, 1, |_| {})
}

/// Evaluates every integration sample but records only every `stride`-th
/// one, the samples at disturbance switches and the last one.
pub fn run_decimated(s: &Scenario, stride: usize) -> Result<(Trace, ConvergenceReport)> {
    let oracle = s.oracle()?;
    let mut ev = Evaluator::new(s, oracle);
    let tr = run_strided(s, stride.max(1), |smp| ev.observe(smp))?;
    let rep = ev.finish(tr.divergence.clone());
    Ok((tr, rep))
}

/// Stride that keeps a trace of `s` at or below `max_rows` rows, not
/// counting switch samples.
pub fn stride_for_rows(s: &Scenario, max_rows: usize) -> Result<usize> {
    let (_, steps) = s.step()?;
    Ok((steps + 1).div_ceil(max_rows.max(1)))
}

fn run_strided<F: FnMut(&Sample)>(s: &Scenario, stride: usize, mut each: F) -> Result<Trace> {
    let (_, steps) = s.step()?;
    let mut k = 0usize;
    let mut tr = Trace {
        times: vec![],
        x: vec![],
        u: vec![],
        z: vec![],
        xc: vec![],
        kkt_stationarity: vec![],
        kkt_feasibility: vec![],
        events: vec![],
        divergence: None,
    };
    let mut pending: Option<Sample> = None;
    let div = run_with(s, |smp, switched| {
        each(smp);
        let keep = switched || k % stride == 0 || k == steps;
        k += 1;
        if !keep {
            pending = Some(smp.clone());
            return;
        }
        pending = None;
        if switched {
            tr.events.push(tr.times.len());
        }
        tr.times.push(smp.t);
        tr.x.push(smp.x.clone());
        tr.u.push(smp.u.clone());
        tr.z.push(smp.z.clone());
        tr.xc.push(smp.xc.clone());
        tr.kkt_stationarity.push(smp.kkt_stationarity);
        tr.kkt_feasibility.push(smp.kkt_feasibility);
    })?;
    // A divergent run ends early; its last valid sample is kept.
    if let Some(smp) = pending {
        tr.times.push(smp.t);
        tr.x.push(smp.x);
        tr.u.push(smp.u);
        tr.z.push(smp.z);
        tr.xc.push(smp.xc);
        tr.kkt_stationarity.push(smp.kkt_stationarity);
        tr.kkt_feasibility.push(smp.kkt_feasibility);
    }
    tr.divergence = div;
    Ok(tr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalReport {
    pub start: f64,
    pub end: f64,
    pub u_star: Vector,
    pub z_star: Vector,
    /// Time after `start` at which `|u - u*|` first stays in band for
    /// [`SETTLE_SAMPLES`] samples.
    pub settling_time: Option<f64>,
    /// Largest engineering-constraint violation `|H_z z + H_u u + H_w w|_inf`.
    pub max_constraint_violation: f64,
    pub final_u_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub final_stationarity: f64,
    pub final_feasibility: f64,
    pub final_u_error: f64,
    pub intervals: Vec<IntervalReport>,
    /// Smallest distance of `u(t)` to the boundary of the f0 domain.
    pub min_domain_margin: Option<f64>,
    pub final_u: Vector,
    pub final_z: Vector,
    pub divergence: Option<Divergence>,
    pub success: bool,
}

/// Streaming evaluator; feed samples in time order.
pub struct Evaluator<'a> {
    s: &'a Scenario,
    oracle: Vec<(f64, f64, KktPoint)>,
    intervals: Vec<IntervalReport>,
    streak: Vec<usize>,
    streak_start: Vec<f64>,
    last: Option<Sample>,
    domain: Option<(Vector, Vector)>,
    min_margin: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(s: &'a Scenario, oracle: Vec<(f64, f64, KktPoint)>) -> Self {
        let intervals = oracle
            .iter()
            .map(|(a, b, k)| IntervalReport {
                start: *a,
                end: *b,
                u_star: k.u_star.clone(),
                z_star: k.z_star.clone(),
                settling_time: None,
                max_constraint_violation: 0.0,
                final_u_error: f64::NAN,
            })
            .collect::<Vec<_>>();
        let n = intervals.len();
        Self {
            s,
            oracle,
            intervals,
            streak: vec![0; n],
            streak_start: vec![0.0; n],
            last: None,
            domain: s.ctx.prob.f0.domain_box(),
            min_margin: f64::INFINITY,
        }
    }

    fn interval_of(&self, t: f64) -> usize {
        let n = self.oracle.len();
        (0..n).rev().find(|&k| self.oracle[k].0 <= t).unwrap_or(0)
    }

    pub fn observe(&mut self, smp: &Sample) {
        let k = self.interval_of(smp.t);
        let band = self.s.tolerances.settle_band;
        let w = self.s.schedule.at(smp.t);
        let iv = &mut self.intervals[k];
        let err = (&smp.u - &iv.u_star).norm();
        iv.final_u_error = err;
        let viol = self.s.ctx.prob.constraint_violation(&smp.z, &smp.u, &w).amax();
        iv.max_constraint_violation = iv.max_constraint_violation.max(viol);
        if iv.settling_time.is_none() {
            if err <= band {
                if self.streak[k] == 0 {
                    self.streak_start[k] = smp.t;
                }
                self.streak[k] += 1;
                if self.streak[k] >= SETTLE_SAMPLES {
                    iv.settling_time = Some(self.streak_start[k] - iv.start);
                }
            } else {
                self.streak[k] = 0;
            }
        }
        if let Some((lo, hi)) = &self.domain {
            for i in 0..smp.u.len() {
                self.min_margin = self.min_margin.min(smp.u[i] - lo[i]).min(hi[i] - smp.u[i]);
            }
        }
        self.last = Some(smp.clone());
    }

    pub fn finish(self, divergence: Option<Divergence>) -> ConvergenceReport {
        let tol = &self.s.tolerances;
        let last = self.last.clone();
        let (fs, ff, fu, u, z) = match &last {
            Some(smp) => {
                let k = self.interval_of(smp.t);
                (
                    smp.kkt_stationarity,
                    smp.kkt_feasibility,
                    (&smp.u - &self.intervals[k].u_star).norm(),
                    smp.u.clone(),
                    smp.z.clone(),
                )
            }
            None => (f64::NAN, f64::NAN, f64::NAN, Vector::zeros(0), Vector::zeros(0)),
        };
        let success = divergence.is_none()
            && fs <= tol.stationarity
            && ff <= tol.feasibility
            && fu <= tol.u_error
            && (self.domain.is_none() || self.min_margin > 0.0);
        ConvergenceReport {
            final_stationarity: fs,
            final_feasibility: ff,
            final_u_error: fu,
            intervals: self.intervals,
            min_domain_margin: self.domain.as_ref().map(|_| self.min_margin),
            final_u: u,
            final_z: z,
            divergence,
            success,
        }
    }
}

/// Metrics of a recorded trace against per-interval oracle points.
pub fn evaluate(s: &Scenario, trace: &Trace, oracle: Vec<(f64, f64, KktPoint)>) -> ConvergenceReport {
    let mut ev = Evaluator::new(s, oracle);
    for k in 0..trace.len() {
        ev.observe(&trace.sample(k));
    }
    ev.finish(trace.divergence.clone())
}

/// Runs and evaluates without storing the trace.
pub fn run_and_evaluate(s: &Scenario) -> Result<ConvergenceReport> {
    let oracle = s.oracle()?;
    let mut ev = Evaluator::new(s, oracle);
    let div = run_with(s, |smp, _| ev.observe(smp))?;
    Ok(ev.finish(div))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepParameter {
    /// Scales every time constant; two-loop keeps `tau1 / tau2` and sets
    /// `tau2` to the grid value.
    Tau,
    /// Two-loop only: `tau1 = value * tau2`.
    Ratio,
}

impl SweepParameter {
    pub fn apply(self, c: &Controller, v: f64) -> Result<Controller> {
        let mut c = c.clone();
        match (self, &mut c) {
            (SweepParameter::Tau, Controller::PrimalDual(p)) => {
                p.tau_p = v;
                p.tau_d = v;
            }
            (SweepParameter::Tau, Controller::Inversion(i)) => i.tau = v,
            (SweepParameter::Tau, Controller::TwoLoop(t)) => {
                let ratio = t.tau1 / t.tau2;
                t.tau2 = v;
                t.tau1 = ratio * v;
            }
            (SweepParameter::Tau, Controller::StaticGain(s)) => s.tau = v,
            (SweepParameter::Ratio, Controller::TwoLoop(t)) => t.tau1 = v * t.tau2,
            (SweepParameter::Ratio, other) => {
                return Err(invalid(format!("ratio sweeps need a two-loop controller, not {}", other.kind_name())));
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub success: bool,
    pub diverged: bool,
    /// Settling time of the last interval.
    pub settling_time: Option<f64>,
    pub final_u_error: f64,
    pub final_stationarity: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Once a grid point succeeds, every larger one does too.
    pub fn is_up_set(&self) -> bool {
        let first = self.rows.iter().position(|r| r.success);
        first.is_none_or(|k| self.rows[k..].iter().all(|r| r.success))
    }

    /// Successful points form one contiguous run.
    pub fn is_contiguous(&self) -> bool {
        let idx: Vec<usize> = self.rows.iter().enumerate().filter(|(_, r)| r.success).map(|(k, _)| k).collect();
        idx.windows(2).all(|w| w[1] == w[0] + 1)
    }

    /// Smallest grid value from which all larger values succeed.
    pub fn threshold(&self) -> Option<f64> {
        let mut k = self.rows.len();
        while k > 0 && self.rows[k - 1].success {
            k -= 1;
        }
        self.rows.get(k).map(|r| r.value)
    }

    /// Largest contiguous successful run `(first, last)` values.
    pub fn largest_success_region(&self) -> Option<(f64, f64)> {
        let mut best: Option<(usize, usize)> = None;
        let mut k = 0;
        while k < self.rows.len() {
            if self.rows[k].success {
                let s = k;
                while k + 1 < self.rows.len() && self.rows[k + 1].success {
                    k += 1;
                }
                if best.is_none_or(|(a, b)| k - s > b - a) {
                    best = Some((s, k));
                }
            }
            k += 1;
        }
        best.map(|(a, b)| (self.rows[a].value, self.rows[b].value))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "value,success,diverged,settling_time,final_u_error,final_stationarity,horizon")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{},{},{},{:.16e},{:.16e},{:.16e}",
                r.value,
                r.success,
                r.diverged,
                r.settling_time.map(|v| format!("{v:.16e}")).unwrap_or_default(),
                r.final_u_error,
                r.final_stationarity,
                r.horizon
            )?;
        }
        Ok(())
    }
}

/// One run per grid value, in parallel, results in grid order. The horizon
/// of each run is at least `horizon_factor` times its slowest time constant
/// past the last schedule switch.
pub fn tau_sweep(s: &Scenario, parameter: SweepParameter, grid: &[f64], horizon_factor: f64) -> Result<SweepTable> {
    if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("sweep grid values must be positive"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("sweep grid must be strictly increasing"));
    }
    let oracle = s.oracle()?;
    let scenarios: Vec<Scenario> = grid
        .iter()
        .map(|&v| {
            let c = parameter.apply(&s.controller, v)?;
            let mut sc = s.clone();
            sc.horizon = s.horizon.max(s.schedule.last_time() + horizon_factor * max_time_constant(&c));
            sc.controller = c;
            Ok(sc)
        })
        .collect::<Result<_>>()?;
    let rows = scenarios
        .par_iter()
        .zip(grid.par_iter())
        .map(|(sc, &value)| {
            let mut oracle = oracle.clone();
            if let Some(last) = oracle.last_mut() {
                last.1 = sc.horizon;
            }
            let mut ev = Evaluator::new(sc, oracle);
            let div = run_with(sc, |smp, _| ev.observe(smp))?;
            let rep = ev.finish(div);
            Ok(SweepRow {
                value,
                success: rep.success,
                diverged: rep.divergence.is_some(),
                settling_time: rep.intervals.last().and_then(|i| i.settling_time),
                final_u_error: rep.final_u_error,
                final_stationarity: rep.final_stationarity,
                horizon: sc.horizon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { parameter, rows })
}
