//! Scenario files: a strict TOML schema, resolution into a runnable
//! [`Scenario`], content hashing and the gains file format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frequency::{BusCost, FrequencyCase, FrequencyModel, GenerationLimits};
use crate::numerics::{Matrix, Vector};
use crate::optimality::FeasibleSubspace;
use crate::plant::{generate_stable_plant, GeneratorOptions, Plant};
use crate::problem::{ConvexFunction, OssProblem, Sector, SmoothResidual};
use crate::simulate::{DisturbanceSchedule, Scenario, SweepParameter, Tolerances};
use crate::stabilizer::{
    two_loop_gains, ControlContext, Controller, InversionController, K2Choice, PrimalDualController,
    StaticGainController, TwoLoopController,
};
use crate::synthesis::{synthesize_for_problem, SynthesisMode, SynthesisOptions, SynthesisResult};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub plant: PlantSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    pub controller: ControllerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisSpec>,
    pub simulation: SimulationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    Explicit {
        a: Rows,
        b: Rows,
        c: Rows,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_w: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d_w: Option<Rows>,
        disturbances: usize,
    },
    Generated {
        seed: u64,
        states: usize,
        inputs: usize,
        outputs: usize,
        disturbances: usize,
        margin: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spectral_scale: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dc_gain_norm: Option<f64>,
        #[serde(default)]
        strictly_proper: bool,
        /// When false, `w` only enters the engineering constraints.
        disturbance_enters_plant: bool,
    },
    Frequency {
        beta: f64,
        costs: Vec<CostSpec>,
        /// `[i, j, weight]` triples; a unit ring when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        edges: Option<Vec<(usize, usize, f64)>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limits: Option<LimitSpec>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub a: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub lower: f64,
    pub upper: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub f0: FunctionSpec,
    pub g0: FunctionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    /// `s I` for a scalar, a full matrix otherwise; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<SectorSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum QuadraticSpec {
    Scalar(f64),
    Matrix(Rows),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResidualSpec {
    LogBarrier { lower: Vec<f64>, upper: Vec<f64>, weight: f64 },
    BoxPenalty { lower: Vec<f64>, upper: Vec<f64>, weight: f64 },
    LogSumExp { weight: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub m: f64,
    /// Absent for an unbounded slope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub h_z: Rows,
    pub h_u: Rows,
    pub h_w: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    PrimalDual {
        tau_p: f64,
        tau_d: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_state: Option<Vec<f64>>,
    },
    Inversion {
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_state: Option<Vec<f64>>,
    },
    TwoLoop {
        tau1: f64,
        tau2: f64,
        /// Identity when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Rows>,
        /// `N^+` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k2: Option<Rows>,
        /// Minimum-norm solution of `Pi_c K1 = T_u P` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k1: Option<Rows>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_state: Option<Vec<f64>>,
    },
    /// Laplacian-based two-loop design of a frequency plant.
    Distributed {
        tau1: f64,
        tau2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_state: Option<Vec<f64>>,
    },
    StaticGain {
        k: Rows,
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_state: Option<Vec<f64>>,
    },
    /// Static gain read from a gains file, or synthesized from the
    /// `[synthesis]` section when no file is named.
    Synthesized {
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gains_file: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial_state: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub rho: f64,
    /// Fixed performance level; the smallest certifiable one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub decay_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub schedule: Vec<StepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub time: f64,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub stationarity: f64,
    pub feasibility: f64,
    pub u_error: f64,
    pub settle_band: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameterSpec,
    pub grid: Vec<f64>,
    pub horizon_factor: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameterSpec {
    Tau,
    Ratio,
}

impl From<SweepParameterSpec> for SweepParameter {
    fn from(p: SweepParameterSpec) -> Self {
        match p {
            SweepParameterSpec::Tau => SweepParameter::Tau,
            SweepParameterSpec::Ratio => SweepParameter::Ratio,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trace: String,
    pub report: String,
    pub gains: String,
    pub sweep: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            trace: "trace.csv".into(),
            report: "report.json".into(),
            gains: "gains.toml".into(),
            sweep: "sweep.csv".into(),
        }
    }
}

/// Synthesized gain with its certificate data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub version: String,
    pub scenario_hash: String,
    pub rho: f64,
    pub decay_rate: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_min: Option<f64>,
    pub certificate_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_f0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_g0: Option<f64>,
    pub k: Rows,
}

impl GainsFile {
    pub fn from_result(res: &SynthesisResult, spec: &SynthesisSpec, scenario_hash: &str, version: &str) -> Self {
        Self {
            version: version.into(),
            scenario_hash: scenario_hash.into(),
            rho: spec.rho,
            decay_rate: spec.decay_rate,
            gamma: res.gamma,
            gamma_min: res.gamma_min,
            certificate_margin: res.certificate_margin,
            theta_f0: res.thetas.0,
            theta_g0: res.thetas.1,
            k: rows_of(&res.k),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("gains file: {e}")))
    }
}

pub fn parse(text: &str) -> Result<ScenarioFile> {
    toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
}

pub fn load(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ResolveOptions {
    pub seed_override: Option<u64>,
    pub dt_override: Option<f64>,
    /// Directory against which relative gains-file paths are resolved.
    pub base_dir: Option<PathBuf>,
}

/// Plant, problem and control context of a scenario, before the controller.
#[derive(Debug, Clone)]
pub struct System {
    pub plant: Plant,
    pub ctx: ControlContext,
    pub frequency: Option<FrequencyModel>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: ScenarioFile,
    pub system: System,
    pub scenario: Scenario,
    /// Hex sha256 of the resolved scenario.
    pub hash: String,
}

fn schema(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Schema(format!("{field}: {msg}"))
}

/// Prefixes input errors raised while building objects with the field they
/// came from.
fn at<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidInput(m) | Error::InvalidModel(m) | Error::GainChoice(m) => schema(field, m),
        other => other,
    })
}

pub fn rows_of(m: &Matrix) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Matrix from rows; `cols` fixes the width of an empty matrix.
fn matrix(field: &str, rows: &Rows, shape: (Option<usize>, Option<usize>)) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map(|v| v.len()).or(shape.1).unwrap_or(0);
    if rows.iter().any(|v| v.len() != c) {
        return Err(schema(field, "rows have different lengths"));
    }
    if let Some(er) = shape.0 {
        if er != r {
            return Err(schema(field, format!("expected {er} rows, found {r}")));
        }
    }
    if let Some(ec) = shape.1 {
        if ec != c {
            return Err(schema(field, format!("expected {ec} columns, found {c}")));
        }
    }
    if rows.iter().flatten().any(|v| v.is_nan()) {
        return Err(schema(field, "entries must not be NaN"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(field: &str, v: &[f64], len: usize) -> Result<Vector> {
    if v.len() != len {
        return Err(schema(field, format!("expected length {len}, found {}", v.len())));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(schema(field, "entries must not be NaN"));
    }
    Ok(Vector::from_column_slice(v))
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(schema(field, format!("must be positive and finite, got {v}")))
    }
}

fn build_plant(spec: &PlantSpec, seed_override: Option<u64>) -> Result<(Plant, Option<FrequencyModel>)> {
    match spec {
        PlantSpec::Explicit { a, b, c, b_w, d, d_w, disturbances } => {
            let a = matrix("plant.a", a, (None, None))?;
            let n = a.nrows();
            let b = matrix("plant.b", b, (Some(n), None))?;
            let m = b.ncols();
            let c = matrix("plant.c", c, (None, Some(n)))?;
            let r = c.nrows();
            let nw = *disturbances;
            let get = |f: &str, v: &Option<Rows>, rr: usize, cc: usize| match v {
                Some(rows) => matrix(f, rows, (Some(rr), Some(cc))),
                None => Ok(Matrix::zeros(rr, cc)),
            };
            let b_w = get("plant.b_w", b_w, n, nw)?;
            let d = get("plant.d", d, r, m)?;
            let d_w = get("plant.d_w", d_w, r, nw)?;
            Ok((at("plant", Plant::new(a, b, b_w, c, d, d_w))?, None))
        }
        PlantSpec::Generated {
            seed,
            states,
            inputs,
            outputs,
            disturbances,
            margin,
            spectral_scale,
            dc_gain_norm,
            strictly_proper,
            disturbance_enters_plant,
        } => {
            let opts = GeneratorOptions {
                margin: positive("plant.margin", *margin)?,
                spectral_scale: spectral_scale.map_or(Ok(1.0), |s| positive("plant.spectral_scale", s))?,
                dc_gain_norm: dc_gain_norm.map(|s| positive("plant.dc_gain_norm", s)).transpose()?,
                strictly_proper: *strictly_proper,
                ..GeneratorOptions::default()
            };
            let seed = seed_override.unwrap_or(*seed);
            let n_w = if *disturbance_enters_plant { *disturbances } else { 0 };
            let g = at("plant", generate_stable_plant(seed, *states, *inputs, *outputs, n_w, &opts))?;
            if *disturbance_enters_plant {
                return Ok((g, None));
            }
            let (n, r, nw) = (*states, *outputs, *disturbances);
            let p = Plant::new(
                g.a().clone(),
                g.b().clone(),
                Matrix::zeros(n, nw),
                g.c().clone(),
                g.d().clone(),
                Matrix::zeros(r, nw),
            )?;
            Ok((p, None))
        }
        PlantSpec::Frequency { beta, costs, edges, limits } => {
            let model = FrequencyModel {
                beta: *beta,
                costs: costs.iter().map(|c| BusCost { a: c.a, b: c.b }).collect(),
                edges: edges.clone().unwrap_or_else(|| crate::frequency::ring_edges(costs.len())),
                limits: limits.as_ref().map(|l| GenerationLimits { lower: l.lower, upper: l.upper, weight: l.weight }),
            };
            at("plant", model.validate())?;
            Ok((model.plant()?, Some(model)))
        }
    }
}

fn build_function(field: &str, spec: &FunctionSpec, dim: usize) -> Result<ConvexFunction> {
    let mut f = ConvexFunction::zero(dim);
    match &spec.quadratic {
        Some(QuadraticSpec::Scalar(s)) => {
            f = at(&format!("{field}.quadratic"), f.with_quadratic(Matrix::identity(dim, dim) * *s))?;
        }
        Some(QuadraticSpec::Matrix(rows)) => {
            let q = matrix(&format!("{field}.quadratic"), rows, (Some(dim), Some(dim)))?;
            f = at(&format!("{field}.quadratic"), f.with_quadratic(q))?;
        }
        None => {}
    }
    if let Some(lin) = &spec.linear {
        f = at(&format!("{field}.linear"), f.with_linear(vector(&format!("{field}.linear"), lin, dim)?))?;
    }
    let residual = match &spec.residual {
        None => None,
        Some(ResidualSpec::LogBarrier { lower, upper, weight }) => Some(SmoothResidual::LogBarrier {
            lower: vector(&format!("{field}.residual.lower"), lower, dim)?,
            upper: vector(&format!("{field}.residual.upper"), upper, dim)?,
            weight: *weight,
        }),
        Some(ResidualSpec::BoxPenalty { lower, upper, weight }) => Some(SmoothResidual::BoxPenalty {
            lower: vector(&format!("{field}.residual.lower"), lower, dim)?,
            upper: vector(&format!("{field}.residual.upper"), upper, dim)?,
            weight: *weight,
        }),
        Some(ResidualSpec::LogSumExp { weight }) => Some(SmoothResidual::LogSumExp { weight: *weight }),
    };
    let sector = match &spec.sector {
        None => Sector::default(),
        Some(s) => {
            let region = match (&s.region_lower, &s.region_upper) {
                (Some(lo), Some(hi)) => Some((
                    vector(&format!("{field}.sector.region_lower"), lo, dim)?,
                    vector(&format!("{field}.sector.region_upper"), hi, dim)?,
                )),
                (None, None) => None,
                _ => return Err(schema(&format!("{field}.sector"), "region_lower and region_upper go together")),
            };
            Sector { m: s.m, l: s.l.unwrap_or(f64::INFINITY), region }
        }
    };
    match residual {
        Some(r) => at(&format!("{field}.residual"), f.with_residual(r, sector)),
        None if spec.sector.is_some() => Err(schema(&format!("{field}.sector"), "a sector needs a residual")),
        None => Ok(f),
    }
}

/// Plant, problem and context of a scenario.
pub fn resolve_system(file: &ScenarioFile, opts: &ResolveOptions) -> Result<System> {
    let (plant, frequency) = build_plant(&file.plant, opts.seed_override)?;
    if let Some(model) = frequency {
        if file.problem.is_some() {
            return Err(schema("problem", "a frequency plant defines its own problem"));
        }
        let case = FrequencyCase::new(model.clone())?;
        return Ok(System { plant, ctx: case.ctx, frequency: Some(model) });
    }
    let spec = file.problem.as_ref().ok_or_else(|| schema("problem", "missing section"))?;
    let (m, r, nw) = (plant.inputs(), plant.outputs(), plant.disturbances());
    let f0 = build_function("problem.f0", &spec.f0, m)?;
    let g0 = build_function("problem.g0", &spec.g0, r)?;
    let prob = match &spec.constraints {
        None => at("problem", OssProblem::unconstrained(f0, g0, nw))?,
        Some(c) => {
            let h_z = matrix("problem.constraints.h_z", &c.h_z, (None, Some(r)))?;
            let nc = h_z.nrows();
            let h_u = matrix("problem.constraints.h_u", &c.h_u, (Some(nc), Some(m)))?;
            let h_w = matrix("problem.constraints.h_w", &c.h_w, (Some(nc), Some(nw)))?;
            at("problem.constraints", OssProblem::new(f0, g0, h_z, h_u, h_w, None))?
        }
    };
    let gains = plant.dc_gains()?;
    // A fully determined steady state leaves only the inversion and primal-dual designs.
    let fs = match FeasibleSubspace::build(&gains, &prob) {
        Ok(fs) => Some(fs),
        Err(Error::NoFreedom) => None,
        Err(e) => return Err(e),
    };
    let ctx = at("problem", ControlContext::new(prob, gains, fs))?;
    Ok(System { plant, ctx, frequency: None })
}

fn synthesis_options(spec: &SynthesisSpec) -> Result<(SynthesisMode, SynthesisOptions)> {
    positive("synthesis.rho", spec.rho)?;
    let mode = match spec.gamma {
        Some(g) => SynthesisMode::FixedGamma(positive("synthesis.gamma", g)?),
        None => SynthesisMode::MinimizeGamma,
    };
    let mut opts = SynthesisOptions { decay_rate: spec.decay_rate, ..SynthesisOptions::default() };
    if let Some(b) = spec.backoff {
        if !(b >= 1.0 && b.is_finite()) {
            return Err(schema("synthesis.backoff", "must be at least 1"));
        }
        opts.backoff = b;
    }
    if !(spec.decay_rate >= 0.0 && spec.decay_rate.is_finite()) {
        return Err(schema("synthesis.decay_rate", "must be nonnegative"));
    }
    Ok((mode, opts))
}

/// Runs the `[synthesis]` section on a resolved system.
pub fn synthesize_system(file: &ScenarioFile, system: &System) -> Result<(SynthesisSpec, SynthesisResult)> {
    let spec = file.synthesis.clone().ok_or_else(|| schema("synthesis", "missing section"))?;
    let (mode, opts) = synthesis_options(&spec)?;
    let fs = system.ctx.fs.as_ref().ok_or_else(|| Error::NoFreedom)?;
    let (_, res) = synthesize_for_problem(&system.ctx.prob, &system.ctx.gains, fs, spec.rho, mode, &opts)?;
    Ok((spec, res))
}

fn initial_of(c: &ControllerSpec) -> &Option<Vec<f64>> {
    match c {
        ControllerSpec::PrimalDual { initial_state, .. }
        | ControllerSpec::Inversion { initial_state, .. }
        | ControllerSpec::TwoLoop { initial_state, .. }
        | ControllerSpec::Distributed { initial_state, .. }
        | ControllerSpec::StaticGain { initial_state, .. }
        | ControllerSpec::Synthesized { initial_state, .. } => initial_state,
    }
}

fn build_controller(file: &ScenarioFile, system: &System, opts: &ResolveOptions) -> Result<Controller> {
    let ctx = &system.ctx;
    let m = ctx.prob.inputs();
    let fs = || ctx.fs.as_ref().ok_or_else(|| schema("controller", "the problem leaves no freedom"));
    let c = match &file.controller {
        ControllerSpec::PrimalDual { tau_p, tau_d, .. } => Controller::PrimalDual(PrimalDualController {
            tau_p: positive("controller.tau_p", *tau_p)?,
            tau_d: positive("controller.tau_d", *tau_d)?,
        }),
        ControllerSpec::Inversion { tau, .. } => {
            Controller::Inversion(InversionController { tau: positive("controller.tau", *tau)? })
        }
        ControllerSpec::TwoLoop { tau1, tau2, p, k2, k1, .. } => {
            let fs = fs()?;
            let q = fs.q();
            let nc = ctx.prob.constraints();
            let p = match p {
                Some(rows) => matrix("controller.p", rows, (Some(q), Some(q)))?,
                None => Matrix::identity(q, q),
            };
            let k2 = match k2 {
                Some(rows) => K2Choice::Custom(matrix("controller.k2", rows, (Some(m), Some(nc)))?),
                None => K2Choice::PseudoInverse,
            };
            let k1 = k1.as_ref().map(|rows| matrix("controller.k1", rows, (Some(m), Some(q)))).transpose()?;
            let gains = at("controller", two_loop_gains(fs, &ctx.cg, &p, k2, k1))?;
            Controller::TwoLoop(TwoLoopController {
                gains,
                tau1: positive("controller.tau1", *tau1)?,
                tau2: positive("controller.tau2", *tau2)?,
            })
        }
        ControllerSpec::Distributed { tau1, tau2, .. } => {
            let model = system
                .frequency
                .as_ref()
                .ok_or_else(|| schema("controller.kind", "distributed needs a frequency plant"))?;
            let c = crate::frequency::distributed_controller(
                model,
                ctx,
                positive("controller.tau1", *tau1)?,
                positive("controller.tau2", *tau2)?,
            )?;
            Controller::TwoLoop(c)
        }
        ControllerSpec::StaticGain { k, tau, .. } => {
            let dim = fs()?.q() + ctx.prob.constraints();
            Controller::StaticGain(StaticGainController {
                k: matrix("controller.k", k, (Some(m), Some(dim)))?,
                tau: positive("controller.tau", *tau)?,
            })
        }
        ControllerSpec::Synthesized { tau, gains_file, .. } => {
            let dim = fs()?.q() + ctx.prob.constraints();
            let k = match gains_file {
                Some(path) => {
                    let mut p = PathBuf::from(path);
                    if p.is_relative() {
                        if let Some(base) = &opts.base_dir {
                            p = base.join(p);
                        }
                    }
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                    let g = GainsFile::parse(&text)?;
                    matrix("gains.k", &g.k, (Some(m), Some(dim)))?
                }
                None => synthesize_system(file, system)?.1.k,
            };
            Controller::StaticGain(StaticGainController { k, tau: positive("controller.tau", *tau)? })
        }
    };
    at("controller", c.validate(ctx))?;
    Ok(c)
}

/// Hash of a scenario and its generated plant, without controller gains.
pub fn source_hash(file: &ScenarioFile, plant: &Plant) -> Result<String> {
    digest(file, plant, None)
}

fn hash_resolved(file: &ScenarioFile, plant: &Plant, controller: &Controller) -> Result<String> {
    let gain = match controller {
        Controller::StaticGain(s) => Some(rows_of(&s.k)),
        Controller::TwoLoop(t) => Some(rows_of(&t.gains.stacked())),
        _ => None,
    };
    digest(file, plant, gain)
}

fn digest(file: &ScenarioFile, plant: &Plant, controller_gain: Option<Rows>) -> Result<String> {
    #[derive(Serialize)]
    struct Digestible<'a> {
        plant: &'a PlantSpec,
        problem: &'a Option<ProblemSpec>,
        controller: &'a ControllerSpec,
        synthesis: &'a Option<SynthesisSpec>,
        simulation: &'a SimulationSpec,
        sweep: &'a Option<SweepSpec>,
        matrices: [Rows; 6],
        controller_gain: Option<Rows>,
    }
    let d = Digestible {
        plant: &file.plant,
        problem: &file.problem,
        controller: &file.controller,
        synthesis: &file.synthesis,
        simulation: &file.simulation,
        sweep: &file.sweep,
        matrices: [
            rows_of(plant.a()),
            rows_of(plant.b()),
            rows_of(plant.b_w()),
            rows_of(plant.c()),
            rows_of(plant.d()),
            rows_of(plant.d_w()),
        ],
        controller_gain,
    };
    let json = serde_json::to_string(&d).map_err(|e| Error::Io(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

/// Copy of `file` with the seed and step overrides written in, so that they
/// enter the hash.
pub fn apply_overrides(file: &ScenarioFile, opts: &ResolveOptions) -> Result<ScenarioFile> {
    let mut file = file.clone();
    if let (Some(seed), PlantSpec::Generated { seed: s, .. }) = (opts.seed_override, &mut file.plant) {
        *s = seed;
    }
    if let Some(dt) = opts.dt_override {
        file.simulation.dt = Some(positive("--dt", dt)?);
    }
    Ok(file)
}

/// Full resolution: plant, problem, controller and simulation settings.
pub fn resolve(file: &ScenarioFile, opts: &ResolveOptions) -> Result<Resolved> {
    let file = apply_overrides(file, opts)?;
    let system = resolve_system(&file, &ResolveOptions { seed_override: None, ..opts.clone() })?;
    let controller = build_controller(&file, &system, opts)?;
    let sim = &file.simulation;
    let nw = system.plant.disturbances();
    let steps = sim
        .schedule
        .iter()
        .enumerate()
        .map(|(k, s)| Ok((s.time, vector(&format!("simulation.schedule[{k}].value"), &s.value, nw)?)))
        .collect::<Result<Vec<_>>>()?;
    let schedule = at("simulation.schedule", DisturbanceSchedule::new(nw, steps))?;
    let x0 = sim
        .initial_state
        .as_ref()
        .map(|v| vector("simulation.initial_state", v, system.plant.states()))
        .transpose()?;
    let xc0 = initial_of(&file.controller)
        .as_ref()
        .map(|v| vector("controller.initial_state", v, controller.state_dim(&system.ctx)))
        .transpose()?;
    let tolerances = match &sim.tolerances {
        Some(t) => Tolerances {
            stationarity: positive("simulation.tolerances.stationarity", t.stationarity)?,
            feasibility: positive("simulation.tolerances.feasibility", t.feasibility)?,
            u_error: positive("simulation.tolerances.u_error", t.u_error)?,
            settle_band: positive("simulation.tolerances.settle_band", t.settle_band)?,
        },
        None => Tolerances::default(),
    };
    let scenario = Scenario {
        plant: system.plant.clone(),
        ctx: system.ctx.clone(),
        controller,
        schedule,
        horizon: positive("simulation.horizon", sim.horizon)?,
        dt: sim.dt.map(|d| positive("simulation.dt", d)).transpose()?,
        x0,
        xc0,
        tolerances,
    };
    at("simulation", scenario.validate())?;
    let hash = hash_resolved(&file, &scenario.plant, &scenario.controller)?;
    Ok(Resolved { file, system, scenario, hash })
}
