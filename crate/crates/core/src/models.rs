//! Built-in models and the JSON configuration document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cost::{
    CandidateChecks, CostSpec, DisturbanceKind, DisturbanceModel, Norm, OptimizeOptions,
};
use crate::error::{Error, Result};
use crate::poly::{Exponents, Monomial, Poly, PolyVec, Variable};
use crate::synthesis::{short_hash, AlphaMode, AlphaParams, Slot, SynthesisOptions, SystemModel};

pub const SCALAR_QUADRATIC: &str = "scalar_quadratic";
pub const CYLINDER_WAKE: &str = "cylinder_wake";
pub const CUSTOM: &str = "custom";

/// Parameter names of a built-in model with their defaults.
pub fn builtin_defaults(name: &str) -> Result<BTreeMap<String, f64>> {
    match name {
        SCALAR_QUADRATIC => Ok(BTreeMap::new()),
        CYLINDER_WAKE => Ok([("mu", 0.1), ("omega", 1.0), ("a", -0.1), ("lambda", 0.5)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Builds a named model. Every parameter the model uses must be present.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemModel> {
    let get = |key: &str| {
        params
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingParameter(key.to_string()))
    };
    match name {
        SCALAR_QUADRATIC => Ok(scalar_quadratic()),
        CYLINDER_WAKE => cylinder_wake(get("mu")?, get("omega")?, get("a")?, get("lambda")?),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// `f(x) = x^2 - x`.
pub fn scalar_quadratic() -> SystemModel {
    SystemModel::scalar(SCALAR_QUADRATIC, &[(2, 1.0), (1, -1.0)]).expect("valid model")
}

/// Mean-field cylinder wake, fully actuated:
///
/// ```text
/// f(x, y, z) = (mu x - omega y + a x y,
///               omega x + mu y + a y z,
///               -lambda (z - x^2 - y^2))
/// ```
pub fn cylinder_wake(mu: f64, omega: f64, a: f64, lambda: f64) -> Result<SystemModel> {
    let v = |c: u16| Variable::new(0, c);
    let lin = |c: f64, i: u16| Monomial::new(c, Exponents::var(v(i)));
    let prod =
        |c: f64, i: u16, j: u16| Monomial::new(c, Exponents::from_pairs([(v(i), 1), (v(j), 1)]));
    let sq = |c: f64, i: u16| Monomial::new(c, Exponents::from_pairs([(v(i), 2)]));
    let fx = Poly::from_terms([lin(mu, 0), lin(-omega, 1), prod(a, 0, 1)]);
    let fy = Poly::from_terms([lin(omega, 0), lin(mu, 1), prod(a, 1, 2)]);
    let fz = Poly::from_terms([lin(-lambda, 2), sq(lambda, 0), sq(lambda, 1)]);
    SystemModel::new(CYLINDER_WAKE, PolyVec::new(vec![fx, fy, fz]))
}

// Raw document layout. Every section is optional except `model` and
// `horizon`; unknown fields are rejected.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: String,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    #[serde(default)]
    dynamics: Option<Vec<Vec<RawTerm>>>,
    #[serde(alias = "T")]
    horizon: usize,
    #[serde(default)]
    alpha: RawAlpha,
    #[serde(default)]
    alpha_mode: RawAlphaMode,
    #[serde(default = "one")]
    alpha_default: f64,
    #[serde(default = "default_max_degree")]
    max_degree: u32,
    #[serde(default)]
    cost: RawCost,
    #[serde(default = "default_disturbance")]
    disturbance: DisturbanceKind,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    simulate: RawSimulate,
    #[serde(default)]
    impulse: RawImpulse,
    #[serde(default)]
    sweep: Option<RawSweep>,
    #[serde(default)]
    optimize: RawOptimize,
    #[serde(default)]
    verify: RawVerify,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    coefficient: f64,
    /// `[coordinate, power]` pairs.
    #[serde(default)]
    powers: Vec<(u16, u32)>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
enum RawAlpha {
    #[default]
    #[serde(skip)]
    Default,
    Keyword(String),
    Values(BTreeMap<String, f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawAlphaMode {
    #[default]
    Lenient,
    Strict,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    q: Option<RawMatrix>,
    r: Option<RawMatrix>,
    c: Option<RawMatrix>,
    d: Option<RawMatrix>,
    norm: Option<Norm>,
    trials: Option<usize>,
    trial_length: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSimulate {
    steps: usize,
}

impl Default for RawSimulate {
    fn default() -> Self {
        RawSimulate { steps: 23 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawImpulse {
    magnitude: f64,
    coordinate: usize,
    steps: Option<usize>,
}

impl Default for RawImpulse {
    fn default() -> Self {
        RawImpulse {
            magnitude: 1.0,
            coordinate: 0,
            steps: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    slot: String,
    #[serde(default)]
    grid: Option<Vec<f64>>,
    #[serde(default = "default_points")]
    points: usize,
    #[serde(default)]
    start: f64,
    #[serde(default = "one")]
    stop: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOptimize {
    learning_rate: f64,
    max_iterations: usize,
    fd_step: f64,
}

impl Default for RawOptimize {
    fn default() -> Self {
        let d = OptimizeOptions::default();
        RawOptimize {
            learning_rate: d.learning_rate,
            max_iterations: d.max_iterations,
            fd_step: d.fd_step,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawVerify {
    trials: usize,
    tolerance: f64,
    candidate_trials: usize,
}

impl Default for RawVerify {
    fn default() -> Self {
        RawVerify {
            trials: 1000,
            tolerance: 1e-8,
            candidate_trials: 16,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    dir: PathBuf,
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput {
            dir: PathBuf::from("out"),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_max_degree() -> u32 {
    SynthesisOptions::default().max_degree
}

fn default_points() -> usize {
    21
}

fn default_disturbance() -> DisturbanceKind {
    DisturbanceKind::Uniform {
        low: -1.0,
        high: 1.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseConfig {
    pub magnitude: f64,
    pub coordinate: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub slot: Slot,
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub trials: usize,
    pub tolerance: f64,
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub model_kind: String,
    pub model: SystemModel,
    /// Parameters after defaults are applied.
    pub parameters: BTreeMap<String, f64>,
    pub horizon: usize,
    pub alpha: AlphaParams,
    pub synthesis: SynthesisOptions,
    pub cost: CostSpec,
    pub disturbance: DisturbanceModel,
    pub seed: u64,
    pub simulate_steps: usize,
    pub impulse: ImpulseConfig,
    pub sweep: Option<SweepConfig>,
    pub optimize: OptimizeOptions,
    pub verify: VerifyConfig,
    pub out_dir: PathBuf,
    /// Hash of the resolved document, overrides included.
    pub fingerprint: String,
}

impl ModelConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        load_config(text, &[])
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        load_config(&std::fs::read_to_string(path)?, overrides)
    }
}

/// Parses a configuration document and applies `key.path=value` overrides.
///
/// Override values are parsed as JSON when possible and taken as strings
/// otherwise, so `--set model=cylinder_wake` and `--set cost.r=0.1` both work.
pub fn load_config(text: &str, overrides: &[String]) -> Result<ModelConfig> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        field: String::new(),
        message: e.to_string(),
    })?;
    if overrides.is_empty() {
        // Typed pass over the text itself, for line-accurate diagnostics.
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        return resolve(raw, &value);
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let raw: RawConfig = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
        let field = e.path().to_string();
        Error::config(field, e.into_inner().to_string())
    })?;
    resolve(raw, &value)
}

fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must have the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "empty key segment"));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn matrix(
    field: &str,
    m: Option<RawMatrix>,
    n: usize,
    default: DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    match m {
        None => Ok(default),
        Some(RawMatrix::Scalar(s)) => Ok(DMatrix::identity(n, n) * s),
        Some(RawMatrix::Rows(rows)) => {
            let cols = rows.first().map_or(0, Vec::len);
            if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
                return Err(Error::config(
                    field,
                    "matrix rows must be non-empty and of equal length",
                ));
            }
            Ok(DMatrix::from_row_iterator(
                rows.len(),
                cols,
                rows.into_iter().flatten(),
            ))
        }
    }
}

fn custom_dynamics(rows: Vec<Vec<RawTerm>>) -> Result<SystemModel> {
    let components = rows
        .into_iter()
        .map(|terms| {
            Poly::from_terms(terms.into_iter().map(|t| {
                Monomial::new(
                    t.coefficient,
                    Exponents::from_pairs(
                        t.powers.into_iter().map(|(c, p)| (Variable::new(0, c), p)),
                    ),
                )
            }))
        })
        .collect();
    SystemModel::new(CUSTOM, PolyVec::new(components))
        .map_err(|e| Error::config("dynamics", e.to_string()))
}

fn resolve(raw: RawConfig, doc: &Value) -> Result<ModelConfig> {
    if raw.horizon == 0 {
        return Err(Error::config("horizon", "must be at least 1"));
    }
    let (model, parameters) = if raw.model == CUSTOM {
        let dynamics = raw
            .dynamics
            .ok_or_else(|| Error::config("dynamics", "required when model is `custom`"))?;
        if let Some(k) = raw.parameters.keys().next() {
            return Err(Error::config(
                format!("parameters.{k}"),
                "custom models take no parameters",
            ));
        }
        (custom_dynamics(dynamics)?, BTreeMap::new())
    } else {
        if raw.dynamics.is_some() {
            return Err(Error::config(
                "dynamics",
                "only allowed when model is `custom`",
            ));
        }
        let mut params =
            builtin_defaults(&raw.model).map_err(|e| Error::config("model", e.to_string()))?;
        for (k, v) in raw.parameters {
            if !params.contains_key(&k) {
                return Err(Error::config(
                    format!("parameters.{k}"),
                    format!("not a parameter of `{}`", raw.model),
                ));
            }
            if !v.is_finite() {
                return Err(Error::config(format!("parameters.{k}"), "must be finite"));
            }
            params.insert(k, v);
        }
        (builtin(&raw.model, &params)?, params)
    };
    let n = model.dim();

    if !(0.0..=1.0).contains(&raw.alpha_default) {
        return Err(Error::config("alpha_default", "must lie in [0, 1]"));
    }
    let alpha = match raw.alpha {
        RawAlpha::Default => AlphaParams::new(),
        RawAlpha::Keyword(k) if k == "default" => AlphaParams::new(),
        RawAlpha::Keyword(k) => {
            return Err(Error::config(
                "alpha",
                format!("expected \"default\" or a map, found \"{k}\""),
            ))
        }
        RawAlpha::Values(map) => {
            let mut alpha = AlphaParams::new();
            for (key, v) in map {
                let slot: Slot = key.parse().map_err(|_| {
                    Error::config(format!("alpha.{key}"), "slot keys have the form k:j")
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("alpha.{key}"), "must lie in [0, 1]"));
                }
                alpha.set(slot, v);
            }
            alpha
        }
    };
    let synthesis = SynthesisOptions {
        max_degree: raw.max_degree,
        alpha_mode: match raw.alpha_mode {
            RawAlphaMode::Strict => AlphaMode::Strict,
            RawAlphaMode::Lenient => AlphaMode::Lenient {
                default: raw.alpha_default,
            },
        },
    };

    let base = CostSpec::identity(n);
    let cost = CostSpec {
        q: matrix("cost.q", raw.cost.q, n, base.q)?,
        r: matrix("cost.r", raw.cost.r, n, base.r)?,
        c: matrix("cost.c", raw.cost.c, n, base.c)?,
        d: matrix("cost.d", raw.cost.d, n, base.d)?,
        norm: raw.cost.norm.unwrap_or(base.norm),
        trials: raw.cost.trials.unwrap_or(base.trials),
        trial_length: raw.cost.trial_length.unwrap_or(base.trial_length),
    };
    cost.validate(n)
        .map_err(|e| Error::config("cost", e.to_string()))?;

    let disturbance = DisturbanceModel {
        kind: raw.disturbance,
        seed: raw.seed,
    };
    let needed = cost.trial_length.max(raw.simulate.steps);
    disturbance
        .validate(n, needed)
        .map_err(|e| Error::config("disturbance", e.to_string()))?;

    if raw.impulse.coordinate >= n {
        return Err(Error::config(
            "impulse.coordinate",
            format!("state has {n} coordinates"),
        ));
    }
    let impulse = ImpulseConfig {
        magnitude: raw.impulse.magnitude,
        coordinate: raw.impulse.coordinate,
        steps: raw.impulse.steps.unwrap_or(raw.horizon + 4),
    };

    let sweep = match raw.sweep {
        None => None,
        Some(s) => {
            let slot: Slot = s
                .slot
                .parse()
                .map_err(|_| Error::config("sweep.slot", "slot keys have the form k:j"))?;
            let grid = s
                .grid
                .unwrap_or_else(|| crate::cost::linspace(s.start, s.stop, s.points));
            if grid.is_empty() || grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config("sweep.grid", "values must lie in [0, 1]"));
            }
            Some(SweepConfig { slot, grid })
        }
    };

    let o = raw.optimize;
    if !(o.learning_rate > 0.0) || !(o.fd_step > 0.0) {
        return Err(Error::config(
            "optimize",
            "learning_rate and fd_step must be positive",
        ));
    }
    let optimize = OptimizeOptions {
        learning_rate: o.learning_rate,
        max_iterations: o.max_iterations,
        fd_step: o.fd_step,
        checks: CandidateChecks {
            synthesis,
            verify_trials: raw.verify.candidate_trials,
        },
        ..OptimizeOptions::default()
    };
    if raw.verify.trials == 0 {
        return Err(Error::config("verify.trials", "must be positive"));
    }

    Ok(ModelConfig {
        model_kind: raw.model,
        model,
        parameters,
        horizon: raw.horizon,
        alpha,
        synthesis,
        cost,
        disturbance,
        seed: raw.seed,
        simulate_steps: raw.simulate.steps,
        impulse,
        sweep,
        optimize,
        verify: VerifyConfig {
            trials: raw.verify.trials,
            tolerance: raw.verify.tolerance,
        },
        out_dir: raw.output.dir,
        fingerprint: short_hash(doc.to_string().as_bytes()),
    })
}

/// Resolved parameters as reported in artifacts.
#[derive(Debug, Serialize)]
pub struct ConfigSummary<'a> {
    pub model: &'a str,
    pub parameters: &'a BTreeMap<String, f64>,
    pub horizon: usize,
    pub seed: u64,
    pub config_fingerprint: &'a str,
}

impl ModelConfig {
    pub fn summary(&self) -> ConfigSummary<'_> {
        ConfigSummary {
            model: &self.model_kind,
            parameters: &self.parameters,
            horizon: self.horizon,
            seed: self.seed,
            config_fingerprint: &self.fingerprint,
        }
    }
}
