//! Cost functionals over closed-loop maps and optimization of alpha.
//!
//! Two costs are supported: the expected quadratic cost under a known
//! disturbance distribution, estimated by Monte Carlo over trial sequences,
//! and the worst-case output norm over the unit ball of disturbance windows,
//! reported as the best value found by multi-start projected ascent.
//!
//! Monte Carlo estimates draw every trial from its own RNG stream derived
//! from one seed and reduce in trial order, so the same seed gives
//! bit-identical results. This also makes every alpha candidate see the same
//! disturbances (common random numbers) during sweeps and optimization.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Window;
use crate::sim::{fmt_num, windows_from_sequence, TrajectoryRecord};
use crate::synthesis::{
    trial_rng, verify_achievability, AlphaParams, ClosedLoopMaps, Slot, SynthesisOptions,
    Synthesizer, SystemModel, ACHIEVABILITY_TOL,
};

const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Inf => v.iter().fold(0.0, |a: f64, x| a.max(x.abs())),
        }
    }

    fn project(self, v: &mut [f64]) {
        match self {
            Norm::Inf => v.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0)),
            Norm::Two => {
                let r = Norm::Two.of(v);
                if r > 1.0 {
                    v.iter_mut().for_each(|x| *x /= r);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub norm: Norm,
    pub trials: usize,
    pub trial_length: usize,
}

impl CostSpec {
    /// `Q = R = I`, `C = I`, `D = 0`, infinity norm, 100 trials of 23 steps.
    pub fn identity(n: usize) -> Self {
        CostSpec {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(n, n),
            c: DMatrix::identity(n, n),
            d: DMatrix::zeros(n, n),
            norm: Norm::Inf,
            trials: 100,
            trial_length: 23,
        }
    }

    pub fn with_weights(mut self, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        self.q = q;
        self.r = r;
        self
    }

    pub fn with_trials(mut self, trials: usize, trial_length: usize) -> Self {
        self.trials = trials;
        self.trial_length = trial_length;
        self
    }

    /// Checks shapes against `n`, symmetry, `Q >= 0` and `R > 0`.
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, m) in [("q", &self.q), ("r", &self.r)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidCost(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if (m - m.transpose()).amax() > PSD_TOL {
                return Err(Error::InvalidCost(format!("{name} is not symmetric")));
            }
        }
        let min_eig = |m: &DMatrix<f64>| m.clone().symmetric_eigen().eigenvalues.min();
        if min_eig(&self.q) < -PSD_TOL {
            return Err(Error::InvalidCost("q is not positive semidefinite".into()));
        }
        if min_eig(&self.r) <= PSD_TOL {
            return Err(Error::InvalidCost("r is not positive definite".into()));
        }
        if self.c.ncols() != n || self.d.ncols() != n || self.c.nrows() != self.d.nrows() {
            return Err(Error::InvalidCost(format!(
                "c ({}x{}) and d ({}x{}) must both have {n} columns and equal rows",
                self.c.nrows(),
                self.c.ncols(),
                self.d.nrows(),
                self.d.ncols()
            )));
        }
        if self.trials == 0 || self.trial_length == 0 {
            return Err(Error::InvalidCost(
                "trials and trial_length must be positive".into(),
            ));
        }
        Ok(())
    }

    fn state_cost(&self, x: &[f64]) -> f64 {
        quad_form(&self.q, x)
    }

    fn input_cost(&self, u: &[f64]) -> f64 {
        quad_form(&self.r, u)
    }
}

fn quad_form(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// iid `U(low, high)` per coordinate and step.
    Uniform { low: f64, high: f64 },
    /// `magnitude * e_coordinate` at the first step, zero afterwards.
    Impulse { magnitude: f64, coordinate: usize },
    /// The same sequence for every trial.
    Fixed { sequence: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceModel {
    pub kind: DisturbanceKind,
    pub seed: u64,
}

impl DisturbanceModel {
    pub fn uniform(low: f64, high: f64, seed: u64) -> Self {
        DisturbanceModel {
            kind: DisturbanceKind::Uniform { low, high },
            seed,
        }
    }

    pub fn validate(&self, n: usize, length: usize) -> Result<()> {
        match &self.kind {
            DisturbanceKind::Uniform { low, high } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::InvalidDisturbance(format!(
                        "uniform bounds require low < high, got [{low}, {high}]"
                    )));
                }
            }
            DisturbanceKind::Impulse {
                magnitude,
                coordinate,
            } => {
                if *coordinate >= n || !magnitude.is_finite() {
                    return Err(Error::InvalidDisturbance(format!(
                        "impulse on coordinate {coordinate} of a {n}-dimensional state"
                    )));
                }
            }
            DisturbanceKind::Fixed { sequence } => {
                if sequence.len() < length || sequence.iter().any(|w| w.len() != n) {
                    return Err(Error::InvalidDisturbance(format!(
                        "fixed sequence needs at least {length} vectors of length {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Disturbance sequence `w_0, …, w_{length-1}` of one trial.
    pub fn sequence(&self, trial: usize, length: usize, n: usize) -> Vec<Vec<f64>> {
        match &self.kind {
            DisturbanceKind::Uniform { low, high } => {
                let mut rng = trial_rng(self.seed, trial as u64);
                (0..length)
                    .map(|_| (0..n).map(|_| rng.gen_range(*low..*high)).collect())
                    .collect()
            }
            DisturbanceKind::Impulse {
                magnitude,
                coordinate,
            } => {
                let mut seq = vec![vec![0.0; n]; length];
                if let Some(first) = seq.first_mut() {
                    first[*coordinate] = *magnitude;
                }
                seq
            }
            DisturbanceKind::Fixed { sequence } => sequence[..length].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    /// Mean per-step cost `Psi_x' Q Psi_x + Psi_u' R Psi_u`.
    pub mean: f64,
    /// Standard error across trial means (0 for a single trial).
    pub stderr: f64,
    pub state_mean: f64,
    pub input_mean: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of the expected quadratic cost.
///
/// Each trial draws `w_0, …, w_{L-1}` and evaluates the maps on the windows
/// of steps `1..=L`, i.e. after each disturbance has entered the state,
/// with zero history before the trial starts.
pub fn mc_cost(
    clms: &ClosedLoopMaps,
    spec: &CostSpec,
    dist: &DisturbanceModel,
) -> Result<CostEstimate> {
    let n = clms.dim();
    spec.validate(n)?;
    dist.validate(n, spec.trial_length)?;
    let len = spec.trial_length;
    let per_trial: Vec<(f64, f64)> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let seq = dist.sequence(trial, len, n);
            let mut state = 0.0;
            let mut input = 0.0;
            for win in windows_from_sequence(&seq, clms.horizon, len + 1, n)
                .iter()
                .skip(1)
            {
                state += spec.state_cost(&clms.state(win)?);
                input += spec.input_cost(&clms.input(win)?);
            }
            Ok((state / len as f64, input / len as f64))
        })
        .collect::<Result<_>>()?;

    let k = per_trial.len() as f64;
    let (mut state_mean, mut input_mean) = (0.0, 0.0);
    for &(s, i) in &per_trial {
        state_mean += s;
        input_mean += i;
    }
    state_mean /= k;
    input_mean /= k;
    let mean = state_mean + input_mean;
    let stderr = if per_trial.len() > 1 {
        let var = per_trial
            .iter()
            .map(|&(s, i)| (s + i - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(CostEstimate {
        mean,
        stderr,
        state_mean,
        input_mean,
        samples: per_trial.len() * len,
    })
}

/// Per-step costs `x_t' Q x_t + u_t' R u_t` for `t < H`.
pub fn stage_costs(traj: &TrajectoryRecord, spec: &CostSpec) -> Vec<f64> {
    traj.inputs
        .iter()
        .enumerate()
        .map(|(t, u)| spec.state_cost(&traj.states[t]) + spec.input_cost(u))
        .collect()
}

/// Total cost of a trajectory; the terminal state is not charged.
pub fn trajectory_cost(traj: &TrajectoryRecord, spec: &CostSpec) -> f64 {
    stage_costs(traj, spec).iter().sum()
}

pub fn annotate(traj: &mut TrajectoryRecord, spec: &CostSpec) {
    traj.stage_costs = stage_costs(traj, spec);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorstCaseOptions {
    pub starts: usize,
    pub iterations: usize,
    pub step: f64,
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for WorstCaseOptions {
    fn default() -> Self {
        WorstCaseOptions {
            starts: 32,
            iterations: 500,
            step: 1e-2,
            fd_step: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCase {
    /// Best output norm found; a lower bound on the true maximum.
    pub value: f64,
    pub window: Window,
}

/// `|C psi_x(w) + D psi_u(w)|` in the configured norm.
pub fn output_norm(clms: &ClosedLoopMaps, spec: &CostSpec, window: &Window) -> Result<f64> {
    let x = clms.state(window)?;
    let u = clms.input(window)?;
    let cx = mat_vec(&spec.c, &x);
    let du = mat_vec(&spec.d, &u);
    let y: Vec<f64> = cx.iter().zip(&du).map(|(a, b)| a + b).collect();
    Ok(spec.norm.of(&y))
}

/// Maximizes the output norm over windows with `|w_{t:t-T}| <= 1`.
pub fn worst_case_cost(
    clms: &ClosedLoopMaps,
    spec: &CostSpec,
    opts: &WorstCaseOptions,
) -> Result<WorstCase> {
    let n = clms.dim();
    if spec.c.ncols() != n || spec.d.ncols() != n || spec.c.nrows() != spec.d.nrows() {
        return Err(Error::InvalidCost(
            "c and d must have one column per state".into(),
        ));
    }
    let dim = n * (clms.horizon + 1);
    let objective =
        |v: &[f64]| -> Result<f64> { output_norm(clms, spec, &Window::from_flat(n, v.to_vec())?) };

    // Screen random feasible points and ascend from the best ones.
    let mut rng = trial_rng(opts.seed, u64::MAX);
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::with_capacity(8 * opts.starts);
    for _ in 0..(8 * opts.starts.max(1)) {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        spec.norm.project(&mut v);
        candidates.push((objective(&v)?, v));
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    candidates.truncate(opts.starts.max(1));

    let results: Vec<(f64, Vec<f64>)> = candidates
        .into_par_iter()
        .map(|(mut best, mut v)| {
            let mut step = opts.step;
            for _ in 0..opts.iterations {
                let mut grad = vec![0.0; dim];
                for i in 0..dim {
                    let mut hi = v.clone();
                    let mut lo = v.clone();
                    hi[i] += opts.fd_step;
                    lo[i] -= opts.fd_step;
                    grad[i] = (objective(&hi)? - objective(&lo)?) / (2.0 * opts.fd_step);
                }
                if grad.iter().all(|g| *g == 0.0) {
                    break;
                }
                let mut improved = false;
                for _ in 0..30 {
                    let mut cand: Vec<f64> =
                        v.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
                    spec.norm.project(&mut cand);
                    let value = objective(&cand)?;
                    if value > best {
                        best = value;
                        v = cand;
                        step *= 1.25;
                        improved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !improved {
                    break;
                }
            }
            Ok((best, v))
        })
        .collect::<Result<_>>()?;

    let (value, v) = results
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |acc, r| {
            if r.0 > acc.0 {
                r
            } else {
                acc
            }
        });
    Ok(WorstCase {
        value: value.max(0.0),
        window: Window::from_flat(n, v)?,
    })
}

/// Checks applied to every candidate alpha during sweeps and optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateChecks {
    pub synthesis: SynthesisOptions,
    /// Achievability windows per candidate; 0 disables the check.
    pub verify_trials: usize,
}

impl Default for CandidateChecks {
    fn default() -> Self {
        CandidateChecks {
            synthesis: SynthesisOptions::default(),
            verify_trials: 0,
        }
    }
}

fn candidate_cost(
    synth: &Synthesizer,
    alpha: &AlphaParams,
    spec: &CostSpec,
    dist: &DisturbanceModel,
    checks: &CandidateChecks,
) -> Result<CostEstimate> {
    let (_, clms) = synth.synthesize(alpha)?;
    if checks.verify_trials > 0 {
        let residual = verify_achievability(&clms, synth.model(), checks.verify_trials, dist.seed)?;
        if residual > ACHIEVABILITY_TOL {
            return Err(Error::AchievabilityViolation {
                residual,
                tolerance: ACHIEVABILITY_TOL,
            });
        }
    }
    mc_cost(&clms, spec, dist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub slot: Slot,
    pub value: f64,
    pub total_cost: f64,
    pub state_cost: f64,
    pub input_cost: f64,
    pub stderr: f64,
}

/// Re-synthesizes and evaluates the maps with one slot set to each grid value.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    model: &SystemModel,
    horizon: usize,
    alpha_base: &AlphaParams,
    slot: Slot,
    grid: &[f64],
    spec: &CostSpec,
    dist: &DisturbanceModel,
    checks: &CandidateChecks,
) -> Result<Vec<SweepRow>> {
    let synth = Synthesizer::new(model, horizon, checks.synthesis)?;
    if !synth.contains(slot) {
        return Err(Error::UnknownSlot {
            level: slot.level,
            index: slot.index,
        });
    }
    if let Some(v) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::config("grid", format!("value {v} outside [0, 1]")));
    }
    grid.par_iter()
        .map(|&value| {
            let alpha = alpha_base.clone().with(slot, value);
            let est = candidate_cost(&synth, &alpha, spec, dist, checks)?;
            Ok(SweepRow {
                slot,
                value,
                total_cost: est.mean,
                state_cost: est.state_mean,
                input_cost: est.input_mean,
                stderr: est.stderr,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], preamble: &[String]) -> String {
    let mut out = String::new();
    for line in preamble {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("slot,value,total_cost,state_cost,input_cost,stderr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.slot,
            fmt_num(r.value),
            fmt_num(r.total_cost),
            fmt_num(r.state_cost),
            fmt_num(r.input_cost),
            fmt_num(r.stderr)
        );
    }
    out
}

/// Evenly spaced grid of `points` values over `[start, stop]`.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points)
            .map(|i| start + (stop - start) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    /// Line search gives up below this learning rate.
    pub min_learning_rate: f64,
    pub checks: CandidateChecks,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            learning_rate: 0.05,
            max_iterations: 200,
            fd_step: 1e-4,
            min_learning_rate: 1e-10,
            checks: CandidateChecks::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub alpha: Vec<f64>,
    pub cost: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub alpha: AlphaParams,
    pub slots: Vec<Slot>,
    pub cost: f64,
    pub trace: Vec<TraceEntry>,
}

/// Projected gradient descent on `[0, 1]^K` with finite-difference
/// gradients: central differences inside the box, one-sided within
/// `fd_step` of a bound. Each iteration starts from the base learning
/// rate and halves it until the projected step lowers the cost; the run
/// stops when no step above `min_learning_rate` does.
pub fn optimize(
    model: &SystemModel,
    horizon: usize,
    alpha_init: &AlphaParams,
    spec: &CostSpec,
    dist: &DisturbanceModel,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    let synth = Synthesizer::new(model, horizon, opts.checks.synthesis)?;
    let slots = synth.slots();
    let mut x = synth.resolve(alpha_init)?.values_for(&slots, 1.0);
    let cost_at = |v: &[f64]| -> Result<f64> {
        Ok(candidate_cost(
            &synth,
            &AlphaParams::from_values(&slots, v),
            spec,
            dist,
            &opts.checks,
        )?
        .mean)
    };
    let h = opts.fd_step;
    let mut fx = cost_at(&x)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        alpha: x.clone(),
        cost: fx,
        step: 0.0,
    }];
    'outer: for iteration in 1..=opts.max_iterations {
        let grad: Vec<f64> = (0..x.len())
            .into_par_iter()
            .map(|i| {
                let probe = |delta: f64| {
                    let mut v = x.clone();
                    v[i] += delta;
                    cost_at(&v)
                };
                if x[i] + h > 1.0 {
                    Ok((fx - probe(-h)?) / h)
                } else if x[i] - h < 0.0 {
                    Ok((probe(h)? - fx) / h)
                } else {
                    Ok((probe(h)? - probe(-h)?) / (2.0 * h))
                }
            })
            .collect::<Result<_>>()?;
        let mut lr = opts.learning_rate;
        loop {
            let cand: Vec<f64> = x
                .iter()
                .zip(&grad)
                .map(|(v, g)| (v - lr * g).clamp(0.0, 1.0))
                .collect();
            if cand == x {
                break 'outer;
            }
            let fc = cost_at(&cand)?;
            if fc < fx {
                x = cand;
                fx = fc;
                break;
            }
            lr *= 0.5;
            if lr < opts.min_learning_rate {
                break 'outer;
            }
        }
        trace.push(TraceEntry {
            iteration,
            alpha: x.clone(),
            cost: fx,
            step: lr,
        });
    }
    Ok(OptimizeResult {
        alpha: AlphaParams::from_values(&slots, &x),
        slots,
        cost: fx,
        trace,
    })
}
