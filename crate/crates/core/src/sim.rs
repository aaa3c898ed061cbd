//! Causal realization of closed-loop maps and closed-loop simulation.
//!
//! The controller never sees disturbances directly. At every step it
//! reconstructs the previous disturbance as `x_t - f(x_{t-1}) - u_{t-1}` and
//! keeps the last `T + 1` of them as the window of the maps. A disturbance
//! `w_t` of the dynamics enters the state at `t + 1`, so it becomes the most
//! recent window entry one step later; this module is the only place where
//! that one-step relabeling happens.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::poly::Window;
use crate::synthesis::{ClosedLoopMaps, SystemModel};

/// States above this magnitude abort a simulation.
pub const DIVERGENCE_BOUND: f64 = 1e9;

/// Largest impulse magnitude accepted by [`impulse_response`].
pub const IMPULSE_GUARD: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct ControllerState {
    window: Window,
    prev_x: Vec<f64>,
    prev_u: Vec<f64>,
    t: usize,
}

impl ControllerState {
    /// Fresh controller for horizon `T` and state dimension `n`; the
    /// history before the first step is zero.
    pub fn new(horizon: usize, n: usize) -> Self {
        ControllerState {
            window: Window::zeros(horizon + 1, n),
            prev_x: vec![0.0; n],
            prev_u: vec![0.0; n],
            t: 0,
        }
    }

    pub fn for_maps(clms: &ClosedLoopMaps) -> Self {
        ControllerState::new(clms.horizon, clms.dim())
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// Most recently reconstructed disturbance (`w_{t-1}` of the dynamics).
    pub fn last_disturbance(&self) -> &[f64] {
        self.window.lag(0)
    }

    /// Observes `x_t` and returns `u_t`.
    pub fn step(
        &mut self,
        clms: &ClosedLoopMaps,
        model: &SystemModel,
        x_obs: &[f64],
    ) -> Result<Vec<f64>> {
        let n = model.dim();
        if x_obs.len() != n {
            return Err(Error::DimensionMismatch {
                what: "observed state",
                expected: n,
                found: x_obs.len(),
            });
        }
        if clms.dim() != n || self.window.dim() != n || self.window.lags() != clms.horizon + 1 {
            return Err(Error::DimensionMismatch {
                what: "controller window",
                expected: n,
                found: clms.dim(),
            });
        }
        let fx = model.step_map(&self.prev_x)?;
        let w: Vec<f64> = (0..n).map(|i| x_obs[i] - fx[i] - self.prev_u[i]).collect();
        self.window.push_front(&w);
        let u = clms.input(&self.window)?;
        self.prev_x.copy_from_slice(x_obs);
        self.prev_u.copy_from_slice(&u);
        self.t += 1;
        Ok(u)
    }
}

/// `H` steps of a closed-loop run in the dynamics' own indexing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryRecord {
    /// `x_0, …, x_H`.
    pub states: Vec<Vec<f64>>,
    /// `u_0, …, u_{H-1}`.
    pub inputs: Vec<Vec<f64>>,
    /// Injected `w_0, …, w_{H-1}`.
    pub disturbances: Vec<Vec<f64>>,
    /// Disturbance reconstructed by the controller at step `t` (`w_{t-1}`,
    /// zero at `t = 0`).
    pub reconstructed: Vec<Vec<f64>>,
    /// `x_t' Q x_t + u_t' R u_t` per step once costs are attached.
    pub stage_costs: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map(Vec::len).unwrap_or(0)
    }

    /// CSV with one row per state; the final row has no input, disturbance
    /// or stage cost. Numbers carry 17 significant digits.
    pub fn to_csv(&self, preamble: &[String]) -> String {
        let n = self.dim();
        let mut out = String::new();
        for line in preamble {
            let _ = writeln!(out, "# {line}");
        }
        let mut header = vec!["t".to_string()];
        for prefix in ["x", "u", "w"] {
            header.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        header.push("stage_cost".into());
        let _ = writeln!(out, "{}", header.join(","));
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| fmt_num(*v)));
            match (self.inputs.get(t), self.disturbances.get(t)) {
                (Some(u), Some(w)) => {
                    row.extend(u.iter().map(|v| fmt_num(*v)));
                    row.extend(w.iter().map(|v| fmt_num(*v)));
                }
                _ => row.extend(std::iter::repeat(String::new()).take(2 * n)),
            }
            row.push(
                self.stage_costs
                    .get(t)
                    .map(|c| fmt_num(*c))
                    .unwrap_or_default(),
            );
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rolls `x_{t+1} = f(x_t) + u_t + w_t` from `x_0 = 0` for `H` steps.
pub fn simulate(
    model: &SystemModel,
    clms: &ClosedLoopMaps,
    disturbances: &[Vec<f64>],
    horizon: usize,
) -> Result<TrajectoryRecord> {
    if disturbances.len() < horizon {
        return Err(Error::InvalidDisturbance(format!(
            "{} disturbances supplied for a horizon of {horizon}",
            disturbances.len()
        )));
    }
    let n = model.dim();
    let mut ctrl = ControllerState::for_maps(clms);
    let mut x = vec![0.0; n];
    let mut rec = TrajectoryRecord {
        states: vec![x.clone()],
        ..Default::default()
    };
    for (t, w) in disturbances.iter().take(horizon).enumerate() {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                what: "disturbance vector",
                expected: n,
                found: w.len(),
            });
        }
        let u = ctrl.step(clms, model, &x)?;
        rec.reconstructed.push(ctrl.last_disturbance().to_vec());
        let fx = model.step_map(&x)?;
        x = (0..n).map(|i| fx[i] + u[i] + w[i]).collect();
        let norm = x.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
        if !norm.is_finite() || norm > DIVERGENCE_BOUND {
            return Err(Error::Divergence { step: t + 1, norm });
        }
        rec.inputs.push(u);
        rec.disturbances.push(w.clone());
        rec.states.push(x.clone());
    }
    Ok(rec)
}

/// Response to the single disturbance `w_0 = magnitude * e_coord`.
pub fn impulse_response(
    model: &SystemModel,
    clms: &ClosedLoopMaps,
    magnitude: f64,
    coord: usize,
    steps: usize,
) -> Result<TrajectoryRecord> {
    if !(magnitude.abs() <= IMPULSE_GUARD) {
        return Err(Error::InvalidDisturbance(format!(
            "impulse magnitude {magnitude} outside [-{IMPULSE_GUARD}, {IMPULSE_GUARD}]"
        )));
    }
    let n = model.dim();
    if coord >= n {
        return Err(Error::DimensionMismatch {
            what: "impulse coordinate",
            expected: n,
            found: coord + 1,
        });
    }
    let mut seq = vec![vec![0.0; n]; steps];
    if let Some(first) = seq.first_mut() {
        first[coord] = magnitude;
    }
    simulate(model, clms, &seq, steps)
}

/// Windows the maps see at steps `0..H`, built from a disturbance
/// sequence in the dynamics' indexing (`w_{t-1}` is the newest entry at
/// step `t`).
pub fn windows_from_sequence(
    disturbances: &[Vec<f64>],
    horizon: usize,
    steps: usize,
    n: usize,
) -> Vec<Window> {
    let mut win = Window::zeros(horizon + 1, n);
    let mut out = Vec::with_capacity(steps);
    let zero = vec![0.0; n];
    for t in 0..steps {
        let newest = if t == 0 {
            &zero
        } else {
            disturbances.get(t - 1).unwrap_or(&zero)
        };
        win.push_front(newest);
        out.push(win.clone());
    }
    out
}

/// Largest `|x_t - psi_x(window_t)|` over a trajectory, with windows
/// rebuilt from the controller's reconstructed disturbances.
pub fn clm_state_error(traj: &TrajectoryRecord, clms: &ClosedLoopMaps) -> Result<f64> {
    let n = traj.dim();
    let steps = traj.states.len();
    // Step t's window holds w_{t-1}; the final state needs the last injected one.
    let mut seq: Vec<Vec<f64>> = traj.reconstructed.iter().skip(1).cloned().collect();
    if let Some(last) = traj.disturbances.last() {
        seq.push(last.clone());
    }
    let mut worst = 0.0f64;
    for (t, win) in windows_from_sequence(&seq, clms.horizon, steps, n)
        .iter()
        .enumerate()
    {
        let predicted = clms.state(win)?;
        for (a, b) in traj.states[t].iter().zip(&predicted) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{SynthesisOptions, Synthesizer};

    fn setup(alpha: f64, horizon: usize) -> (SystemModel, ClosedLoopMaps) {
        let model = SystemModel::scalar("q", &[(2, 1.0), (1, -1.0)]).unwrap();
        let s = Synthesizer::new(&model, horizon, SynthesisOptions::default()).unwrap();
        let (_, clms) = s.synthesize(&s.skeleton(alpha)).unwrap();
        (model, clms)
    }

    #[test]
    fn first_step_from_rest_is_zero() {
        let (model, clms) = setup(0.4, 2);
        let mut ctrl = ControllerState::for_maps(&clms);
        assert_eq!(ctrl.step(&clms, &model, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn feedback_linearization_cancels_impulse() {
        let (model, clms) = setup(1.0, 2);
        let delta = 0.7;
        let traj = impulse_response(&model, &clms, delta, 0, 6).unwrap();
        assert_eq!(traj.states[1], vec![delta]);
        let f = delta * delta - delta;
        assert!((traj.inputs[1][0] + f).abs() < 1e-15);
        assert!(traj.states[2..].iter().all(|x| x[0].abs() < 1e-15));
    }

    #[test]
    fn zero_disturbance_gives_zero_trajectory() {
        let (model, clms) = setup(0.3, 2);
        let traj = simulate(&model, &clms, &vec![vec![0.0]; 10], 10).unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 0.0));
        assert!(impulse_response(&model, &clms, 0.0, 0, 5)
            .unwrap()
            .states
            .iter()
            .all(|x| x[0] == 0.0));
    }

    #[test]
    fn reconstruction_recovers_injected_sequence() {
        let (model, clms) = setup(0.25, 2);
        let seq: Vec<Vec<f64>> = (0..12)
            .map(|t| vec![((t * 7 % 11) as f64 / 11.0) - 0.5])
            .collect();
        let traj = simulate(&model, &clms, &seq, 12).unwrap();
        for t in 1..12 {
            assert!((traj.reconstructed[t][0] - seq[t - 1][0]).abs() < 1e-12);
        }
        assert!(clm_state_error(&traj, &clms).unwrap() < 1e-10);
    }

    #[test]
    fn guards() {
        let (model, clms) = setup(0.5, 1);
        assert!(impulse_response(&model, &clms, 1.5, 0, 4).is_err());
        assert!(impulse_response(&model, &clms, 0.5, 1, 4).is_err());
        assert!(simulate(&model, &clms, &[vec![0.1]], 3).is_err());
    }

    #[test]
    fn corrupted_maps_diverge() {
        let (model, mut clms) = setup(0.5, 1);
        let x = crate::poly::Poly::var(crate::poly::Variable::scalar(0));
        clms.psi_u = crate::poly::PolyVec::new(vec![x.scale(1e6)]);
        let err = simulate(&model, &clms, &vec![vec![0.9]; 20], 20).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn csv_layout() {
        let (model, clms) = setup(0.5, 1);
        let traj = simulate(&model, &clms, &[vec![0.5], vec![0.0]], 2).unwrap();
        let csv = traj.to_csv(&["seed=1".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed=1");
        assert_eq!(lines[1], "t,x_0,u_0,w_0,stage_cost");
        assert_eq!(lines.len(), 2 + 3);
        assert!(lines[2].starts_with("0,0.0000000000000000e0,"));
        assert!(lines[4].ends_with(",,,"));
    }
}
