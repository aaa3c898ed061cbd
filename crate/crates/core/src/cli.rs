//! Command-line front end.
//!
//! Summaries go to the supplied writer; artifacts are written under the
//! output directory only.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::archive::{load_clm, save_clm};
use crate::cost::{annotate, optimize, sweep, sweep_csv, trajectory_cost, CandidateChecks};
use crate::error::{Error, Result};
use crate::models::{load_config, ModelConfig};
use crate::sim::{clm_state_error, impulse_response, simulate};
use crate::synthesis::{verify_achievability, ClosedLoopMaps, Slot, Synthesizer};

pub const THREADS_ENV: &str = "POLYSLS_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "polysls",
    version,
    about = "Closed-loop map synthesis for polynomial systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set cost.r=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials, or random windows for `synth` and `verify`.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// FIR horizon T.
    #[arg(long, global = true)]
    horizon: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the g-table and closed-loop maps and write the archive.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Check achievability of synthesized or archived maps.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Archive to check instead of synthesizing from the config.
        #[arg(long)]
        clm: Option<PathBuf>,
    },
    /// Simulate the closed loop under the configured disturbance.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the response to a single disturbance.
    Impulse {
        #[command(flatten)]
        common: Common,
    },
    /// Expected cost over a grid of values for one alpha slot.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Slot `k:j` to vary.
        #[arg(long)]
        slot: Option<Slot>,
        /// Number of evenly spaced grid points over [0, 1].
        #[arg(long)]
        points: Option<usize>,
    },
    /// Projected gradient descent on alpha.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
}

/// Caps the worker pool from `POLYSLS_THREADS`; later calls are no-ops.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(Error::config("arguments", e.to_string())),
    };
    match cli.command {
        Command::Synth { common } => {
            let ctx = Context::new(&common, TrialsFor::Verify)?;
            cmd_synth(&ctx, out)
        }
        Command::Verify { common, clm } => {
            let ctx = Context::new(&common, TrialsFor::Verify)?;
            cmd_verify(&ctx, clm.as_deref(), out)
        }
        Command::Simulate { common } => cmd_simulate(&Context::new(&common, TrialsFor::Cost)?, out),
        Command::Impulse { common } => cmd_impulse(&Context::new(&common, TrialsFor::Cost)?, out),
        Command::Sweep {
            common,
            slot,
            points,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = slot {
                extra.push(format!("sweep.slot=\"{s}\""));
            }
            if let Some(p) = points {
                extra.push(format!("sweep.points={p}"));
                extra.push("sweep.grid=null".into());
            }
            cmd_sweep(&Context::with_extra(&common, TrialsFor::Cost, extra)?, out)
        }
        Command::Optimize { common } => cmd_optimize(&Context::new(&common, TrialsFor::Cost)?, out),
    }
}

#[derive(Clone, Copy)]
enum TrialsFor {
    Verify,
    Cost,
}

struct Context {
    cfg: ModelConfig,
    out_dir: PathBuf,
}

impl Context {
    fn new(common: &Common, trials: TrialsFor) -> Result<Self> {
        Context::with_extra(common, trials, Vec::new())
    }

    fn with_extra(common: &Common, trials: TrialsFor, extra: Vec<String>) -> Result<Self> {
        let text = match &common.config {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        let mut overrides = common.overrides.clone();
        if let Some(s) = common.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(h) = common.horizon {
            overrides.push(format!("horizon={h}"));
        }
        if let Some(t) = common.trials {
            overrides.push(match trials {
                TrialsFor::Verify => format!("verify.trials={t}"),
                TrialsFor::Cost => format!("cost.trials={t}"),
            });
        }
        overrides.extend(extra);
        let cfg = load_config(&text, &overrides)?;
        let out_dir = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
        Ok(Context { cfg, out_dir })
    }

    fn synthesizer(&self) -> Result<Synthesizer> {
        Synthesizer::new(&self.cfg.model, self.cfg.horizon, self.cfg.synthesis)
    }

    fn maps(&self) -> Result<ClosedLoopMaps> {
        Ok(self.synthesizer()?.synthesize(&self.cfg.alpha)?.1)
    }

    fn preamble(&self) -> Vec<String> {
        let mut lines = vec![
            format!("config_fingerprint={}", self.cfg.fingerprint),
            format!("seed={}", self.cfg.seed),
            format!("model={}", self.cfg.model_kind),
            format!("horizon={}", self.cfg.horizon),
        ];
        for (k, v) in &self.cfg.parameters {
            lines.push(format!("parameter.{k}={v}"));
        }
        lines
    }

    fn metadata(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("config_fingerprint".into(), json!(self.cfg.fingerprint));
        m.insert("seed".into(), json!(self.cfg.seed));
        m.insert("model".into(), json!(self.cfg.model_kind));
        m.insert("parameters".into(), json!(self.cfg.parameters));
        m
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, body)?;
        Ok(path)
    }

    fn write_json(&self, name: &str, mut value: Value) -> Result<PathBuf> {
        if let Value::Object(map) = &mut value {
            map.insert("config_fingerprint".into(), json!(self.cfg.fingerprint));
            map.insert("seed".into(), json!(self.cfg.seed));
        }
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

fn check_residual(residual: f64, tolerance: f64) -> Result<()> {
    if residual > tolerance {
        return Err(Error::AchievabilityViolation {
            residual,
            tolerance,
        });
    }
    Ok(())
}

fn cmd_synth(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.cfg;
    let synth = ctx.synthesizer()?;
    let (table, clms) = synth.synthesize(&cfg.alpha)?;
    let residual = verify_achievability(&clms, &cfg.model, cfg.verify.trials, cfg.seed)?;
    let mut meta = ctx.metadata();
    meta.insert("counts".into(), json!(table.counts()));
    meta.insert("residual".into(), json!(residual));
    let path = ctx.out_dir.join("clm.json");
    save_clm(&clms, &meta, &path)?;
    writeln!(
        out,
        "model: {} (n = {}, T = {})",
        cfg.model_kind,
        cfg.model.dim(),
        cfg.horizon
    )?;
    writeln!(out, "c = {:?}", table.counts())?;
    writeln!(out, "alpha slots: {}", table.slots().len())?;
    writeln!(
        out,
        "terms: psi_x {}, psi_u {}",
        clms.psi_x.term_count(),
        clms.psi_u.term_count()
    )?;
    writeln!(
        out,
        "achievability residual: {residual:e} over {} windows",
        cfg.verify.trials
    )?;
    writeln!(out, "wrote {}", path.display())?;
    check_residual(residual, cfg.verify.tolerance)
}

fn cmd_verify(ctx: &Context, clm: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.cfg;
    let clms = match clm {
        Some(p) => load_clm(p, Some(&cfg.model))?.0,
        None => ctx.maps()?,
    };
    let residual = verify_achievability(&clms, &cfg.model, cfg.verify.trials, cfg.seed)?;
    let pass = residual <= cfg.verify.tolerance;
    ctx.write_json(
        "verify.json",
        json!({
            "residual": residual,
            "tolerance": cfg.verify.tolerance,
            "windows": cfg.verify.trials,
            "pass": pass,
        }),
    )?;
    writeln!(
        out,
        "achievability residual: {residual:e} (tolerance {:e}, {} windows): {}",
        cfg.verify.tolerance,
        cfg.verify.trials,
        if pass { "ok" } else { "FAILED" }
    )?;
    check_residual(residual, cfg.verify.tolerance)
}

fn report_trajectory(
    ctx: &Context,
    name: &str,
    mut traj: crate::sim::TrajectoryRecord,
    clms: &ClosedLoopMaps,
    out: &mut dyn Write,
) -> Result<()> {
    annotate(&mut traj, &ctx.cfg.cost);
    let total = trajectory_cost(&traj, &ctx.cfg.cost);
    let err = clm_state_error(&traj, clms)?;
    let path = ctx.write(name, &traj.to_csv(&ctx.preamble()))?;
    writeln!(out, "steps: {}", traj.horizon())?;
    writeln!(out, "total cost: {total:.12e}")?;
    writeln!(out, "max |x_t - psi_x(window)|: {err:e}")?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn cmd_simulate(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.cfg;
    let clms = ctx.maps()?;
    let dist = cfg
        .disturbance
        .sequence(0, cfg.simulate_steps, cfg.model.dim());
    let traj = simulate(&cfg.model, &clms, &dist, cfg.simulate_steps)?;
    report_trajectory(ctx, "trajectory.csv", traj, &clms, out)
}

fn cmd_impulse(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.cfg;
    let clms = ctx.maps()?;
    let imp = &cfg.impulse;
    let traj = impulse_response(&cfg.model, &clms, imp.magnitude, imp.coordinate, imp.steps)?;
    report_trajectory(ctx, "impulse.csv", traj, &clms, out)
}

fn checks(cfg: &ModelConfig) -> CandidateChecks {
    cfg.optimize.checks
}

fn cmd_sweep(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.cfg;
    let sw = cfg.sweep.as_ref().ok_or_else(|| {
        Error::config(
            "sweep",
            "no sweep slot given (use --slot or the `sweep` section)",
        )
    })?;
    let rows = sweep(
        &cfg.model,
        cfg.horizon,
        &cfg.alpha,
        sw.slot,
        &sw.grid,
        &cfg.cost,
        &cfg.disturbance,
        &checks(cfg),
    )?;
    let path = ctx.write("sweep.csv", &sweep_csv(&rows, &ctx.preamble()))?;
    writeln!(out, "slot {}: {} grid points", sw.slot, rows.len())?;
    if let Some(best) = rows
        .iter()
        .min_by(|a, b| a.total_cost.total_cmp(&b.total_cost))
    {
        writeln!(
            out,
            "lowest total cost {:.6e} at {}",
            best.total_cost, best.value
        )?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn cmd_optimize(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let cfg = &ctx.cfg;
    let res = optimize(
        &cfg.model,
        cfg.horizon,
        &cfg.alpha,
        &cfg.cost,
        &cfg.disturbance,
        &cfg.optimize,
    )?;
    let alpha_path = ctx.write_json(
        "alpha.json",
        json!({ "alpha": res.alpha, "cost": res.cost }),
    )?;
    let slots: Vec<String> = res.slots.iter().map(Slot::to_string).collect();
    let trace_path = ctx.write_json("trace.json", json!({ "slots": slots, "trace": res.trace }))?;
    let first = res.trace.first().map_or(f64::NAN, |t| t.cost);
    writeln!(out, "iterations: {}", res.trace.len().saturating_sub(1))?;
    writeln!(out, "cost: {first:.6e} -> {:.6e}", res.cost)?;
    for (slot, v) in res.alpha.iter() {
        writeln!(out, "  alpha[{slot}] = {v:.6}")?;
    }
    writeln!(out, "wrote {}", alpha_path.display())?;
    writeln!(out, "wrote {}", trace_path.display())?;
    Ok(())
}
