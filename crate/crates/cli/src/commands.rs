//! One function per subcommand.

use std::path::{Path, PathBuf};

use cyclicity_core::branch::{continue_branch, hopf_scan, orbit_from_hopf, qrt_seed, Direction, StepPolicy};
use cyclicity_core::integrate::{integrate_with, HistorySegment};
use cyclicity_core::model::{find_equilibria, ModelDefinition};
use cyclicity_core::orbit::{solve_orbit, OrbitGuess, OrbitRecord, OrbitTarget, PeriodicOrbit, SolverOptions};
use log::info;
use serde::Serialize;

use crate::artifacts::*;
use crate::config::{build_certified, read_model_spec, LoadedConfig, Stage};
use crate::error::CliError;
use crate::figures::figure_spec;
use crate::pipeline::{floquet_of, run_pipeline, RunManifest};
use crate::verify::{expected_artifacts, verify_dir, VerifyTable};

pub const HISTORY_POINTS: usize = 129;

/// `const:<value>` or `expr:<expression in t>` on `[-1, 0]`.
pub fn parse_history(text: &str) -> Result<HistorySegment, CliError> {
    let usage = |m: String| CliError::Usage(format!("--history {text:?}: {m}"));
    if let Some(v) = text.strip_prefix("const:") {
        let v: f64 = v.trim().parse().map_err(|e| usage(format!("{e}")))?;
        if !v.is_finite() {
            return Err(usage("value is not finite".into()));
        }
        Ok(HistorySegment::constant(v, HISTORY_POINTS))
    } else if let Some(e) = text.strip_prefix("expr:") {
        HistorySegment::from_expr(HISTORY_POINTS, e).map_err(|e| usage(e.to_string()))
    } else {
        Err(usage("expected const:<value> or expr:<expression in t>".into()))
    }
}

pub fn simulate(
    model_config: &Path,
    r: f64,
    history: &str,
    t_end: f64,
    steps_per_delay: usize,
    out: &Path,
) -> Result<(), CliError> {
    let model = build_certified(&read_model_spec(model_config)?)?;
    let history = parse_history(history)?;
    if !(t_end > 0.0) || !r.is_finite() || steps_per_delay == 0 {
        return Err(CliError::Usage("need t_end > 0, finite r and steps_per_delay >= 1".into()));
    }
    let traj = integrate_with(&model, r, &history, t_end, steps_per_delay, 1e12)
        .map_err(|e| CliError::numerical("simulate", e))?;
    let h = 1.0 / steps_per_delay as f64;
    let steps = (traj.t_end() / h + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = (k as f64 * h).min(traj.t_end());
        let fail = |e| CliError::numerical("simulate", e);
        rows.push(vec![
            num(t),
            num(traj.eval(t).map_err(fail)?),
            num(traj.eval(t - 1.0).map_err(fail)?),
            num(traj.residual_at(&model, t).map_err(fail)?),
        ]);
    }
    write_csv(out, &["t", "x", "x_delayed", "residual"], &rows)?;
    info!("{} samples, max midpoint residual {:e}", rows.len(), traj.info.max_residual);
    Ok(())
}

/// `hopf`, `hamiltonian`, or the path of an orbit JSON file.
pub fn orbit(
    model_config: &Path,
    amplitude: f64,
    seed: &str,
    n_modes: usize,
    equilibrium: Option<f64>,
    out: &Path,
) -> Result<OrbitRecord, CliError> {
    let model = build_certified(&read_model_spec(model_config)?)?;
    let opts = SolverOptions {
        n_modes,
        ..SolverOptions::default()
    };
    let fail = |e: cyclicity_core::Error| CliError::numerical("orbit", e);
    let orbit = match seed {
        "hopf" => orbit_via_hopf(&model, amplitude, equilibrium, &opts)?,
        "hamiltonian" => {
            let guess = qrt_seed(&model, amplitude, n_modes).map_err(fail)?;
            solve_orbit(&model, OrbitTarget::Amplitude(amplitude), &guess, &opts).map_err(fail)?
        }
        file => {
            let rec: OrbitRecord = read_json(Path::new(file))?;
            let guess = OrbitGuess {
                profile: rec.profile,
                period: rec.p,
                delay: rec.r,
            };
            solve_orbit(&model, OrbitTarget::Amplitude(amplitude), &guess, &opts).map_err(fail)?
        }
    };
    let rec = orbit.record();
    write_json(out, &rec)?;
    Ok(rec)
}

/// Continues from the Hopf point of the nearest equilibrium below
/// `amplitude` up to `amplitude`.
fn orbit_via_hopf(
    model: &ModelDefinition,
    amplitude: f64,
    equilibrium: Option<f64>,
    opts: &SolverOptions,
) -> Result<PeriodicOrbit, CliError> {
    let fail = |e: cyclicity_core::Error| CliError::numerical("orbit", e);
    let xbar = match equilibrium {
        Some(x) => x,
        None => {
            let diag = model
                .domain
                .diagonal()
                .ok_or_else(|| CliError::Usage("model domain misses the diagonal".into()))?;
            let eq = find_equilibria(model, diag, 4000).map_err(fail)?;
            eq.into_iter()
                .filter(|&x| x < amplitude && hopf_scan(model, x, 1).is_ok())
                .fold(None, |best: Option<f64>, x| Some(best.map_or(x, |b| b.max(x))))
                .ok_or_else(|| CliError::Usage(format!("no equilibrium with a Hopf root below amplitude {amplitude}")))?
        }
    };
    let hopf = hopf_scan(model, xbar, 1).map_err(fail)?[0];
    let eps = (1e-2f64).min(0.5 * (amplitude - xbar));
    if !(eps > 0.0) {
        return Err(CliError::Usage(format!("amplitude {amplitude} is not above the equilibrium {xbar}")));
    }
    let seed = orbit_from_hopf(model, &hopf, eps, opts).map_err(fail)?;
    let policy = StepPolicy {
        window: [xbar, amplitude],
        ..StepPolicy::default()
    };
    let branch = continue_branch(model, &seed, Direction::Up, &policy, opts).map_err(fail)?;
    let last = branch.orbits.last().expect("continuation keeps its seed");
    if last.amplitude != amplitude {
        return Err(CliError::numerical(
            "orbit",
            format!("branch from x = {xbar} ends before amplitude {amplitude}: {:?}", branch.upper),
        ));
    }
    Ok(last.clone())
}

#[derive(Debug, Serialize)]
pub struct FloquetOutput {
    pub multipliers: Vec<[f64; 2]>,
    pub trivial_error: f64,
    pub mu_c: f64,
    pub hyperbolic: bool,
    pub trivial_alignment: f64,
    pub mu_c_zero_count: usize,
    pub fallback: bool,
    pub basis: usize,
}

pub fn floquet(model_config: &Path, orbit: &Path, basis: usize, out: &Path) -> Result<FloquetOutput, CliError> {
    let model = build_certified(&read_model_spec(model_config)?)?;
    let rec: OrbitRecord = read_json(orbit)?;
    if basis < 16 {
        return Err(CliError::Usage(format!("--basis must be at least 16, got {basis}")));
    }
    let fail = |e: cyclicity_core::Error| CliError::numerical("floquet", e);
    let orbit = PeriodicOrbit::from_record(&model, &rec).map_err(fail)?;
    let rep = floquet_of(&model, &orbit, basis).map_err(fail)?;
    let out_data = FloquetOutput {
        multipliers: rep.multipliers,
        trivial_error: rep.trivial_error,
        mu_c: rep.mu_c,
        hyperbolic: rep.hyperbolic,
        trivial_alignment: rep.trivial_alignment,
        mu_c_zero_count: rep.mu_c_zero_count,
        fallback: rep.fallback,
        basis: rep.basis,
    };
    write_json(out, &out_data)?;
    Ok(out_data)
}

/// Runs the pipeline restricted to `stages` (the branch stage always runs).
pub fn run_stages(config: &Path, stages: Option<Vec<Stage>>) -> Result<RunManifest, CliError> {
    let mut cfg = LoadedConfig::read(config)?;
    if let Some(s) = stages {
        cfg.config.stages = Some(s);
    }
    let manifest = run_pipeline(&cfg)?;
    finish(&manifest)?;
    Ok(manifest)
}

fn finish(manifest: &RunManifest) -> Result<(), CliError> {
    if let Some(s) = manifest.failed_stage() {
        return Err(CliError::Numerical {
            stage: s.name.clone(),
            message: s.error.clone().unwrap_or_default(),
        });
    }
    Ok(())
}

/// Checks an existing run directory, or runs the pipeline first when
/// artifacts are missing and `no_regen` is off.
pub fn verify(config: &Path, no_regen: bool) -> Result<VerifyTable, CliError> {
    let cfg = LoadedConfig::read(config)?;
    let missing: Vec<PathBuf> = expected_artifacts(&cfg)
        .into_iter()
        .map(|a| cfg.output.join(a))
        .filter(|p| !p.exists())
        .collect();
    let table = if missing.is_empty() {
        let model = cfg.config.build_model()?;
        verify_dir(&cfg, &model)?
    } else if no_regen {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::Usage(format!("missing artifacts: {}", list.join(", "))));
    } else {
        let manifest = run_pipeline(&cfg)?;
        finish(&manifest)?;
        manifest.verification.unwrap_or_default()
    };
    Ok(table)
}

pub fn export_figure_data(config: &Path, out: Option<&Path>, amplitude_cap: Option<f64>) -> Result<PathBuf, CliError> {
    let cfg = LoadedConfig::read(config)?;
    let title = cfg
        .config
        .model
        .f
        .clone()
        .unwrap_or_else(|| cfg.config.model.kind.clone());
    let spec = figure_spec(&cfg.output, &title, amplitude_cap)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.join("figure.json"));
    write_json(&path, &spec)?;
    Ok(path)
}
