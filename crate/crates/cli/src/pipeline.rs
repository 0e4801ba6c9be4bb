//! Stage orchestration: branch, floquet, chart, then verification and the
//! manifest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use cyclicity_core::branch::{
    hopf_scan, orbit_from_hopf, qrt_seed, rescale_branch, rescale_orbit, trace_branch, Boundary, Branch, HopfData,
};
use cyclicity_core::chart::{build_chart_refined, first_integral_drift, verify_predator_prey, PlanarChart};
use cyclicity_core::curves::{compare, nesting_check, JordanCurve, Relation};
use cyclicity_core::floquet::{conservation_check, floquet_report, monodromy, FloquetReport};
use cyclicity_core::integrate::{integrate_with, local_maxima, HistorySegment};
use cyclicity_core::model::ModelDefinition;
use cyclicity_core::orbit::{solve_orbit, OrbitTarget, PeriodicOrbit, SolverOptions};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::{BranchSpec, LoadedConfig, SeedSpec, Stage};
use crate::error::CliError;
use crate::verify::{verify_dir, VerifyTable};

/// Oscillation size of the first orbit off a Hopf point.
const HOPF_EPS: f64 = 1e-2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub version: String,
    pub model: String,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    pub verification: Option<VerifyTable>,
    /// Homoclinic and other branch-end classifications, by branch name.
    pub boundaries: BTreeMap<String, [String; 2]>,
}

impl RunManifest {
    pub fn failed_stage(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| !s.ok)
    }

    pub fn passed(&self) -> bool {
        self.failed_stage().is_none() && self.verification.as_ref().is_some_and(|v| v.passed())
    }
}

/// A traced slow branch and its rescaled copies.
pub struct BranchRun {
    pub spec: BranchSpec,
    pub seed_hopf: Option<HopfData>,
    pub branch: Branch,
    pub copies: Vec<Branch>,
}

/// Runs the configured stages and writes every artifact, then the manifest.
/// A failing stage stops the run; the manifest still records it.
pub fn run_pipeline(cfg: &LoadedConfig) -> Result<RunManifest, CliError> {
    let model = cfg.config.build_model()?;
    let out = cfg.output.as_path();
    std::fs::create_dir_all(out)?;
    // A manifest from an earlier run no longer describes the directory.
    let stale = out.join(MANIFEST_JSON);
    if stale.exists() {
        std::fs::remove_file(&stale)?;
    }
    let stages = cfg.stages();
    let opts = cfg.config.solver.options();
    let mut records = Vec::new();
    let mut produced: Vec<&str> = Vec::new();

    let timed = |name: &str, records: &mut Vec<StageRecord>, f: &mut dyn FnMut() -> Result<(), CliError>| {
        let t = Instant::now();
        info!("stage {name}");
        let res = f();
        let rec = StageRecord {
            name: name.into(),
            seconds: t.elapsed().as_secs_f64(),
            ok: res.is_ok(),
            error: res.as_ref().err().map(|e| e.to_string()),
        };
        if let Some(e) = &rec.error {
            warn!("stage {name} failed: {e}");
        }
        records.push(rec);
        res.is_ok()
    };

    let mut runs: Vec<BranchRun> = Vec::new();
    let mut rows: Vec<BranchRow> = Vec::new();
    let mut ok = timed("branch", &mut records, &mut || {
        runs = branch_stage(&model, cfg, &opts)?;
        rows = branch_rows(&runs);
        write_branch_artifacts(out, &runs, &rows)
    });
    if ok {
        produced.extend([BRANCH_CSV, BRANCHES_JSON, ORBITS_JSON]);
    }
    if ok && stages.contains(&Stage::Floquet) {
        ok = timed("floquet", &mut records, &mut || {
            let art = floquet_stage(&model, cfg, &opts, &runs)?;
            fill_mu_c(&mut rows, &art);
            write_json(&out.join(FLOQUET_JSON), &art)?;
            write_branch_csv(out, &rows)
        });
        if ok {
            produced.push(FLOQUET_JSON);
        }
    }
    if ok && stages.contains(&Stage::Chart) {
        ok = timed("chart", &mut records, &mut || chart_stage(&model, cfg, &opts, &runs, out));
        if ok {
            produced.extend([CHART_CSV, CURVES_CSV, CHART_JSON]);
        }
    }
    let verification = if ok {
        let mut table = None;
        timed("verify", &mut records, &mut || {
            table = Some(verify_dir(cfg, &model)?);
            Ok(())
        });
        table
    } else {
        None
    };
    produced.sort();
    let artifacts = produced
        .iter()
        .map(|name| {
            let path = out.join(name);
            Ok(ArtifactRecord {
                path: (*name).into(),
                sha256: sha256_file(&path)?,
                bytes: std::fs::metadata(&path)?.len(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = RunManifest {
        config_sha256: cfg.hash.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        model: model.name.clone(),
        stages: records,
        artifacts,
        verification,
        boundaries: runs
            .iter()
            .map(|r| (r.spec.name.clone(), [describe(&r.branch.lower), describe(&r.branch.upper)]))
            .collect(),
    };
    write_json(&out.join(MANIFEST_JSON), &manifest)?;
    Ok(manifest)
}

fn describe(b: &Boundary) -> String {
    match b {
        Boundary::Hopf {
            hopf,
            extrapolated_delay,
            extrapolated_period,
        } => format!(
            "hopf at x = {} (r = {}, p = {}; extrapolated r = {extrapolated_delay}, p = {extrapolated_period})",
            hopf.equilibrium,
            hopf.delay,
            hopf.period()
        ),
        Boundary::Homoclinic {
            limit_amplitude,
            aitken,
            max_period,
            ..
        } => format!("homoclinic at amplitude {limit_amplitude} (Aitken {aitken}, p up to {max_period})"),
        Boundary::DomainEdge { amplitude } => format!("window edge at amplitude {amplitude}"),
        Boundary::Unresolved { reason } => format!("unresolved: {reason}"),
    }
}

pub fn seed_orbit(
    model: &ModelDefinition,
    spec: &BranchSpec,
    opts: &SolverOptions,
) -> Result<(PeriodicOrbit, Option<HopfData>), CliError> {
    let fail = |e: cyclicity_core::Error| CliError::numerical("branch", format!("branch `{}`: {e}", spec.name));
    match spec.seed {
        SeedSpec::Hopf { equilibrium } => {
            let hopf = hopf_scan(model, equilibrium, 1).map_err(fail)?[0];
            let orbit = orbit_from_hopf(model, &hopf, HOPF_EPS, opts).map_err(fail)?;
            Ok((orbit, Some(hopf)))
        }
        SeedSpec::Hamiltonian { amplitude } => {
            let guess = qrt_seed(model, amplitude, opts.n_modes).map_err(fail)?;
            let orbit = solve_orbit(model, OrbitTarget::Amplitude(amplitude), &guess, opts).map_err(fail)?;
            Ok((orbit, None))
        }
    }
}

pub fn branch_stage(model: &ModelDefinition, cfg: &LoadedConfig, opts: &SolverOptions) -> Result<Vec<BranchRun>, CliError> {
    let c = &cfg.config.continuation;
    c.branches
        .par_iter()
        .map(|spec| {
            let fail = |e: cyclicity_core::Error| CliError::numerical("branch", format!("branch `{}`: {e}", spec.name));
            let (seed, seed_hopf) = seed_orbit(model, spec, opts)?;
            let policy = c.step.policy(spec.window);
            let branch = trace_branch(model, &seed, &policy, opts).map_err(fail)?;
            info!(
                "branch {}: {} orbits, ends {} / {}",
                spec.name,
                branch.len(),
                branch.lower.label(),
                branch.upper.label()
            );
            let copies = c
                .m
                .iter()
                .map(|&m| rescale_branch(model, &branch, m).map_err(fail))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(BranchRun {
                spec: spec.clone(),
                seed_hopf,
                branch,
                copies,
            })
        })
        .collect()
}

fn rows_of(name: &str, b: &Branch) -> Vec<BranchRow> {
    let lo = b.lower_approach.len();
    let n = b.len();
    b.all_orbits()
        .enumerate()
        .map(|(i, o)| {
            let boundary = if i == 0 {
                format!("lower:{}", b.lower.label())
            } else if i + 1 == n {
                format!("upper:{}", b.upper.label())
            } else if i < lo || i >= lo + b.orbits.len() {
                "approach".into()
            } else {
                "interior".into()
            };
            BranchRow {
                branch: name.into(),
                m: b.m_index,
                a: o.amplitude,
                r: o.delay,
                p: o.period,
                q: o.time_of_depth,
                depth: o.depth,
                residual: o.residual,
                mu_c: None,
                boundary,
                index: i,
            }
        })
        .collect()
}

pub fn branch_rows(runs: &[BranchRun]) -> Vec<BranchRow> {
    let mut rows = Vec::new();
    for run in runs {
        rows.extend(rows_of(&run.spec.name, &run.branch));
        for copy in &run.copies {
            rows.extend(rows_of(&run.spec.name, copy));
        }
    }
    rows
}

fn summary(run: &BranchRun, b: &Branch) -> BranchSummary {
    let (lo, hi) = b.amplitude_domain();
    BranchSummary {
        name: run.spec.name.clone(),
        m: b.m_index,
        seed: run.spec.seed.clone(),
        window: run.spec.window,
        seed_hopf: run.seed_hopf,
        lower: b.lower.clone(),
        upper: b.upper.clone(),
        orbits: b.orbits.len(),
        lower_approach: b.lower_approach.len(),
        upper_approach: b.upper_approach.len(),
        amplitude_domain: [lo, hi],
    }
}

fn write_branch_csv(out: &Path, rows: &[BranchRow]) -> Result<(), CliError> {
    let fields: Vec<Vec<String>> = rows.iter().map(BranchRow::fields).collect();
    write_csv(&out.join(BRANCH_CSV), &BRANCH_HEADER, &fields)
}

fn write_branch_artifacts(out: &Path, runs: &[BranchRun], rows: &[BranchRow]) -> Result<(), CliError> {
    write_branch_csv(out, rows)?;
    let summaries: Vec<BranchSummary> = runs
        .iter()
        .flat_map(|r| std::iter::once(summary(r, &r.branch)).chain(r.copies.iter().map(move |c| summary(r, c))))
        .collect();
    write_json(&out.join(BRANCHES_JSON), &summaries)?;
    let store: OrbitStore = runs
        .iter()
        .map(|r| (r.spec.name.clone(), r.branch.all_orbits().map(|o| o.record()).collect()))
        .collect();
    write_json(&out.join(ORBITS_JSON), &store)
}

fn floquet_entry(branch: &str, index: usize, o: &PeriodicOrbit, rep: &FloquetReport) -> FloquetEntry {
    let trivial = rep
        .multipliers
        .iter()
        .enumerate()
        .min_by(|(_, x), (_, y)| (x[0] - 1.0).hypot(x[1]).total_cmp(&(y[0] - 1.0).hypot(y[1])))
        .map(|(i, _)| i);
    let max_nontrivial = rep
        .multipliers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != trivial)
        .map(|(_, m)| m[0].hypot(m[1]))
        .fold(0.0, f64::max);
    FloquetEntry {
        branch: branch.into(),
        index,
        a: o.amplitude,
        r: o.delay,
        p: o.period,
        multipliers: rep.multipliers.clone(),
        trivial_error: rep.trivial_error,
        trivial_alignment: rep.trivial_alignment,
        mu_c: rep.mu_c,
        hyperbolic: rep.hyperbolic,
        fallback: rep.fallback,
        max_nontrivial,
        basis: rep.basis,
    }
}

pub fn floquet_of(model: &ModelDefinition, orbit: &PeriodicOrbit, basis: usize) -> cyclicity_core::Result<FloquetReport> {
    floquet_report(&monodromy(model, orbit, basis)?)
}

/// Amplitude and period of the attractor reached from a constant history
/// away from the orbit, measured over the trailing periods.
pub fn simulation_oracle(
    model: &ModelDefinition,
    orbit: &PeriodicOrbit,
    periods: [usize; 2],
    steps_per_delay: usize,
) -> cyclicity_core::Result<SimulationOracle> {
    let start = orbit.depth + 0.75 * (orbit.amplitude - orbit.depth);
    let history = HistorySegment::constant(start, 65);
    let t_end = periods[0] as f64 * orbit.period;
    let traj = integrate_with(model, orbit.delay, &history, t_end, steps_per_delay, 1e12)?;
    let from = t_end - periods[1] as f64 * orbit.period - 0.5 * orbit.period;
    let maxima: Vec<(f64, f64)> = local_maxima(&traj.dense, from)
        .into_iter()
        .filter(|(t, _)| *t <= t_end - 1e-9)
        .collect();
    if maxima.len() < 2 {
        return Err(cyclicity_core::Error::InvalidInput(format!(
            "simulation shows {} maxima in the last {} periods",
            maxima.len(),
            periods[1]
        )));
    }
    let k = maxima.len();
    let amplitude = maxima.iter().map(|m| m.1).sum::<f64>() / k as f64;
    let period = (maxima[k - 1].0 - maxima[0].0) / (k - 1) as f64;
    Ok(SimulationOracle {
        t_end,
        amplitude,
        period,
        amplitude_rel_error: ((amplitude - orbit.amplitude) / orbit.amplitude).abs(),
        period_rel_error: ((period - orbit.period) / orbit.period).abs(),
    })
}

pub fn floquet_stage(
    model: &ModelDefinition,
    cfg: &LoadedConfig,
    opts: &SolverOptions,
    runs: &[BranchRun],
) -> Result<FloquetArtifact, CliError> {
    let f = &cfg.config.floquet;
    let fail = |e: cyclicity_core::Error| CliError::numerical("floquet", e);
    let mut art = FloquetArtifact::default();
    for run in runs {
        let name = run.spec.name.as_str();
        let all: Vec<&PeriodicOrbit> = run.branch.all_orbits().collect();
        let picked: Vec<usize> = (0..all.len())
            .filter(|&i| i % f.stride == 0 && all[i].period <= f.max_period)
            .collect();
        let skipped = all.iter().filter(|o| o.period > f.max_period).count();
        if skipped > 0 {
            art.skipped.insert(name.into(), skipped);
        }
        let entries: Vec<FloquetEntry> = picked
            .par_iter()
            .map(|&i| floquet_of(model, all[i], f.basis).map(|rep| floquet_entry(name, i, all[i], &rep)))
            .collect::<Result<_, _>>()
            .map_err(fail)?;
        art.branch_orbits.extend(entries);
        if let Some(&mid) = picked.get(picked.len() / 2) {
            for forced in [false, true] {
                let c = conservation_check(model, all[mid], f.steps_per_delay, forced).map_err(fail)?;
                art.conservation.push(ConservationEntry {
                    branch: name.into(),
                    index: mid,
                    forced,
                    start: c.start,
                    end: c.end,
                    relative_error: c.relative_error,
                });
            }
        }
        for &r in &f.delays {
            let (lo, hi) = run
                .branch
                .orbits
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.delay), hi.max(o.delay)));
            if !(r >= lo && r <= hi) {
                continue;
            }
            let orbit = run.branch.orbit_at_delay(model, r, opts).map_err(fail)?;
            let rep = floquet_of(model, &orbit, f.basis).map_err(fail)?;
            let entry = floquet_entry(name, usize::MAX, &orbit, &rep);
            let simulation = if entry.max_nontrivial < 1.0 {
                Some(simulation_oracle(model, &orbit, f.simulate_periods, f.steps_per_delay).map_err(fail)?)
            } else {
                None
            };
            art.delays.push(DelayProbe {
                branch: name.into(),
                delay: r,
                orbit: orbit.record(),
                floquet: entry,
                simulation,
            });
        }
    }
    Ok(art)
}

fn fill_mu_c(rows: &mut [BranchRow], art: &FloquetArtifact) {
    let lookup: BTreeMap<(&str, usize), f64> = art
        .branch_orbits
        .iter()
        .map(|e| ((e.branch.as_str(), e.index), e.mu_c))
        .collect();
    for row in rows.iter_mut().filter(|r| r.m == 0) {
        row.mu_c = lookup.get(&(row.branch.as_str(), row.index)).copied();
    }
}

/// The curve that a translated copy of the middle curve makes; it cannot be
/// nested with the family.
pub fn injected_curve(curves: &[JordanCurve]) -> Result<JordanCurve, CliError> {
    let mid = &curves[curves.len() / 2];
    let (lo, hi) = mid
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
    let shift = 0.25 * (hi - lo);
    let pts = mid.points.iter().map(|p| [p[0] + shift, p[1]]).collect();
    JordanCurve::new(usize::MAX, mid.amplitude, pts).map_err(|e| CliError::numerical("chart", e))
}

fn chart_summary(
    model: &ModelDefinition,
    run: &BranchRun,
    chart: &PlanarChart,
    curves: &[JordanCurve],
    cfg: &LoadedConfig,
) -> Result<ChartSummary, CliError> {
    let fail = |e: cyclicity_core::Error| CliError::numerical("chart", format!("branch `{}`: {e}", run.spec.name));
    let c = &cfg.config.chart;
    let pp = verify_predator_prey(chart).map_err(fail)?;
    let orbits = chart.orbits();
    let na = orbits.len();
    let mid = &orbits[na / 2];
    let (u0, v0) = mid.planar(0.3 * mid.period);
    let (o1, o2) = (&orbits[na / 3], &orbits[na / 3 + 1]);
    let (u1, v1) = o1.planar(0.7 * o1.period);
    let (u2, v2) = o2.planar(0.7 * o2.period);
    let starts = [([u0, v0], mid.period), ([0.5 * (u1 + u2), 0.5 * (v1 + v2)], o1.period)];
    let drift = starts
        .par_iter()
        .map(|&(start, p)| {
            let span = c.drift_periods * p;
            first_integral_drift(chart, start, span).map(|d| DriftSummary {
                start,
                span,
                max_alpha_drift: d.max_alpha_drift,
                max_hamiltonian_drift: d.max_hamiltonian_drift,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let rep = nesting_check(curves);
    let mut with_bad = curves.to_vec();
    with_bad.push(injected_curve(curves)?);
    let injected = nesting_check(&with_bad);
    let mid_curve = &curves[curves.len() / 2];
    let source = orbits
        .iter()
        .min_by(|x, y| (x.amplitude - mid_curve.amplitude).abs().total_cmp(&(y.amplitude - mid_curve.amplitude).abs()))
        .expect("chart has orbits");
    // Vertices of a reversed copy fall between the original's, so the set
    // comparison needs a finer polygon than the exported curves.
    let fine = 8 * c.curve_vertices;
    let base = JordanCurve::from_orbit(0, source, fine).map_err(fail)?;
    let rescaled = cfg
        .config
        .continuation
        .m
        .iter()
        .map(|&m| {
            let o = rescale_orbit(model, source, m)?;
            let curve = JordanCurve::from_orbit(1, &o, fine)?;
            let cmp = compare(&base, &curve);
            Ok(RescaledCurve {
                m,
                amplitude: source.amplitude,
                hausdorff: cmp.hausdorff,
                identical: cmp.relation == Relation::Identical,
            })
        })
        .collect::<cyclicity_core::Result<Vec<_>>>()
        .map_err(fail)?;
    let n = chart.t_per_period;
    let max_abs_alpha_check = chart.nodes[n..(na - 1) * n]
        .iter()
        .map(|nd| if nd.alpha_check.is_nan() { f64::INFINITY } else { nd.alpha_check.abs() })
        .fold(0.0, f64::max);
    let (lo, hi) = chart.amplitude_range();
    Ok(ChartSummary {
        branch: run.spec.name.clone(),
        orbits: na,
        amplitude_range: [lo, hi],
        det_sign: chart.det_sign,
        min_abs_det: chart.nodes.iter().map(|nd| nd.det_dg.abs()).fold(f64::INFINITY, f64::min),
        interior_nodes: pp.interior_nodes,
        predator_prey_negative_fraction: pp.negative_fraction,
        predator_prey_passed: pp.passed,
        max_abs_alpha_check,
        drift,
        nesting: NestingSummary {
            curves: curves.len(),
            crossings: rep.crossings,
            tangencies: rep.tangencies,
            identical: rep.identical,
            margin: rep.margin,
        },
        injected_crossings: injected.crossings,
        rescaled,
    })
}

pub fn chart_stage(
    model: &ModelDefinition,
    cfg: &LoadedConfig,
    opts: &SolverOptions,
    runs: &[BranchRun],
    out: &Path,
) -> Result<(), CliError> {
    let c = &cfg.config.chart;
    let per_branch = runs
        .iter()
        .map(|run| {
            let fail = |e: cyclicity_core::Error| CliError::numerical("chart", format!("branch `{}`: {e}", run.spec.name));
            let chart = build_chart_refined(model, &run.branch.orbits, &c.options(), opts).map_err(fail)?;
            let orbits = run.branch.orbits_across(model, c.curves, opts).map_err(fail)?;
            let curves = orbits
                .par_iter()
                .enumerate()
                .map(|(i, o)| JordanCurve::from_orbit(i, o, c.curve_vertices))
                .collect::<Result<Vec<_>, _>>()
                .map_err(fail)?;
            let summary = chart_summary(model, run, &chart, &curves, cfg)?;
            Ok((chart, curves, summary))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut chart_rows = Vec::new();
    let mut curve_rows = Vec::new();
    let mut art = ChartArtifact::default();
    for (run, (chart, curves, summary)) in runs.iter().zip(per_branch) {
        let name = run.spec.name.as_str();
        for nd in &chart.nodes {
            chart_rows.push(vec![
                name.to_string(),
                num(nd.t),
                num(nd.a),
                num(nd.u),
                num(nd.v),
                num(nd.det_dg),
                num(nd.g),
                num(nd.alpha_check),
            ]);
        }
        for curve in &curves {
            for (k, p) in curve.points.iter().enumerate() {
                curve_rows.push(vec![
                    name.to_string(),
                    curve.id.to_string(),
                    num(curve.amplitude),
                    k.to_string(),
                    num(p[0]),
                    num(p[1]),
                ]);
            }
        }
        art.charts.push(summary);
    }
    write_csv(&out.join(CHART_CSV), &CHART_HEADER, &chart_rows)?;
    write_csv(&out.join(CURVES_CSV), &CURVES_HEADER, &curve_rows)?;
    write_json(&out.join(CHART_JSON), &art)
}
