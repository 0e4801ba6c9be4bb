//! The acceptance table, recomputed from the files of a run directory.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use cyclicity_core::branch::Boundary;
use cyclicity_core::curves::{nesting_check, JordanCurve};
use cyclicity_core::model::{find_equilibria, ModelDefinition};
use cyclicity_core::orbit::{check_oscillation, orbit_residual, PeriodicOrbit};
use cyclicity_core::branch::rescale_orbit;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::{LoadedConfig, Stage};
use crate::error::CliError;
use crate::pipeline::{injected_curve, RunManifest};

pub const RESIDUAL_TOL: f64 = 1e-8;
pub const ENHARMONIC_PERIOD_TOL: f64 = 1e-8;
pub const ENHARMONIC_DELAY_TOL: f64 = 1e-6;
pub const ENHARMONIC_CHART_TOL: f64 = 1e-5;
pub const HOPF_LIMIT_TOL: f64 = 1e-2;
pub const TRIVIAL_TOL: f64 = 1e-4;
pub const ORACLE_REL_TOL: f64 = 1e-3;
pub const EQUILIBRIUM_H_TOL: f64 = 1e-12;
pub const HOMOCLINIC_TOL: f64 = 1e-3;
pub const HOMOCLINIC_MIN_PERIOD: f64 = 100.0;
pub const PRODUCT_TOL: f64 = 1e-12;
pub const CONSERVATION_TOL: f64 = 1e-8;
pub const DRIFT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst value seen, compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub status: Status,
    pub note: String,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerifyTable {
    pub criteria: Vec<Criterion>,
}

impl VerifyTable {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.status != Status::Fail)
    }

    pub fn get(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.criteria {
            let status = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            out.push(format!("{:<9} {status}  {}", c.id, c.note));
            for k in c.checks.iter().filter(|k| !k.passed) {
                out.push(format!(
                    "          - {}: {:e} (tolerance {:e}) {}",
                    k.name, k.value, k.tolerance, k.detail
                ));
            }
        }
        out
    }
}

fn criterion(id: &str, note: &str, checks: Vec<Check>) -> Criterion {
    let status = if checks.is_empty() {
        Status::Skip
    } else if checks.iter().all(|c| c.passed) {
        Status::Pass
    } else {
        Status::Fail
    };
    Criterion {
        id: id.into(),
        status,
        note: note.into(),
        checks,
    }
}

fn skip(id: &str, note: &str) -> Criterion {
    criterion(id, note, Vec::new())
}

/// `value <= tol`, with NaN failing.
fn below(name: impl Into<String>, value: f64, tol: f64, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed: value <= tol,
        value,
        tolerance: tol,
        detail: detail.into(),
    }
}

fn flag(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        value: if passed { 0.0 } else { 1.0 },
        tolerance: 0.0,
        detail: detail.into(),
    }
}

/// Largest `value` over items, with the label of the worst one.
fn worst<'a, I: IntoIterator<Item = (f64, String)>>(items: I) -> (f64, String) {
    items.into_iter().fold((0.0, String::new()), |acc, (v, label)| {
        if v.is_nan() || (!acc.0.is_nan() && v > acc.0) {
            (v, label)
        } else {
            acc
        }
    })
}

struct Loaded {
    rows: Vec<BranchRow>,
    summaries: Vec<BranchSummary>,
    store: OrbitStore,
    floquet: Option<FloquetArtifact>,
    chart_rows: Option<Vec<ChartRow>>,
    curve_rows: Option<Vec<CurveRow>>,
    charts: Option<ChartArtifact>,
}

fn load(cfg: &LoadedConfig) -> Result<Loaded, CliError> {
    let dir = &cfg.output;
    let stages = cfg.stages();
    let floquet = stages.contains(&Stage::Floquet);
    let chart = stages.contains(&Stage::Chart);
    Ok(Loaded {
        rows: read_csv(&dir.join(BRANCH_CSV))?,
        summaries: read_json(&dir.join(BRANCHES_JSON))?,
        store: read_json(&dir.join(ORBITS_JSON))?,
        floquet: floquet.then(|| read_json(&dir.join(FLOQUET_JSON))).transpose()?,
        chart_rows: chart.then(|| read_csv(&dir.join(CHART_CSV))).transpose()?,
        curve_rows: chart.then(|| read_csv(&dir.join(CURVES_CSV))).transpose()?,
        charts: chart.then(|| read_json(&dir.join(CHART_JSON))).transpose()?,
    })
}

/// The artifacts a run directory must hold for `cfg`.
pub fn expected_artifacts(cfg: &LoadedConfig) -> Vec<&'static str> {
    let mut v = vec![BRANCH_CSV, BRANCHES_JSON, ORBITS_JSON];
    let stages = cfg.stages();
    if stages.contains(&Stage::Floquet) {
        v.push(FLOQUET_JSON);
    }
    if stages.contains(&Stage::Chart) {
        v.extend([CHART_CSV, CURVES_CSV, CHART_JSON]);
    }
    v
}

/// Reconstructs the orbit a `branch.csv` row describes, from the stored slow
/// profile and the row's own `p` and `r`.
fn row_orbit(model: &ModelDefinition, row: &BranchRow, store: &OrbitStore) -> cyclicity_core::Result<PeriodicOrbit> {
    let rec = store
        .get(&row.branch)
        .and_then(|v| v.get(row.index))
        .ok_or_else(|| cyclicity_core::Error::InvalidInput(format!("no stored orbit {}#{}", row.branch, row.index)))?;
    let base = PeriodicOrbit::from_record(model, rec)?;
    let profile = if row.m == 0 {
        base.profile
    } else {
        rescale_orbit(model, &base, row.m)?.profile
    };
    PeriodicOrbit::from_profile(model, profile, row.p, row.r)
}

/// Real-time residual of each row, recomputed.
fn row_residuals(model: &ModelDefinition, rows: &[BranchRow], store: &OrbitStore) -> Vec<f64> {
    rows.par_iter()
        .map(|row| {
            row_orbit(model, row, store)
                .and_then(|o| orbit_residual(model, &o, 4 * o.modes()))
                .unwrap_or(f64::NAN)
        })
        .collect()
}

fn label(row: &BranchRow) -> String {
    format!("{} m={} a={}", row.branch, row.m, row.a)
}

/// `Omega(a^2)` for the enharmonic family, read off `f(0, a) = -Omega(a^2) a`.
fn omega(model: &ModelDefinition, a: f64) -> f64 {
    model.eval(0.0, a).map(|f| -f / a).unwrap_or(f64::NAN)
}

pub fn verify_dir(cfg: &LoadedConfig, model: &ModelDefinition) -> Result<VerifyTable, CliError> {
    let data = load(cfg)?;
    let residuals = row_residuals(model, &data.rows, &data.store);
    let base_rows: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].m == 0).collect();
    let copy_rows: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].m != 0).collect();
    let residual_check = |idx: &[usize], name: &str| {
        let (v, at) = worst(idx.iter().map(|&i| (residuals[i], label(&data.rows[i]))));
        below(name, v, RESIDUAL_TOL, format!("worst at {at}"))
    };
    let enharmonic = model.name == "enharmonic";
    let mut table = VerifyTable::default();

    // AC-1
    table.criteria.push(if enharmonic {
        let rows: Vec<&BranchRow> = base_rows.iter().map(|&i| &data.rows[i]).collect();
        let (dp, at_p) = worst(rows.iter().map(|r| ((r.p - 4.0).abs(), label(r))));
        let (dr, at_r) = worst(rows.iter().map(|r| ((r.r - PI / (2.0 * omega(model, r.a))).abs(), label(r))));
        criterion(
            "AC-1",
            "enharmonic orbits: p = 4, r = pi / (2 Omega(a^2))",
            vec![
                below("period", dp, ENHARMONIC_PERIOD_TOL, format!("worst at {at_p}")),
                below("delay", dr, ENHARMONIC_DELAY_TOL, format!("worst at {at_r}")),
                residual_check(&base_rows, "residual"),
            ],
        )
    } else {
        skip("AC-1", "enharmonic model only")
    });

    // AC-2
    table.criteria.push(match (&data.chart_rows, enharmonic) {
        (Some(rows), true) => {
            let mut ranges: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
            for r in rows {
                let e = ranges.entry(&r.branch).or_insert((f64::INFINITY, f64::NEG_INFINITY));
                *e = (e.0.min(r.a), e.1.max(r.a));
            }
            let interior: Vec<&ChartRow> = rows
                .iter()
                .filter(|r| {
                    let (lo, hi) = ranges[r.branch.as_str()];
                    r.a > lo && r.a < hi
                })
                .collect();
            let at = |r: &ChartRow| format!("{} (u, v) = ({}, {})", r.branch, r.u, r.v);
            let (da, at_a) = worst(interior.iter().map(|r| ((r.a + r.alpha_check - r.u.hypot(r.v)).abs(), at(r))));
            let (dg, at_g) = worst(interior.iter().map(|r| {
                let g = model.eval(r.v, r.u).map(|f| -f).unwrap_or(f64::NAN);
                ((r.g - g).abs(), at(r))
            }));
            criterion(
                "AC-2",
                "enharmonic chart: alpha = |(u, v)|, g = Omega(u^2 + v^2) u",
                vec![
                    flag("interior nodes", !interior.is_empty(), format!("{} nodes", interior.len())),
                    below("alpha", da, ENHARMONIC_CHART_TOL, format!("worst at {at_a}")),
                    below("g", dg, ENHARMONIC_CHART_TOL, format!("worst at {at_g}")),
                ],
            )
        }
        (None, true) => skip("AC-2", "chart stage not run"),
        _ => skip("AC-2", "enharmonic model only"),
    });

    // AC-3
    let mut hopf_checks = Vec::new();
    for s in data.summaries.iter().filter(|s| s.m == 0) {
        for b in [&s.lower, &s.upper] {
            if let Boundary::Hopf {
                hopf,
                extrapolated_delay,
                extrapolated_period,
            } = b
            {
                hopf_checks.push(below(
                    format!("{} delay limit", s.name),
                    (extrapolated_delay - hopf.delay).abs(),
                    HOPF_LIMIT_TOL,
                    format!("extrapolated {extrapolated_delay}, Hopf {}", hopf.delay),
                ));
                hopf_checks.push(below(
                    format!("{} period limit", s.name),
                    (extrapolated_period - hopf.period()).abs(),
                    HOPF_LIMIT_TOL,
                    format!("extrapolated {extrapolated_period}, Hopf {}", hopf.period()),
                ));
            }
        }
    }
    table.criteria.push(criterion("AC-3", "branch ends extrapolate to their Hopf points", hopf_checks));

    // AC-4
    table.criteria.push(match &data.floquet {
        Some(f) if !f.delays.is_empty() => {
            let mut checks = Vec::new();
            for d in &f.delays {
                let tag = format!("{} r={}", d.branch, d.delay);
                checks.push(below(format!("{tag} trivial multiplier"), d.floquet.trivial_error, TRIVIAL_TOL, ""));
                checks.push(flag(
                    format!("{tag} nontrivial multipliers inside the unit circle"),
                    d.floquet.max_nontrivial < 1.0,
                    format!("largest modulus {}", d.floquet.max_nontrivial),
                ));
                match &d.simulation {
                    Some(s) => {
                        checks.push(below(format!("{tag} simulated amplitude"), s.amplitude_rel_error, ORACLE_REL_TOL, format!("{} vs {}", s.amplitude, d.orbit.a)));
                        checks.push(below(format!("{tag} simulated period"), s.period_rel_error, ORACLE_REL_TOL, format!("{} vs {}", s.period, d.orbit.p)));
                    }
                    None => checks.push(flag(format!("{tag} simulation"), false, "orbit unstable, no oracle")),
                }
            }
            criterion("AC-4", "stable orbits at requested delays match direct simulation", checks)
        }
        _ => skip("AC-4", "no floquet delays configured"),
    });

    // AC-5
    table.criteria.push(if model.name == "qrt-doublewell" {
        let mut checks = Vec::new();
        let eq = find_equilibria(model, [-2.0, 2.0], 4000).map_err(|e| CliError::numerical("verify", e))?;
        let h = |x: f64| model.hamiltonian(x, x).unwrap_or(f64::NAN);
        for (x, level) in [(0.0, 0.0), (-1.0, 0.0), (-0.5, 1.0 / 16.0)] {
            let found = eq.iter().copied().min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()));
            match found {
                Some(e) if (e - x).abs() < 1e-9 => {
                    checks.push(below(format!("H at equilibrium {e}"), (h(e) - level).abs(), EQUILIBRIUM_H_TOL, format!("H = {}", h(e))))
                }
                _ => checks.push(flag(format!("equilibrium {x}"), false, format!("found {eq:?}"))),
            }
        }
        let limits: Vec<(f64, f64)> = data
            .summaries
            .iter()
            .filter(|s| s.m == 0)
            .flat_map(|s| [&s.lower, &s.upper])
            .filter_map(|b| match b {
                Boundary::Homoclinic {
                    limit_amplitude,
                    max_period,
                    ..
                } => Some((*limit_amplitude, *max_period)),
                _ => None,
            })
            .collect();
        for (name, target) in [("inner", -0.5), ("outer", (3f64.sqrt() - 1.0) / 2.0)] {
            let best = limits
                .iter()
                .copied()
                .min_by(|a, b| (a.0 - target).abs().total_cmp(&(b.0 - target).abs()));
            match best {
                Some((a, p)) => {
                    checks.push(below(format!("{name} homoclinic amplitude"), (a - target).abs(), HOMOCLINIC_TOL, format!("limit {a}, expected {target}")));
                    checks.push(flag(format!("{name} homoclinic period"), p > HOMOCLINIC_MIN_PERIOD, format!("largest period {p}")));
                }
                None => checks.push(flag(format!("{name} homoclinic end"), false, "no branch ends at a homoclinic orbit")),
            }
        }
        criterion("AC-5", "double well equilibria, saddle level and homoclinic limits", checks)
    } else {
        skip("AC-5", "double well model only")
    });

    // AC-6
    table.criteria.push(match &data.curve_rows {
        Some(rows) => {
            let mut grouped: BTreeMap<(&str, usize), (f64, Vec<[f64; 2]>)> = BTreeMap::new();
            for r in rows {
                grouped.entry((&r.branch, r.curve_id)).or_insert((r.amplitude, Vec::new())).1.push([r.u, r.v]);
            }
            let mut by_branch: BTreeMap<&str, Vec<JordanCurve>> = BTreeMap::new();
            let mut checks = Vec::new();
            for ((b, id), (a, pts)) in grouped {
                match JordanCurve::new(id, a, pts) {
                    Ok(c) => by_branch.entry(b).or_default().push(c),
                    Err(e) => checks.push(flag(format!("{b} curve {id}"), false, e.to_string())),
                }
            }
            let results: Vec<(String, Vec<Check>)> = by_branch
                .par_iter()
                .map(|(b, curves)| {
                    let rep = nesting_check(curves);
                    let mut out = vec![
                        flag(format!("{b} curve count"), curves.len() == cfg.config.chart.curves, format!("{} curves", curves.len())),
                        flag(
                            format!("{b} nested"),
                            rep.nested(),
                            format!("{} crossings, {} tangencies, margin {:e}", rep.crossings, rep.tangencies, rep.margin),
                        ),
                    ];
                    match injected_curve(curves) {
                        Ok(bad) => {
                            let mut all = curves.clone();
                            all.push(bad);
                            let r2 = nesting_check(&all);
                            out.push(flag(format!("{b} injected curve detected"), r2.crossings > 0, format!("{} crossings", r2.crossings)));
                        }
                        Err(e) => out.push(flag(format!("{b} injected curve"), false, e.to_string())),
                    }
                    (b.to_string(), out)
                })
                .collect();
            for (_, c) in results {
                checks.extend(c);
            }
            criterion("AC-6", "projected curves are pairwise nested", checks)
        }
        None => skip("AC-6", "chart stage not run"),
    });

    // AC-7
    table.criteria.push(if copy_rows.is_empty() {
        skip("AC-7", "no rescaled copies configured")
    } else {
        let base: BTreeMap<(&str, usize), &BranchRow> =
            base_rows.iter().map(|&i| ((data.rows[i].branch.as_str(), data.rows[i].index), &data.rows[i])).collect();
        let (dpr, at) = worst(copy_rows.iter().map(|&i| {
            let r = &data.rows[i];
            match base.get(&(r.branch.as_str(), r.index)) {
                Some(b) => {
                    let pr = (b.p * b.r).abs();
                    (((r.p * r.r).abs() - pr).abs() / pr.max(1.0), label(r))
                }
                None => (f64::NAN, format!("{} has no slow row", label(r))),
            }
        }));
        let mut checks = vec![
            residual_check(&copy_rows, "rescaled residual"),
            below("|p r| preserved", dpr, PRODUCT_TOL, format!("worst at {at}")),
        ];
        if let Some(ch) = &data.charts {
            for c in &ch.charts {
                for r in &c.rescaled {
                    checks.push(flag(
                        format!("{} m={} projection", c.branch, r.m),
                        r.identical,
                        format!("Hausdorff distance {:e}", r.hausdorff),
                    ));
                }
            }
        }
        criterion("AC-7", "rescaled copies solve the equation at (1 + m p) r", checks)
    });

    // AC-8
    let mut checks = Vec::new();
    if let Some(f) = &data.floquet {
        for c in &f.conservation {
            checks.push(below(
                format!("{} bilinear form ({})", c.branch, if c.forced { "forced" } else { "free" }),
                c.relative_error,
                CONSERVATION_TOL,
                format!("orbit {}", c.index),
            ));
        }
    }
    if let (Some(ch), Some(rows)) = (&data.charts, &data.chart_rows) {
        for c in &ch.charts {
            let (d, at) = worst(c.drift.iter().map(|d| (d.max_alpha_drift, format!("start {:?}", d.start))));
            checks.push(below(format!("{} alpha drift", c.branch), d, DRIFT_TOL, at));
            let signs: Vec<f64> = rows.iter().filter(|r| r.branch == c.branch).map(|r| r.det_dg.signum()).collect();
            let definite = !signs.is_empty() && signs.iter().all(|s| *s == signs[0] && *s != 0.0);
            checks.push(flag(format!("{} detDG sign-definite", c.branch), definite, format!("{} nodes", signs.len())));
            checks.push(flag(
                format!("{} predator-prey sign", c.branch),
                c.predator_prey_passed && c.predator_prey_negative_fraction == 1.0,
                format!("{} of {} interior nodes", c.predator_prey_negative_fraction, c.interior_nodes),
            ));
        }
    }
    table.criteria.push(criterion("AC-8", "conservation laws and chart structure", checks));

    // AC-9
    let records: Vec<(String, &cyclicity_core::orbit::OrbitRecord)> =
        data.store.iter().flat_map(|(b, v)| v.iter().map(move |r| (b.clone(), r))).collect();
    let failures: Vec<String> = records
        .par_iter()
        .filter_map(|(b, rec)| {
            let res = PeriodicOrbit::from_record(model, rec).and_then(|o| check_oscillation(model, &o));
            match res {
                Ok(rep) if rep.passed() => None,
                Ok(rep) => Some(format!("{b} a={}: {rep:?}", rec.a)),
                Err(e) => Some(format!("{b} a={}: {e}", rec.a)),
            }
        })
        .collect();
    table.criteria.push(criterion(
        "AC-9",
        "oscillation structure of every accepted orbit",
        vec![
            flag(
                "simple oscillation, period interval, parity, zero distances",
                failures.is_empty() && !records.is_empty(),
                format!("{} of {} orbits fail{}", failures.len(), records.len(), failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()),
            ),
            residual_check(&base_rows, "residual"),
        ],
    ));

    table.criteria.push(skip("AC-10", "figure rendering is not part of this toolkit"));

    // Checksums against the last manifest, if one exists.
    let manifest_path = cfg.output.join(MANIFEST_JSON);
    if manifest_path.exists() {
        let manifest: RunManifest = read_json(&manifest_path)?;
        let mut checks = Vec::new();
        for a in &manifest.artifacts {
            let now = sha256_file(&cfg.output.join(&a.path)).unwrap_or_default();
            checks.push(flag(format!("{} checksum", a.path), now == a.sha256, if now == a.sha256 { "" } else { "modified since the run" }));
        }
        checks.push(flag("config checksum", manifest.config_sha256 == cfg.hash, "config differs from the one the run used"));
        table.criteria.push(criterion("integrity", "artifacts unchanged since the manifest was written", checks));
    }
    Ok(table)
}
