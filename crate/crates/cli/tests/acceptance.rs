//! Acceptance table over the three example configurations.
//!
//! Runs each pipeline into a temporary directory, adds the direct checks that
//! need no run directory, and prints one line per criterion. Exits nonzero
//! if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use cyclicity_cli::artifacts::{read_json, BranchSummary, BRANCHES_JSON};
use cyclicity_cli::verify::Status;
use cyclicity_cli::{run_pipeline, LoadedConfig, RunManifest};
use cyclicity_core::branch::Boundary;
use cyclicity_core::model::ModelDefinition;
use cyclicity_core::orbit::{solve_orbit, OrbitGuess, OrbitTarget, SolverOptions};

const CRITERIA: [&str; 9] = ["AC-1", "AC-2", "AC-3", "AC-4", "AC-5", "AC-6", "AC-7", "AC-8", "AC-9"];

#[derive(Default)]
struct Tally {
    passed: Vec<String>,
    failed: Vec<String>,
}

impl Tally {
    fn record(&mut self, ok: bool, what: String) {
        if ok {
            self.passed.push(what);
        } else {
            self.failed.push(what);
        }
    }
}

fn run(example: &str, dir: &Path) -> Result<(RunManifest, f64), String> {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(example);
    let text = std::fs::read_to_string(&src).map_err(|e| e.to_string())?;
    let text: String = text
        .lines()
        .map(|l| if l.starts_with("output") { "output = \"run\"" } else { l })
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = LoadedConfig::parse(&text, dir).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let manifest = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    Ok((manifest, start.elapsed().as_secs_f64()))
}

/// Circle orbits solved directly: `p = 4` and `r = pi / (2 Omega(a^2))`.
fn enharmonic_samples(omega: &str, amps: &[f64], tol: f64) -> Result<f64, String> {
    let model = ModelDefinition::enharmonic(omega, Default::default()).map_err(|e| e.to_string())?;
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    for &a in amps {
        let om = model.eval(0.0, -a).map_err(|e| e.to_string())? / a;
        let r = FRAC_PI_2 / om;
        // Start away from the circle so Newton has work to do.
        let mut guess = OrbitGuess::hopf(0.0, 0.9 * FRAC_PI_2, 1.1 * r, a, 33);
        let n = guess.profile.len();
        for (j, x) in guess.profile.iter_mut().enumerate() {
            *x += 0.05 * a * (4.0 * PI * j as f64 / n as f64).sin();
        }
        let o = solve_orbit(&model, OrbitTarget::Amplitude(a), &guess, &opts).map_err(|e| format!("a = {a}: {e}"))?;
        worst = worst.max((o.period - 4.0).abs()).max((o.delay - r).abs());
    }
    if worst < tol {
        Ok(worst)
    } else {
        Err(format!("worst deviation {worst:e} exceeds {tol:e}"))
    }
}

fn main() -> ExitCode {
    let mut tallies: BTreeMap<&str, Tally> = CRITERIA.iter().map(|c| (*c, Tally::default())).collect();
    let tmp = tempfile::tempdir().expect("temporary directory");

    for (name, file) in [("enharmonic", "enharmonic.toml"), ("hutchinson", "hutchinson.toml"), ("qrt", "qrt.toml")] {
        let dir = tmp.path().join(name);
        std::fs::create_dir_all(&dir).expect("run directory");
        let (manifest, secs) = match run(file, &dir) {
            Ok(x) => x,
            Err(e) => {
                for t in tallies.values_mut() {
                    t.record(false, format!("{name}: {e}"));
                }
                continue;
            }
        };
        eprintln!("{name}: pipeline finished in {secs:.1} s");
        if let Some(stage) = manifest.failed_stage() {
            for t in tallies.values_mut() {
                t.record(false, format!("{name}: stage {} failed: {:?}", stage.name, stage.error));
            }
            continue;
        }
        let table = manifest.verification.clone().unwrap_or_default();
        for id in CRITERIA {
            let Some(c) = table.get(id) else { continue };
            let t = tallies.get_mut(id).unwrap();
            match c.status {
                Status::Pass => t.record(true, name.into()),
                Status::Skip => {}
                Status::Fail => {
                    let bad: Vec<String> = c
                        .checks
                        .iter()
                        .filter(|k| !k.passed)
                        .map(|k| format!("{} = {:e} (tol {:e})", k.name, k.value, k.tolerance))
                        .collect();
                    t.record(false, format!("{name}: {}", bad.join("; ")));
                }
            }
        }
        let out = dir.join("run");
        match name {
            "enharmonic" => {
                tallies
                    .get_mut("AC-1")
                    .unwrap()
                    .record(secs < 30.0, format!("enharmonic pipeline in {secs:.1} s (limit 30 s)"));
            }
            "hutchinson" => {
                let ok = read_json::<Vec<BranchSummary>>(&out.join(BRANCHES_JSON))
                    .ok()
                    .and_then(|list| list.into_iter().find(|b| b.m == 0))
                    .map(|b| match b.lower {
                        Boundary::Hopf {
                            extrapolated_delay,
                            extrapolated_period,
                            ..
                        } => (extrapolated_delay - FRAC_PI_2).abs() < 1e-2 && (extrapolated_period - 4.0).abs() < 1e-2,
                        _ => false,
                    })
                    .unwrap_or(false);
                tallies
                    .get_mut("AC-3")
                    .unwrap()
                    .record(ok, "hutchinson lower end extrapolates to r = pi/2, p = 4".into());
            }
            "qrt" => {
                let homoclinic = manifest
                    .boundaries
                    .values()
                    .flatten()
                    .filter(|s| s.starts_with("homoclinic"))
                    .count();
                tallies
                    .get_mut("AC-5")
                    .unwrap()
                    .record(homoclinic >= 3, format!("{homoclinic} homoclinic ends in the manifest"));
            }
            _ => {}
        }
    }

    let constant = enharmonic_samples("1", &[0.5, 1.0, 2.0], 1e-8);
    tallies
        .get_mut("AC-1")
        .unwrap()
        .record(constant.is_ok(), format!("Omega = 1: {constant:?}"));
    let amps: Vec<f64> = (0..20).map(|k| 0.5 + 2.5 * k as f64 / 19.0).collect();
    let growing = enharmonic_samples("1 + s", &amps, 1e-6);
    tallies
        .get_mut("AC-1")
        .unwrap()
        .record(growing.is_ok(), format!("Omega = 1 + s, 20 amplitudes: {growing:?}"));

    let mut all = true;
    for (id, t) in &tallies {
        let ok = t.failed.is_empty() && !t.passed.is_empty();
        all &= ok;
        let status = if ok { "PASS" } else { "FAIL" };
        println!("{id:<5} {status}  {}", t.passed.join(", "));
        for f in &t.failed {
            println!("        {f}");
        }
        if t.passed.is_empty() && t.failed.is_empty() {
            println!("        nothing exercised this criterion");
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
