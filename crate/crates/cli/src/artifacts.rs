//! File formats of a run directory, and the helpers that read and write them.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use cyclicity_core::branch::{Boundary, HopfData};
use cyclicity_core::orbit::OrbitRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SeedSpec;
use crate::error::CliError;

pub const BRANCH_CSV: &str = "branch.csv";
pub const BRANCHES_JSON: &str = "branches.json";
pub const ORBITS_JSON: &str = "orbits.json";
pub const FLOQUET_JSON: &str = "floquet.json";
pub const CHART_CSV: &str = "chart.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const CHART_JSON: &str = "chart.json";
pub const MANIFEST_JSON: &str = "manifest.json";

/// 17 significant digits, so values survive a text round trip exactly.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Rows are already formatted; `header` names the columns.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Usage(format!("csv {}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::Usage(format!("missing artifact {}: {e}", path.display())),
        _ => CliError::Usage(format!("{}: {e}", path.display())),
    })?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn missing(path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("missing artifact {}: {e}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| missing(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub const BRANCH_HEADER: [&str; 11] = ["branch", "m", "a", "r", "p", "q", "depth", "residual", "mu_c", "boundary", "index"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub branch: String,
    pub m: i64,
    pub a: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub depth: f64,
    pub residual: f64,
    pub mu_c: Option<f64>,
    /// `interior`, `approach`, or `lower:<kind>` / `upper:<kind>` on the end rows.
    pub boundary: String,
    /// Position in the branch's entry of `orbits.json`.
    pub index: usize,
}

impl BranchRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.branch.clone(),
            self.m.to_string(),
            num(self.a),
            num(self.r),
            num(self.p),
            num(self.q),
            num(self.depth),
            num(self.residual),
            opt_num(self.mu_c),
            self.boundary.clone(),
            self.index.to_string(),
        ]
    }
}

/// One traced branch or rescaled copy, with its end classifications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchSummary {
    pub name: String,
    pub m: i64,
    pub seed: SeedSpec,
    pub window: [f64; 2],
    /// Hopf root the branch was started from, if any.
    pub seed_hopf: Option<HopfData>,
    pub lower: Boundary,
    pub upper: Boundary,
    pub orbits: usize,
    pub lower_approach: usize,
    pub upper_approach: usize,
    pub amplitude_domain: [f64; 2],
}

/// Orbit records of the slow branches, keyed by branch name, ordered as the
/// `m = 0` rows of `branch.csv`.
pub type OrbitStore = BTreeMap<String, Vec<OrbitRecord>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FloquetEntry {
    pub branch: String,
    pub index: usize,
    pub a: f64,
    pub r: f64,
    pub p: f64,
    pub multipliers: Vec<[f64; 2]>,
    pub trivial_error: f64,
    pub trivial_alignment: f64,
    pub mu_c: f64,
    pub hyperbolic: bool,
    pub fallback: bool,
    /// Largest modulus among all but the multiplier closest to 1.
    pub max_nontrivial: f64,
    pub basis: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationOracle {
    pub t_end: f64,
    pub amplitude: f64,
    pub period: f64,
    pub amplitude_rel_error: f64,
    pub period_rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayProbe {
    pub branch: String,
    pub delay: f64,
    pub orbit: OrbitRecord,
    pub floquet: FloquetEntry,
    /// Present when the orbit is stable.
    pub simulation: Option<SimulationOracle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConservationEntry {
    pub branch: String,
    pub index: usize,
    pub forced: bool,
    pub start: f64,
    pub end: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FloquetArtifact {
    pub branch_orbits: Vec<FloquetEntry>,
    pub delays: Vec<DelayProbe>,
    pub conservation: Vec<ConservationEntry>,
    /// Branch names with orbits skipped for exceeding the period limit.
    pub skipped: BTreeMap<String, usize>,
}

pub const CHART_HEADER: [&str; 8] = ["branch", "t", "a", "u", "v", "detDG", "g", "alpha_check"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartRow {
    pub branch: String,
    pub t: f64,
    pub a: f64,
    pub u: f64,
    pub v: f64,
    #[serde(rename = "detDG")]
    pub det_dg: f64,
    pub g: f64,
    pub alpha_check: f64,
}

pub const CURVES_HEADER: [&str; 6] = ["branch", "curve_id", "amplitude", "vertex", "u", "v"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub branch: String,
    pub curve_id: usize,
    pub amplitude: f64,
    pub vertex: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftSummary {
    pub start: [f64; 2],
    pub span: f64,
    pub max_alpha_drift: f64,
    pub max_hamiltonian_drift: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NestingSummary {
    pub curves: usize,
    pub crossings: usize,
    pub tangencies: usize,
    pub identical: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescaledCurve {
    pub m: i64,
    pub amplitude: f64,
    pub hausdorff: f64,
    pub identical: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartSummary {
    pub branch: String,
    pub orbits: usize,
    pub amplitude_range: [f64; 2],
    pub det_sign: f64,
    pub min_abs_det: f64,
    pub interior_nodes: usize,
    pub predator_prey_negative_fraction: f64,
    pub predator_prey_passed: bool,
    pub max_abs_alpha_check: f64,
    /// One start on a chart orbit, one between two chart orbits.
    pub drift: Vec<DriftSummary>,
    pub nesting: NestingSummary,
    /// Crossings found after adding a curve that does not belong to the family.
    pub injected_crossings: usize,
    pub rescaled: Vec<RescaledCurve>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChartArtifact {
    pub charts: Vec<ChartSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for x in [0.1, std::f64::consts::PI, -1.0e-300, 6.02214076e23, 1.0 / 3.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert!(num(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn branch_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(BRANCH_CSV);
        let row = BranchRow {
            branch: "slow".into(),
            m: -1,
            a: 0.1,
            r: -2.5,
            p: 4.0 / 3.0,
            q: 2.0,
            depth: -0.1,
            residual: 1e-12,
            mu_c: None,
            boundary: "lower:hopf".into(),
            index: 3,
        };
        let mut with_mu = row.clone();
        with_mu.mu_c = Some(0.25);
        write_csv(&path, &BRANCH_HEADER, &[row.fields(), with_mu.fields()]).unwrap();
        let back: Vec<BranchRow> = read_csv(&path).unwrap();
        assert_eq!(back, vec![row, with_mu]);
    }

    #[test]
    fn missing_file_is_reported_as_such() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_csv::<BranchRow>(&dir.path().join("nope.csv")).unwrap_err();
        assert!(err.to_string().contains("missing artifact"));
    }
}
