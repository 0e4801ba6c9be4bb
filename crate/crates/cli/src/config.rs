//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use cyclicity_core::branch::StepPolicy;
use cyclicity_core::chart::ChartOptions;
use cyclicity_core::model::{ModelDefinition, ModelSpec, DEFAULT_CERT_CELLS};
use cyclicity_core::orbit::SolverOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub solver: SolverBlock,
    pub continuation: ContinuationBlock,
    #[serde(default)]
    pub floquet: FloquetBlock,
    #[serde(default)]
    pub chart: ChartBlock,
    /// Relative paths are taken from the config file's directory.
    pub output: PathBuf,
    /// Subset of `branch`, `floquet`, `chart`; all when absent.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Branch,
    Floquet,
    Chart,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Branch => "branch",
            Stage::Floquet => "floquet",
            Stage::Chart => "chart",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub n_modes: usize,
    pub newton_tol: f64,
    pub p_max: f64,
    pub max_modes: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            n_modes: d.n_modes,
            newton_tol: d.newton_tol,
            p_max: d.p_max,
            max_modes: d.max_modes,
        }
    }
}

impl SolverBlock {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            n_modes: self.n_modes,
            newton_tol: self.newton_tol,
            p_max: self.p_max,
            max_modes: self.max_modes,
            ..SolverOptions::default()
        }
    }
}

/// How a branch is started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedSpec {
    /// Small oscillation at the first Hopf root of this equilibrium.
    Hopf { equilibrium: f64 },
    /// Level-set seed from the model's Hamiltonian at this amplitude.
    Hamiltonian { amplitude: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub name: String,
    pub seed: SeedSpec,
    pub window: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationBlock {
    pub branches: Vec<BranchSpec>,
    /// Rescaled copies `r -> (1 + m p) r` to export next to each branch.
    #[serde(default)]
    pub m: Vec<i64>,
    #[serde(default)]
    pub step: StepBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepBlock {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub grow: f64,
    pub max_orbits: usize,
}

impl Default for StepBlock {
    fn default() -> Self {
        let d = StepPolicy::default();
        Self {
            initial: d.initial,
            min: d.min,
            max: d.max,
            grow: d.grow,
            max_orbits: d.max_orbits,
        }
    }
}

impl StepBlock {
    pub fn policy(&self, window: [f64; 2]) -> StepPolicy {
        StepPolicy {
            initial: self.initial,
            min: self.min,
            max: self.max,
            grow: self.grow,
            window,
            max_orbits: self.max_orbits,
            ..StepPolicy::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloquetBlock {
    pub basis: usize,
    /// `mu_c` is filled in for branch orbits up to this period.
    pub max_period: f64,
    /// Every k-th branch orbit gets a Floquet report (1 = all).
    pub stride: usize,
    /// Extra orbits solved at these delays; each also gets the simulation
    /// oracle when it is stable.
    pub delays: Vec<f64>,
    pub steps_per_delay: usize,
    /// Simulation oracle: periods integrated and trailing periods measured.
    pub simulate_periods: [usize; 2],
}

impl Default for FloquetBlock {
    fn default() -> Self {
        Self {
            basis: 64,
            max_period: 12.0,
            stride: 1,
            delays: Vec::new(),
            steps_per_delay: 256,
            simulate_periods: [50, 5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartBlock {
    pub t_per_period: usize,
    pub max_period: Option<f64>,
    pub max_amplitude_gap: Option<f64>,
    pub curves: usize,
    pub curve_vertices: usize,
    /// Drift test length, in planar periods.
    pub drift_periods: f64,
}

impl Default for ChartBlock {
    fn default() -> Self {
        Self {
            t_per_period: 64,
            max_period: None,
            max_amplitude_gap: None,
            curves: 20,
            curve_vertices: 512,
            drift_periods: 5.0,
        }
    }
}

impl ChartBlock {
    pub fn options(&self) -> ChartOptions {
        ChartOptions {
            t_per_period: self.t_per_period,
            max_amplitude_gap: self.max_amplitude_gap,
            max_period: self.max_period,
            ..ChartOptions::default()
        }
    }
}

/// A parsed configuration together with its source bytes and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    pub output: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        config.validate()?;
        let output = if config.output.is_absolute() {
            config.output.clone()
        } else {
            base.join(&config.output)
        };
        Ok(Self {
            hash: hex::encode(Sha256::digest(text.as_bytes())),
            config,
            output,
        })
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut s = self
            .config
            .stages
            .clone()
            .unwrap_or_else(|| vec![Stage::Branch, Stage::Floquet, Stage::Chart]);
        s.sort();
        s.dedup();
        s
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        let s = &self.solver;
        if !(s.newton_tol > 0.0) {
            return bad(format!("solver.newton_tol must be positive, got {}", s.newton_tol));
        }
        if !(s.p_max > 0.0) {
            return bad(format!("solver.p_max must be positive, got {}", s.p_max));
        }
        if s.n_modes < 8 {
            return bad(format!("solver.n_modes must be at least 8, got {}", s.n_modes));
        }
        let st = &self.continuation.step;
        if !(st.min > 0.0 && st.initial >= st.min && st.max >= st.initial && st.grow >= 1.0) {
            return bad("continuation.step needs 0 < min <= initial <= max and grow >= 1".into());
        }
        if self.continuation.branches.is_empty() {
            return bad("continuation.branches is empty".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.continuation.branches {
            let [lo, hi] = b.window;
            if !(lo < hi) {
                return bad(format!("branch `{}`: amplitude window [{lo}, {hi}] is empty", b.name));
            }
            if !names.insert(b.name.as_str()) {
                return bad(format!("branch name `{}` used twice", b.name));
            }
            if b.name.is_empty() || b.name.contains([',', '"', '\n']) {
                return bad(format!("branch name {:?} is not a plain identifier", b.name));
            }
        }
        if self.continuation.m.contains(&0) {
            return bad("continuation.m lists 0; the slow branch is always exported".into());
        }
        let f = &self.floquet;
        if f.basis < 16 || f.stride == 0 || f.steps_per_delay == 0 || !(f.max_period > 0.0) {
            return bad("floquet needs basis >= 16, stride >= 1, steps_per_delay >= 1, max_period > 0".into());
        }
        if f.simulate_periods[1] == 0 || f.simulate_periods[1] >= f.simulate_periods[0] {
            return bad("floquet.simulate_periods must be [total, trailing] with 0 < trailing < total".into());
        }
        let c = &self.chart;
        if c.curves < 2 || c.curve_vertices < 16 || c.t_per_period < 64 || !(c.drift_periods > 0.0) {
            return bad("chart needs curves >= 2, curve_vertices >= 16, t_per_period >= 64, drift_periods > 0".into());
        }
        if c.max_amplitude_gap.is_some_and(|g| !(g > 0.0)) || c.max_period.is_some_and(|p| !(p > 0.0)) {
            return bad("chart.max_amplitude_gap and chart.max_period must be positive".into());
        }
        Ok(())
    }

    /// Builds and certifies the model.
    pub fn build_model(&self) -> Result<ModelDefinition, CliError> {
        build_certified(&self.model)
    }
}

pub fn build_certified(spec: &ModelSpec) -> Result<ModelDefinition, CliError> {
    let model = spec.build().map_err(|e| CliError::Usage(format!("model: {e}")))?;
    model
        .require_certified(DEFAULT_CERT_CELLS)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(model)
}

/// A model block on its own, or a full run configuration.
pub fn read_model_spec(path: &Path) -> Result<ModelSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value = match table.remove("model") {
        Some(v) => v,
        None => toml::Value::Table(table),
    };
    value
        .try_into()
        .map_err(|e| CliError::Usage(format!("{}: model block: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
output = "out"
[model]
kind = "enharmonic"
omega = "1 + s"
[[continuation.branches]]
name = "slow"
seed = { kind = "hopf", equilibrium = 0.0 }
window = [0.0, 3.0]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = LoadedConfig::parse(BASE, Path::new("/tmp")).unwrap();
        assert_eq!(c.output, Path::new("/tmp/out"));
        assert_eq!(c.stages(), vec![Stage::Branch, Stage::Floquet, Stage::Chart]);
        assert_eq!(c.config.solver.n_modes, 128);
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn empty_window_is_rejected() {
        let text = BASE.replace("[0.0, 3.0]", "[-1.0, -1.0]");
        let err = LoadedConfig::parse(&text, Path::new(".")).unwrap_err();
        assert!(matches!(&err, CliError::Usage(m) if m.contains("window")), "{err}");
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        let text = format!("{BASE}\n[solver]\nnewton_tol = 0.0\n");
        assert!(matches!(LoadedConfig::parse(&text, Path::new(".")), Err(CliError::Usage(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{BASE}\n[chart]\nbogus = 1\n");
        assert!(LoadedConfig::parse(&text, Path::new(".")).is_err());
    }

    #[test]
    fn uncertified_model_is_a_usage_error() {
        let spec = ModelSpec {
            kind: "expr".into(),
            f: Some("-u*v".into()),
            omega: None,
            params: Default::default(),
            domain: Some([[-1.0, 1.0], [-1.0, 1.0]]),
        };
        assert!(matches!(build_certified(&spec), Err(CliError::Usage(_))));
    }
}
