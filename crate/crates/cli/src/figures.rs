//! Figure specifications for the plotting scripts, built from a run directory.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesStyle {
    pub branch: String,
    pub m: i64,
    /// `solid` for the slow branch, `dashed` for `m = 1`, `dotted` for `m = -1`.
    pub line: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Panel {
    BranchDiagram {
        csv: String,
        x: String,
        y: String,
        series: Vec<SeriesStyle>,
    },
    PhasePortrait {
        csv: String,
        columns: [String; 2],
        amplitude_cap: Option<f64>,
        families: Vec<String>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FigureSpec {
    pub title: String,
    pub panels: Vec<Panel>,
    /// Counts the renderer should log back.
    pub expected_curves: usize,
    pub expected_families: usize,
}

fn line_style(m: i64) -> &'static str {
    match m {
        0 => "solid",
        1 => "dashed",
        -1 => "dotted",
        _ => "dashdot",
    }
}

fn header(path: &Path) -> Result<Vec<String>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("missing artifact {}: {e}", path.display())))?;
    Ok(r.headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn require_columns(path: &Path, columns: &[&str]) -> Result<(), CliError> {
    let have = header(path)?;
    for c in columns {
        if !have.iter().any(|h| h == c) {
            return Err(CliError::Usage(format!("{} has no column `{c}`", path.display())));
        }
    }
    Ok(())
}

/// Reads `branch.csv` and `curves.csv` in `dir` and describes a two-panel
/// figure: the delay map of every branch copy, and the projected curves.
pub fn figure_spec(dir: &Path, title: &str, amplitude_cap: Option<f64>) -> Result<FigureSpec, CliError> {
    let branch_path = dir.join(BRANCH_CSV);
    let curves_path = dir.join(CURVES_CSV);
    require_columns(&branch_path, &["branch", "m", "a", "r"])?;
    require_columns(&curves_path, &["branch", "curve_id", "amplitude", "vertex", "u", "v"])?;
    let rows: Vec<BranchRow> = read_csv(&branch_path)?;
    let curves: Vec<CurveRow> = read_csv(&curves_path)?;
    let kept: BTreeSet<(&str, usize)> = curves
        .iter()
        .filter(|c| amplitude_cap.is_none_or(|cap| c.amplitude < cap))
        .map(|c| (c.branch.as_str(), c.curve_id))
        .collect();
    if kept.is_empty() {
        return Err(CliError::Usage(format!("{} holds no curves below the amplitude cap", curves_path.display())));
    }
    let series: BTreeSet<(&str, i64)> = rows.iter().map(|r| (r.branch.as_str(), r.m)).collect();
    let families: BTreeSet<&str> = kept.iter().map(|(b, _)| *b).collect();
    Ok(FigureSpec {
        title: title.into(),
        panels: vec![
            Panel::PhasePortrait {
                csv: CURVES_CSV.into(),
                columns: ["u".into(), "v".into()],
                amplitude_cap,
                families: families.iter().map(|s| s.to_string()).collect(),
            },
            Panel::BranchDiagram {
                csv: BRANCH_CSV.into(),
                x: "a".into(),
                y: "r".into(),
                series: series
                    .iter()
                    .map(|(b, m)| SeriesStyle {
                        branch: b.to_string(),
                        m: *m,
                        line: line_style(*m).into(),
                    })
                    .collect(),
            },
        ],
        expected_curves: kept.len(),
        expected_families: families.len(),
    })
}
