use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::EvalError;
use crate::geom::PointSet;
use crate::metrics::{position_error, shape_error};

/// Side of the square canvas in SVG user units.
const CANVAS: f64 = 500.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub images: Vec<PathBuf>,
    pub csv: PathBuf,
}

fn to_canvas(x: f64, y: f64) -> (f64, f64) {
    (x * CANVAS, (1.0 - y) * CANVAS)
}

fn svg(step: usize, truth: &PointSet, pred: &PointSet) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {CANVAS} {CANVAS}" width="{CANVAS}" height="{CANVAS}">"#
    );
    let _ = writeln!(s, "<title>step {step}</title>");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{CANVAS}" height="{CANVAS}" fill="white" stroke="black"/>"#);
    let poly: Vec<String> = truth
        .iter()
        .map(|p| {
            let (x, y) = to_canvas(p.x, p.y);
            format!("{x},{y}")
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polygon class="truth" points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="#1f77b4"/>"##,
        poly.join(" ")
    );
    for (class, color, set) in [("truth", "#1f77b4", truth), ("pred", "#d62728", pred)] {
        for p in set.iter() {
            let (x, y) = to_canvas(p.x, p.y);
            let _ = writeln!(s, r#"<circle class="{class}" cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `step_NNNN.svg` overlays (ground truth in blue as points and
/// polygon, predictions in red) and `errors.csv` with per-step position and
/// shape error. `truth[i]` is the ground truth for `predictions[i]`;
/// coordinates are in the unit square.
pub fn export_rollout(truth: &[PointSet], predictions: &[PointSet], dir: &Path) -> Result<ExportSummary, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    if truth.len() < predictions.len() {
        return Err(EvalError::TruthTooShort { predictions: predictions.len(), truth: truth.len() });
    }
    fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(predictions.len());
    let mut csv = String::from("step,position_error,shape_error\n");
    for (i, (t, p)) in truth.iter().zip(predictions).enumerate() {
        let step = i + 1;
        let path = dir.join(format!("step_{step:04}.svg"));
        fs::write(&path, svg(step, t, p))?;
        images.push(path);
        let _ = writeln!(csv, "{step},{},{}", position_error(t, p)?, shape_error(t, p)?);
    }
    let csv_path = dir.join("errors.csv");
    fs::write(&csv_path, csv)?;
    Ok(ExportSummary { images, csv: csv_path })
}
