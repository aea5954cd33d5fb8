use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PipelineSpec;
use super::runner::RunResult;
use crate::error::{Error, Result};

/// Largest accuracy gap, in percentage points, tolerated against a published
/// reference before a full-scale run is flagged.
pub const REFERENCE_TOLERANCE_POINTS: f64 = 3.0;

/// Published ESC-50 accuracies (percent) with parameter counts where reported.
pub struct Reference {
    pub pooling: &'static str,
    pub hyper: &'static str,
    pub accuracy: f64,
    pub params: Option<usize>,
}

pub const REFERENCES: &[Reference] = &[
    Reference { pooling: "SSRP-B", hyper: "W=2", accuracy: 71.15, params: None },
    Reference { pooling: "SSRP-B", hyper: "W=4", accuracy: 72.85, params: Some(527_000) },
    Reference { pooling: "SSRP-B", hyper: "W=6", accuracy: 65.05, params: None },
    Reference { pooling: "SSRP-B", hyper: "W=8", accuracy: 66.09, params: None },
    Reference { pooling: "SSRP-T", hyper: "K=4", accuracy: 75.20, params: None },
    Reference { pooling: "SSRP-T", hyper: "K=8", accuracy: 77.60, params: None },
    Reference { pooling: "SSRP-T", hyper: "K=10", accuracy: 80.60, params: None },
    Reference { pooling: "SSRP-T", hyper: "K=12", accuracy: 80.69, params: Some(527_000) },
    Reference { pooling: "SSRP-T", hyper: "K=14", accuracy: 78.65, params: None },
    Reference { pooling: "SSRP-T", hyper: "K=16", accuracy: 70.59, params: None },
    Reference { pooling: "Baseline", hyper: "-", accuracy: 66.75, params: Some(245_000) },
    Reference { pooling: "PCA", hyper: "variance=0.95", accuracy: 37.60, params: None },
];

pub fn reference_for(pipeline: &PipelineSpec) -> Option<&'static Reference> {
    let (p, h) = (pipeline.pooling_label(), pipeline.hyper_label());
    REFERENCES.iter().find(|r| r.pooling == p && r.hyper == h)
}

/// 50 classes of 5 s clips at 431 × 40 with the three-block network.
pub fn is_full_scale(r: &RunResult) -> bool {
    let cnn_full = r.input_shape == (431, 40);
    let pca_full = matches!(r.pipeline, PipelineSpec::PcaCnn { .. }) && r.config.features.pca_frames == 428;
    r.n_classes == 50 && r.conv_layers == 3 && r.folds.len() == 5 && (cnn_full || pca_full)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub fold: u8,
    pub validation_accuracy: f64,
}

/// Rows of `epoch,fold,validation_accuracy`, epochs 1-based.
pub fn accuracy_curve_points(result: &RunResult) -> Vec<CurvePoint> {
    result
        .folds
        .iter()
        .flat_map(|f| {
            f.trajectory.iter().enumerate().map(move |(e, &a)| CurvePoint {
                epoch: e + 1,
                fold: f.fold,
                validation_accuracy: a,
            })
        })
        .collect()
}

pub fn emit_accuracy_curves(result: &RunResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wr = csv::Writer::from_path(path).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
    for p in accuracy_curve_points(result) {
        wr.serialize(p).map_err(|e| Error::Serialization(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_accuracy_curves<R: Read>(r: R) -> Result<Vec<CurvePoint>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<CurvePoint>, _>>()
        .map_err(|e| Error::Schema(format!("accuracy curves: {e}")))
}

/// Line chart of the validation trajectories, one polyline per fold.
pub fn accuracy_curves_svg(result: &RunResult) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const M: f64 = 40.0;
    let epochs = result.folds.iter().map(|f| f.trajectory.len()).max().unwrap_or(0).max(2);
    let x = |e: usize| M + (W - 2.0 * M) * (e as f64 - 1.0) / (epochs as f64 - 1.0);
    let y = |a: f64| H - M - (H - 2.0 * M) * a;
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{M}\" y=\"20\" font-size=\"12\">{} {}: validation accuracy per epoch</text>\n",
        H - M,
        W - M,
        H - M,
        H - M,
        result.model,
        result.hyper
    );
    for (i, f) in result.folds.iter().enumerate() {
        if f.trajectory.is_empty() {
            continue;
        }
        let pts: Vec<String> = f
            .trajectory
            .iter()
            .enumerate()
            .map(|(e, &a)| format!("{:.1},{:.1}", x(e + 1), y(a)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"><title>fold {}</title></polyline>",
            palette[i % palette.len()],
            pts.join(" "),
            f.fold
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub pooling: String,
    pub layers: usize,
    pub hyper: String,
    /// Mean cross-validated accuracy in percent.
    pub accuracy: f64,
    pub params: usize,
}

/// Rows sorted by accuracy, best first; ties keep input order.
pub fn comparison_rows(results: &[RunResult]) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            pooling: r.pipeline.pooling_label().to_string(),
            layers: r.conv_layers,
            hyper: r.hyper.clone(),
            accuracy: 100.0 * r.mean_accuracy,
            params: r.param_count,
        })
        .collect();
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    rows
}

/// Human-readable comparison. Published numbers are shown alongside, and
/// only full-scale runs are checked against them.
pub fn comparison_text(results: &[RunResult]) -> String {
    let rows = comparison_rows(results);
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:>6} {:<14} {:>9} {:>9}", "pooling", "layers", "hyper", "accuracy", "params");
    for r in &rows {
        let _ = writeln!(
            s,
            "{:<10} {:>6} {:<14} {:>8.2}% {:>9}",
            r.pooling, r.layers, r.hyper, r.accuracy, r.params
        );
    }
    let _ = writeln!(s, "\nPublished ESC-50 reference:");
    for r in results {
        let Some(reference) = reference_for(&r.pipeline) else {
            let _ = writeln!(s, "  {} {}: no published figure", r.model, r.hyper);
            continue;
        };
        let ours = 100.0 * r.mean_accuracy;
        let verdict = if !is_full_scale(r) {
            "not comparable (reduced-scale run)".to_string()
        } else if (ours - reference.accuracy).abs() > REFERENCE_TOLERANCE_POINTS {
            format!("DEVIATES by {:+.2} points", ours - reference.accuracy)
        } else {
            format!("within {REFERENCE_TOLERANCE_POINTS} points")
        };
        let _ = writeln!(
            s,
            "  {} {}: published {:.2}%, this run {:.2}%: {verdict}",
            r.pipeline.pooling_label(),
            r.hyper,
            reference.accuracy,
            ours
        );
        if let (Some(p), true) = (reference.params, is_full_scale(r)) {
            let _ = writeln!(s, "    published parameter count ~{p}, counted here {}", r.param_count);
        }
    }
    let _ = writeln!(
        s,
        "\nNotes:\n  The baseline is the same CNN with global average pooling.\n  \
         Counting every conv, batch-norm and dense weight of the full-scale network gives 263,538\n  \
         trainable parameters for all pooling choices; the published 527K and 245K figures are not reproduced."
    );
    s
}

/// Writes `<stem>.txt` and `<stem>.csv`; returns the text.
pub fn report_comparison(results: &[RunResult], stem: impl AsRef<Path>) -> Result<String> {
    if results.is_empty() {
        return Err(Error::InvalidParameter("nothing to report".into()));
    }
    let stem = stem.as_ref();
    let text = comparison_text(results);
    let txt = stem.with_extension("txt");
    std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
    let csv_path = stem.with_extension("csv");
    let mut wr =
        csv::Writer::from_path(&csv_path).map_err(|e| Error::Serialization(format!("{}: {e}", csv_path.display())))?;
    for r in comparison_rows(results) {
        wr.serialize(r).map_err(|e| Error::Serialization(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(text)
}

pub fn read_comparison_csv<R: Read>(r: R) -> Result<Vec<ComparisonRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<ComparisonRow>, _>>()
        .map_err(|e| Error::Schema(format!("comparison table: {e}")))
}
