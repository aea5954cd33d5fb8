//! Manifests, fold splits, feature caching, cross-validated runs, sweeps and
//! reports.

mod config;
mod dataset;
mod manifest;
mod report;
mod runner;
mod synth;

pub use config::{table_grid, FeatureConfig, PipelineSpec, RunConfig, SweepGrid};
pub use dataset::{cache_key, extract_features, ExtractionStats, FeatureDataset};
pub use manifest::{load_manifest, make_folds, parse_manifest, DatasetManifest, FoldSplit, ManifestEntry, N_FOLDS};
pub use report::{
    accuracy_curve_points, accuracy_curves_svg, comparison_rows, comparison_text, emit_accuracy_curves,
    is_full_scale, read_accuracy_curves, read_comparison_csv, reference_for, report_comparison, ComparisonRow,
    CurvePoint, Reference, REFERENCES, REFERENCE_TOLERANCE_POINTS,
};
pub use runner::{fit_fold_pca, read_sweep_csv, run_pipeline, sweep, write_sweep_csv, FoldResult, RunResult, SweepRow};
pub use synth::{synthesize_dataset, ClassGenerator, SyntheticDataset, SyntheticSpec};
