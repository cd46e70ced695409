//! Synthetic forgery families, coverage analysis and taxonomy, benchmark
//! assembly and the evaluation metrics.

mod benchmark;
mod coverage;
mod family;
mod metrics;
mod render;


pub use benchmark::{assemble_benchmark, Benchmark, BenchmarkSpec};
pub use coverage::{binary_accuracy, build_taxonomy, coverage_matrix, CoverageMatrix, Taxonomy};
pub use family::{
    default_roster, generate_family_dataset, generate_family_splits, generate_real_dataset, generate_real_splits,
    sample_seed, split_seeds, ForgeryFamilySpec, Splits,
};
pub use metrics::{
    aggregate_runs, auc_pairwise, auc_trapezoid, evaluate, fake_score, metrics_from_scores, tpr_at_fpr,
    MetricsReport, RunMetrics, Stat, CSV_HEADER, DEFAULT_FPR,
};
pub use render::{apply_artifact, render_real, ArtifactKind, FaceLayout, ImageShape};
