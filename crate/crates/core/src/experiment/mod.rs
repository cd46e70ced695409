mod commands;
mod config;
mod pipeline;
mod store;


pub use commands::{
    base_model, cmd_ablate, cmd_assemble, cmd_coverage, cmd_export_samples, cmd_gen_data, cmd_run, cmd_train_base,
    load_bench_data, load_benchmark, read_coverage, run_seed, summarize, teacher_model, AblationRow,
    BenchmarkSummary, ExportedSample, ReportFile, Sweep,
};
pub use config::{apply_override, AblateConfig, CoverageConfig, DataConfig, ExperimentConfig, Schedules};
pub use pipeline::{
    assemble_from, coverage_with_taxonomy, evaluate_model, finetune, model_arch, render_bench_data,
    render_coverage_data, run_method, seed_models, train_base, BenchData, SeedModels,
};
pub use store::{data_hash, decode_samples, encode_samples, read_manifest, DataStore, Manifest, ManifestEntry};
