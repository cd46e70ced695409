use std::sync::Arc;

use super::ExperimentConfig;
use crate::benchkit::{
    assemble_benchmark, build_taxonomy, coverage_matrix, evaluate, generate_family_splits, generate_real_splits,
    Benchmark, CoverageMatrix, MetricsReport, Splits, Taxonomy,
};
use crate::diffnet::{ArchSpec, Classifier};
use crate::error::Result;
use crate::gai::GaiConfig;
use crate::numcore::{derive_seed, SeededRng};
use crate::trainkit::{train, History, Method, MethodSpec};

/// RNG streams of a training seed.
const BASE_STREAM: u64 = 1;
const FINETUNE_STREAM: u64 = 2;
const COVERAGE_STREAM: u64 = 3;

/// Rendered splits the benchmark is assembled from.
pub struct BenchData {
    pub real: Splits,
    pub majority: Vec<Splits>,
    pub minority: Splits,
}

/// Renders, in memory, exactly what `gen-data` would write for the
/// benchmark's families.
pub fn render_bench_data(cfg: &ExperimentConfig) -> Result<BenchData> {
    let (rt, re) = cfg.split_counts("real");
    let real = generate_real_splits(cfg.image, cfg.data.seed, rt, re);
    let render = |id: usize| {
        let f = &cfg.families[id];
        let (tr, te) = cfg.split_counts(&f.name);
        generate_family_splits(f, cfg.image, cfg.data.seed, tr, te)
    };
    let majority = cfg.benchmark.majority.iter().map(|&i| render(i)).collect::<Result<Vec<_>>>()?;
    let minority = render(cfg.benchmark.minority)?;
    Ok(BenchData {
        real,
        majority,
        minority,
    })
}

pub fn assemble_from(cfg: &ExperimentConfig, data: &BenchData, coverage: Option<&CoverageMatrix>) -> Result<Benchmark> {
    let majority: Vec<&Splits> = data.majority.iter().collect();
    assemble_benchmark(&cfg.benchmark, coverage, &data.real, &majority, &data.minority)
}

/// Renders the coverage-sized splits of every family in the roster.
pub fn render_coverage_data(cfg: &ExperimentConfig) -> Result<(Splits, Vec<(String, Splits)>)> {
    let (rt, re) = (cfg.coverage.train, cfg.coverage.test);
    let real = generate_real_splits(cfg.image, cfg.data.seed, rt, re);
    let fams = cfg
        .families
        .iter()
        .map(|f| Ok((f.name.clone(), generate_family_splits(f, cfg.image, cfg.data.seed, rt, re)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((real, fams))
}

pub fn coverage_with_taxonomy(
    cfg: &ExperimentConfig,
    real: &Splits,
    families: &[(String, Splits)],
    seed: u64,
) -> Result<(CoverageMatrix, Taxonomy)> {
    let arch = ArchSpec::reference(cfg.image.height, cfg.image.width, cfg.image.channels, 2);
    let mut rng = SeededRng::new(derive_seed(seed, COVERAGE_STREAM));
    let m = coverage_matrix(
        families,
        real,
        |r| Classifier::new(arch.clone(), r),
        &cfg.coverage.schedule,
        &mut rng,
    )?;
    let t = build_taxonomy(&m, cfg.coverage.threshold)?;
    Ok((m, t))
}

pub fn model_arch(cfg: &ExperimentConfig) -> ArchSpec {
    ArchSpec::reference(cfg.image.height, cfg.image.width, cfg.image.channels, cfg.benchmark.classes())
}

/// Base model: trained from scratch on the benchmark without minority shots.
pub fn train_base(cfg: &ExperimentConfig, bench: &Benchmark, seed: u64) -> Result<(Classifier, History)> {
    let mut rng = SeededRng::new(derive_seed(seed, BASE_STREAM));
    let init = Classifier::new(model_arch(cfg), &mut rng)?;
    let spec = MethodSpec::new(Method::Unseen, cfg.gai.clone());
    train(&init, &bench.unseen_train(), &cfg.schedule.base, &spec, &mut rng)
        .map_err(|e| e.context(format!("base training, seed {seed}")))
}

/// Finetunes `base` with `method`. Every method of a seed draws from the
/// same stream, so the class-balanced run doubles as the teacher.
pub fn finetune(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    base: &Classifier,
    method: Method,
    gai: &GaiConfig,
    teacher: Option<Arc<Classifier>>,
    seed: u64,
) -> Result<(Classifier, History)> {
    let mut rng = SeededRng::new(derive_seed(seed, FINETUNE_STREAM));
    let mut spec = MethodSpec::new(method, gai.clone());
    if method.needs_teacher() {
        spec.teacher = teacher;
    }
    let data = if method == Method::Unseen {
        bench.unseen_train()
    } else {
        bench.train.clone()
    };
    train(base, &data, &cfg.schedule.finetune, &spec, &mut rng)
        .map_err(|e| e.context(format!("finetuning {method}, seed {seed}")))
}

pub fn evaluate_model(cfg: &ExperimentConfig, bench: &Benchmark, model: &Classifier, seed: u64) -> Result<MetricsReport> {
    Ok(evaluate(model, &bench.test.to_vec(), bench.minority_label, cfg.fpr_point)?.with_seed(seed))
}

/// Models shared by the methods of one seed.
pub struct SeedModels {
    pub base: Classifier,
    pub teacher: Option<Arc<Classifier>>,
}

/// Trains the base model and, if any method needs it, the teacher.
pub fn seed_models(cfg: &ExperimentConfig, bench: &Benchmark, seed: u64, need_teacher: bool) -> Result<SeedModels> {
    let (base, _) = train_base(cfg, bench, seed)?;
    let teacher = if need_teacher {
        let (t, _) = finetune(cfg, bench, &base, Method::Cb, &cfg.gai, None, seed)?;
        Some(Arc::new(t))
    } else {
        None
    };
    Ok(SeedModels { base, teacher })
}

/// Runs `method` for one seed given the shared models.
pub fn run_method(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    models: &SeedModels,
    method: Method,
    gai: &GaiConfig,
    seed: u64,
) -> Result<(MetricsReport, Classifier, History)> {
    let (model, hist) = match &models.teacher {
        Some(t) if method == Method::Cb => ((**t).clone(), History::default()),
        _ => finetune(cfg, bench, &models.base, method, gai, models.teacher.clone(), seed)?,
    };
    let report = evaluate_model(cfg, bench, &model, seed)?;
    Ok((report, model, hist))
}
