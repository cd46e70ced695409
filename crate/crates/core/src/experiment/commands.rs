//! The operations behind each CLI subcommand. Every file they write embeds
//! the resolved config hash and goes through a temp file and a rename.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::pipeline::{
    assemble_from, coverage_with_taxonomy, evaluate_model, finetune, model_arch, train_base, BenchData,
};
use super::store::{hex_digest, write_datasets, DataStore, Manifest, REAL};
use super::ExperimentConfig;
use crate::benchkit::{aggregate_runs, Benchmark, CoverageMatrix, MetricsReport, Splits, Taxonomy, CSV_HEADER};
use crate::diffnet::{checkpoint, Classifier};
use crate::error::{Error, Result};
use crate::gai::{GaiConfig, Quintuple};
use crate::numcore::io::{encode_tensors, write_atomic};
use crate::numcore::{derive_seed, SeededRng};
use crate::trainkit::Method;

const EXPORT_STREAM: u64 = 4;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Text output with a leading `# config <hash>` line.
fn write_text(path: &Path, cfg: &ExperimentConfig, body: &str) -> Result<()> {
    write_atomic(path, format!("# config {}\n{body}", cfg.hash()).as_bytes())
}

fn strip_comments(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Manifest> {
    write_datasets(cfg)
}

pub fn coverage_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("coverage")
}

/// Trains one detector per family on the rendered data and writes the
/// matrix, the taxonomy graph and the component assignment.
pub fn cmd_coverage(cfg: &ExperimentConfig) -> Result<(CoverageMatrix, Taxonomy)> {
    let store = DataStore::open(cfg)?;
    let limit = Some((cfg.coverage.train, cfg.coverage.test));
    let real = store.splits(REAL, limit)?;
    let families = cfg
        .families
        .iter()
        .map(|f| Ok((f.name.clone(), store.splits(&f.name, limit)?)))
        .collect::<Result<Vec<_>>>()?;
    let (m, t) = coverage_with_taxonomy(cfg, &real, &families, cfg.seeds[0])?;
    let dir = coverage_dir(cfg);
    write_text(&dir.join("coverage.csv"), cfg, &m.to_csv())?;
    write_text(&dir.join("components.csv"), cfg, &t.components_csv())?;
    write_text(&dir.join("edges.txt"), cfg, &t.edge_list())?;
    write_atomic(
        &dir.join("taxonomy.dot"),
        format!("// config {}\n{}", cfg.hash(), t.to_dot()).as_bytes(),
    )?;
    Ok((m, t))
}

/// The coverage matrix written by `coverage`, if any.
pub fn read_coverage(cfg: &ExperimentConfig) -> Result<Option<CoverageMatrix>> {
    let path = coverage_dir(cfg).join("coverage.csv");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = CoverageMatrix::from_csv(&strip_comments(&text)).map_err(|e| e.context(path.display().to_string()))?;
    let names: Vec<&str> = cfg.families.iter().map(|f| f.name.as_str()).collect();
    if m.names != names {
        return Err(Error::Config(format!(
            "{} covers families {:?}, the config lists {names:?}; rerun coverage",
            path.display(),
            m.names
        )));
    }
    Ok(Some(m))
}

/// Loads the benchmark families from disk.
pub fn load_bench_data(cfg: &ExperimentConfig) -> Result<BenchData> {
    let store = DataStore::open(cfg)?;
    let fam = |id: usize| store.splits(&cfg.families[id].name, None);
    Ok(BenchData {
        real: store.splits(REAL, None)?,
        majority: cfg.benchmark.majority.iter().map(|&i| fam(i)).collect::<Result<Vec<Splits>>>()?,
        minority: fam(cfg.benchmark.minority)?,
    })
}

/// Assembles the benchmark from disk, checking it against the coverage
/// matrix when one has been computed.
pub fn load_benchmark(cfg: &ExperimentConfig) -> Result<Benchmark> {
    let coverage = read_coverage(cfg)?;
    if coverage.is_none() {
        log::warn!("no coverage matrix in {}; minority coverage is not checked", coverage_dir(cfg).display());
    }
    let data = load_bench_data(cfg)?;
    assemble_from(cfg, &data, coverage.as_ref())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub config_hash: String,
    pub classes: usize,
    pub minority_label: usize,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    /// Ids of the minority training shots, in dataset order.
    pub shot_ids: Vec<u64>,
    /// Ids of the other training samples, hashed.
    pub train_digest: String,
}

pub fn summarize(cfg: &ExperimentConfig, bench: &Benchmark) -> BenchmarkSummary {
    let ids: Vec<u8> = bench.train.iter().flat_map(|s| s.id.to_le_bytes()).collect();
    BenchmarkSummary {
        config_hash: cfg.hash(),
        classes: bench.classes(),
        minority_label: bench.minority_label,
        train_counts: bench.train.class_counts(),
        test_counts: bench.test.class_counts(),
        shot_ids: bench
            .train
            .iter()
            .filter(|s| s.label == bench.minority_label)
            .map(|s| s.id)
            .collect(),
        train_digest: hex_digest(&ids),
    }
}

/// Assembles the benchmark (which requires a coverage matrix) and writes
/// its summary.
pub fn cmd_assemble(cfg: &ExperimentConfig) -> Result<BenchmarkSummary> {
    let coverage = read_coverage(cfg)?.ok_or_else(|| {
        Error::contract(format!(
            "no coverage matrix in {}; run coverage first",
            coverage_dir(cfg).display()
        ))
    })?;
    let data = load_bench_data(cfg)?;
    let bench = assemble_from(cfg, &data, Some(&coverage))?;
    let summary = summarize(cfg, &bench);
    write_json(&cfg.output_dir.join("benchmark.json"), &summary)?;
    Ok(summary)
}

fn models_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("models")
}

fn short(json: serde_json::Value) -> String {
    hex_digest(&serde_json::to_vec(&json).expect("json"))[..16].to_string()
}

/// Cache key of a base model: everything it depends on. The shot count is
/// left out because the base never sees the shots.
fn base_key(cfg: &ExperimentConfig) -> String {
    let mut bench = cfg.benchmark.clone();
    bench.shots = 0;
    short(serde_json::json!({
        "data": super::store::data_hash(cfg),
        "benchmark": bench,
        "schedule": cfg.schedule.base,
        "arch": model_arch(cfg),
    }))
}

fn teacher_key(cfg: &ExperimentConfig) -> String {
    short(serde_json::json!({
        "base": base_key(cfg),
        "benchmark": cfg.benchmark,
        "schedule": cfg.schedule.finetune,
    }))
}

fn cached(path: &Path, train: impl FnOnce() -> Result<Classifier>) -> Result<Classifier> {
    if path.exists() {
        log::info!("loading {}", path.display());
        return checkpoint::load(path);
    }
    let model = train()?;
    checkpoint::save(&model, path)?;
    Ok(model)
}

pub fn base_model(cfg: &ExperimentConfig, bench: &Benchmark, seed: u64) -> Result<Classifier> {
    let path = models_dir(cfg).join(format!("base-{}-seed{seed}.ckpt", base_key(cfg)));
    cached(&path, || Ok(train_base(cfg, bench, seed)?.0))
}

/// Class-balanced finetune of the base model, used as the teacher.
pub fn teacher_model(cfg: &ExperimentConfig, bench: &Benchmark, base: &Classifier, seed: u64) -> Result<Classifier> {
    let path = models_dir(cfg).join(format!("teacher-{}-seed{seed}.ckpt", teacher_key(cfg)));
    cached(&path, || Ok(finetune(cfg, bench, base, Method::Cb, &cfg.gai, None, seed)?.0))
}

/// Trains (or loads) the base model of every seed.
pub fn cmd_train_base(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let bench = load_benchmark(cfg)?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        base_model(cfg, &bench, seed)?;
        out.push(models_dir(cfg).join(format!("base-{}-seed{seed}.ckpt", base_key(cfg))));
    }
    Ok(out)
}

/// One seed of one method, evaluated.
pub fn run_seed(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    method: Method,
    gai: &GaiConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let base = base_model(cfg, bench, seed)?;
    let teacher = if method.needs_teacher() || method == Method::Cb {
        Some(Arc::new(teacher_model(cfg, bench, &base, seed)?))
    } else {
        None
    };
    let model = match (&teacher, method) {
        (Some(t), Method::Cb) => (**t).clone(),
        _ => finetune(cfg, bench, &base, method, gai, teacher, seed)?.0,
    };
    evaluate_model(cfg, bench, &model, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub method: Method,
    pub seed: Option<u64>,
    pub report: MetricsReport,
}

fn report_csv(cfg: &ExperimentConfig, method: Method, report: &MetricsReport) -> String {
    format!(
        "# config {}\nmethod,{CSV_HEADER}\n{method},{}\n",
        cfg.hash(),
        report.csv_row()
    )
}

fn runs_dir(cfg: &ExperimentConfig, method: Method) -> PathBuf {
    cfg.output_dir.join("runs").join(method.name())
}

/// Trains and evaluates `cfg.method` for every seed; writes per-seed and
/// aggregate reports.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let bench = load_benchmark(cfg)?;
    let method = cfg.method;
    let dir = runs_dir(cfg, method);
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let report = run_seed(cfg, &bench, method, &cfg.gai, seed)?;
        log::info!("{method} seed {seed}: ACC_minor {:.2}", report.acc_minor.mean);
        write_json(
            &dir.join(format!("seed-{seed}.json")),
            &ReportFile {
                config_hash: cfg.hash(),
                method,
                seed: Some(seed),
                report: report.clone(),
            },
        )?;
        reports.push(report);
    }
    let agg = aggregate_runs(&reports)?;
    write_json(
        &dir.join("aggregate.json"),
        &ReportFile {
            config_hash: cfg.hash(),
            method,
            seed: None,
            report: agg.clone(),
        },
    )?;
    write_atomic(&dir.join("aggregate.csv"), report_csv(cfg, method, &agg).as_bytes())?;
    Ok(agg)
}

/// Hyper-parameter swept by `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Tau,
    Lambda,
    Alpha0,
    Shots,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Tau => "tau",
            Sweep::Lambda => "lambda",
            Sweep::Alpha0 => "alpha0",
            Sweep::Shots => "shots",
        }
    }

    pub fn values(self, cfg: &ExperimentConfig) -> Vec<f64> {
        match self {
            Sweep::Tau => cfg.ablate.tau.clone(),
            Sweep::Lambda => cfg.ablate.lambda.clone(),
            Sweep::Alpha0 => cfg.ablate.alpha0.clone(),
            Sweep::Shots => cfg.ablate.shots.iter().map(|&s| s as f64).collect(),
        }
    }

    /// `cfg` with the swept knob set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            Sweep::Tau => c.gai.reject_threshold = value,
            Sweep::Lambda => c.gai.restrain_weight = value,
            Sweep::Alpha0 => {
                c.gai.alpha_init = value;
                c.gai.noise_scale = GaiConfig::fit_noise(value, cfg.gai.noise_scale);
            }
            Sweep::Shots => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("shot counts must be positive integers, got {value}")));
                }
                c.benchmark.shots = value as usize;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(Sweep::Tau),
            "lambda" => Ok(Sweep::Lambda),
            "alpha0" => Ok(Sweep::Alpha0),
            "shots" => Ok(Sweep::Shots),
            _ => Err(Error::Config(format!("unknown sweep {s:?}; expected tau|lambda|alpha0|shots"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub report: MetricsReport,
}

/// One aggregate report of `cfg.method` per sweep value, written as a single
/// CSV table (and JSON with the per-seed runs).
pub fn cmd_ablate(cfg: &ExperimentConfig, sweep: Sweep) -> Result<Vec<AblationRow>> {
    let values = sweep.values(cfg);
    if values.is_empty() {
        return Err(Error::Config(format!("ablate.{sweep} lists no values")));
    }
    let configs = values
        .iter()
        .map(|&v| sweep.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let data = load_bench_data(cfg)?;
    let coverage = read_coverage(cfg)?;
    let mut rows = Vec::new();
    for (c, &value) in configs.iter().zip(&values) {
        let bench = assemble_from(c, &data, coverage.as_ref())?;
        let reports = c
            .seeds
            .iter()
            .map(|&seed| run_seed(c, &bench, c.method, &c.gai, seed))
            .collect::<Result<Vec<_>>>()?;
        let report = aggregate_runs(&reports)?;
        log::info!("{sweep}={value}: ACC_minor {:.2}", report.acc_minor.mean);
        rows.push(AblationRow { value, report });
    }
    let dir = cfg.output_dir.join("ablate");
    let mut csv = format!("# config {}\nmethod,{sweep},{CSV_HEADER}\n", cfg.hash());
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", cfg.method, r.value, r.report.csv_row()));
    }
    write_atomic(&dir.join(format!("{sweep}.csv")), csv.as_bytes())?;
    write_json(
        &dir.join(format!("{sweep}.json")),
        &serde_json::json!({ "config_hash": cfg.hash(), "method": cfg.method, "sweep": sweep, "rows": rows }),
    )?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedSample {
    pub index: usize,
    pub major_id: u64,
    pub major_label: usize,
    pub minor_id: u64,
    pub accepted: bool,
    pub teacher_confidence: f64,
}

/// Runs the generator on `count` random majority/minority pairs against the
/// first seed's base model (student) and teacher, and dumps
/// `(x_major, x_minor, x*_0, x_adv, alpha)` per pair as GAIT records.
pub fn cmd_export_samples(cfg: &ExperimentConfig, count: usize) -> Result<PathBuf> {
    let bench = load_benchmark(cfg)?;
    let seed = cfg.seeds[0];
    let base = base_model(cfg, &bench, seed)?;
    let teacher = teacher_model(cfg, &bench, &base, seed)?;
    let ml = bench.minority_label;
    let shots: Vec<_> = bench.train.iter().filter(|s| s.label == ml).collect();
    let pool: Vec<_> = bench.train.iter().filter(|s| s.label != ml).collect();
    let mut rng = SeededRng::new(derive_seed(seed, EXPORT_STREAM));
    let mut tensors = Vec::new();
    let mut meta = Vec::new();
    for index in 0..count {
        let major = pool[rng.below(pool.len())];
        let minor = shots[rng.below(shots.len())];
        let (q, out) = Quintuple::capture(&major.image, &minor.image, major.label, &cfg.gai, &teacher, &base, &mut rng)?;
        tensors.extend(q.tensors().into_iter().cloned());
        meta.push(ExportedSample {
            index,
            major_id: major.id,
            major_label: major.label,
            minor_id: minor.id,
            accepted: out.accepted,
            teacher_confidence: out.teacher_confidence,
        });
    }
    let dir = cfg.output_dir.join("samples");
    let path = dir.join("quintuples.gait");
    write_atomic(&path, &encode_tensors(&tensors.iter().collect::<Vec<_>>()))?;
    write_json(
        &dir.join("quintuples.json"),
        &serde_json::json!({
            "config_hash": cfg.hash(),
            "layout": ["x_major", "x_minor", "x_init", "x_adv", "alpha"],
            "samples": meta,
        }),
    )?;
    Ok(path)
}
