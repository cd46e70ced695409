use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchkit::{default_roster, BenchmarkSpec, ForgeryFamilySpec, ImageShape, DEFAULT_FPR};
use crate::error::{Error, Result};
use crate::gai::GaiConfig;
use crate::trainkit::{Method, TrainSchedule};

/// Rendering sizes for `gen-data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding the rendered datasets.
    pub dir: PathBuf,
    pub seed: u64,
    /// Samples rendered per family (before the train/test split).
    pub count: usize,
    /// Per-family overrides of `count`, by family name.
    pub family_counts: BTreeMap<String, usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            seed: 11,
            count: 10_600,
            family_counts: BTreeMap::new(),
        }
    }
}

/// Detector training for the coverage matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageConfig {
    /// Per-family train and test samples used (taken from the rendered splits).
    pub train: usize,
    pub test: usize,
    pub threshold: f64,
    pub schedule: TrainSchedule,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            train: 1500,
            test: 300,
            threshold: 70.0,
            schedule: TrainSchedule::scaled(1500, 0.05),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedules {
    pub base: TrainSchedule,
    pub finetune: TrainSchedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            base: TrainSchedule::base_default(),
            finetune: TrainSchedule::scaled(4800, 0.02),
        }
    }
}

/// Sweep values for `ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub shots: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            tau: vec![0.0, 0.25, 0.5, 0.75],
            lambda: vec![0.0, 0.25, 0.5, 1.0],
            alpha0: vec![0.5, 0.75, 1.0],
            shots: vec![10, 50, 100],
        }
    }
}

/// Everything a run depends on. Loaded from TOML; missing keys take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub fpr_point: f64,
    pub image: ImageShape,
    pub families: Vec<ForgeryFamilySpec>,
    pub data: DataConfig,
    pub coverage: CoverageConfig,
    pub benchmark: BenchmarkSpec,
    pub gai: GaiConfig,
    pub schedule: Schedules,
    pub ablate: AblateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let benchmark = BenchmarkSpec::default();
        Self {
            output_dir: PathBuf::from("runs"),
            method: Method::Gai,
            seeds: vec![1, 2, 3],
            fpr_point: DEFAULT_FPR,
            image: ImageShape::default(),
            families: default_roster(),
            data: DataConfig::default(),
            coverage: CoverageConfig::default(),
            gai: GaiConfig {
                step_size: 10.0,
                smooth_weight: 100.0,
                ..GaiConfig::with_minority(benchmark.minority_label())
            },
            benchmark,
            schedule: Schedules::default(),
            ablate: AblateConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let wrapped = format!("v = {value}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies a `key.path=value` override to a TOML tree.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Defaults, then the TOML file (if any), then each override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = toml::Table::try_from(ExperimentConfig::default())
            .map_err(|e| config_err(format!("serializing defaults: {e}")))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file: toml::Table = text
                .parse()
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            merge(&mut tree, file);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    /// Checks every nested invariant. Failures are usage errors.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| config_err(e.to_string());
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        let uniq: HashSet<_> = self.seeds.iter().collect();
        if uniq.len() != self.seeds.len() {
            return Err(config_err(format!("seeds must be distinct, got {:?}", self.seeds)));
        }
        if !(self.fpr_point > 0.0 && self.fpr_point < 1.0) {
            return Err(config_err(format!("fpr_point must lie in (0, 1), got {}", self.fpr_point)));
        }
        self.image.validate().map_err(wrap)?;
        let mut names = HashSet::new();
        for (i, f) in self.families.iter().enumerate() {
            f.validate().map_err(wrap)?;
            if f.id != i {
                return Err(config_err(format!("family {} has id {}, expected {i}", f.name, f.id)));
            }
            if !names.insert(f.name.as_str()) || f.name == "real" {
                return Err(config_err(format!("family name {:?} is reserved or repeated", f.name)));
            }
        }
        for name in self.data.family_counts.keys() {
            if !names.contains(name.as_str()) && name != "real" {
                return Err(config_err(format!("data.family_counts names unknown family {name:?}")));
            }
        }
        for &id in self.benchmark.majority.iter().chain([&self.benchmark.minority]) {
            if id >= self.families.len() {
                return Err(config_err(format!("benchmark references unknown family {id}")));
            }
        }
        self.benchmark.validate(None).map_err(wrap)?;
        self.gai.validate().map_err(wrap)?;
        if self.gai.minority_label != self.benchmark.minority_label() {
            return Err(config_err(format!(
                "gai.minority_label is {} but the benchmark puts the minority at {}",
                self.gai.minority_label,
                self.benchmark.minority_label()
            )));
        }
        self.schedule.base.validate().map_err(wrap)?;
        self.schedule.finetune.validate().map_err(wrap)?;
        self.coverage.schedule.validate().map_err(wrap)?;
        if !(self.coverage.threshold > 0.0 && self.coverage.threshold < 100.0) {
            return Err(config_err("coverage.threshold must lie in (0, 100)"));
        }
        Ok(())
    }

    /// Rendered sample count of family `name` (or `"real"`).
    pub fn family_count(&self, name: &str) -> usize {
        if let Some(&n) = self.data.family_counts.get(name) {
            return n;
        }
        if name == "real" {
            let per = self.benchmark.samples_per_family;
            let train = self.benchmark.real_train_count();
            // Keep the real test split as large as a family's.
            return train + (per - self.benchmark.train_per_family());
        }
        self.data.count
    }

    /// Train/test sizes of a rendered family of `count` samples.
    pub fn split_counts(&self, name: &str) -> (usize, usize) {
        let count = self.family_count(name);
        if name == "real" {
            let train = self.benchmark.real_train_count().min(count);
            return (train, count - train);
        }
        let train = (count as f64 * self.benchmark.split_ratio).round() as usize;
        (train, count - train)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
