//! Rendered datasets on disk.
//!
//! `gen-data` writes one directory per family (plus `real/`) holding
//! `train.gait` and `test.gait`. Each file has four GAIT records: images
//! `[N, H, W, D]`, labels `[N]`, sample ids `[N, 2]` (high and low 32 bits)
//! and the resolved config hash as 32 byte values. `manifest.json` lists
//! every family with its counts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::benchkit::{generate_family_splits, generate_real_splits, ArtifactKind, ImageShape, Splits};
use crate::error::{ensure, Error, Result};
use crate::numcore::io::{decode_tensors, encode_tensors, write_atomic};
use crate::numcore::Tensor;
use crate::LabeledSample;

pub const MANIFEST: &str = "manifest.json";
pub const REAL: &str = "real";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Family id; `None` for the real images.
    pub id: Option<usize>,
    pub kind: Option<ArtifactKind>,
    pub train: usize,
    pub test: usize,
    /// Files written for this entry, relative to the data directory.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    /// Hash of everything the rendered pixels depend on.
    pub data_hash: String,
    pub seed: u64,
    pub image: ImageShape,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the settings that determine the rendered datasets.
pub fn data_hash(cfg: &ExperimentConfig) -> String {
    let mut counts: Vec<(String, usize, usize)> = vec![(REAL.into(), 0, 0)];
    counts.extend(cfg.families.iter().map(|f| (f.name.clone(), 0, 0)));
    for c in &mut counts {
        let (tr, te) = cfg.split_counts(&c.0);
        c.1 = tr;
        c.2 = te;
    }
    let key = serde_json::json!({
        "seed": cfg.data.seed,
        "image": cfg.image,
        "families": cfg.families,
        "counts": counts,
    });
    hex_digest(&serde_json::to_vec(&key).expect("json"))
}

fn hash_tensor(hash: &str) -> Tensor {
    Tensor::vector(hash.bytes().take(32).map(f64::from).collect())
}

/// Serializes samples as the four-record layout described above.
pub fn encode_samples(samples: &[LabeledSample], shape: ImageShape, config_hash: &str) -> Vec<u8> {
    let n = samples.len();
    let mut pixels = Vec::with_capacity(n * shape.len());
    for s in samples {
        pixels.extend_from_slice(s.image.data());
    }
    let mut dims = vec![n];
    dims.extend(shape.dims());
    let images = Tensor::new(dims, pixels).expect("sample shapes agree");
    let labels = Tensor::vector(samples.iter().map(|s| s.label as f64).collect());
    let ids = Tensor::new(
        vec![n, 2],
        samples
            .iter()
            .flat_map(|s| [(s.id >> 32) as f64, (s.id & 0xffff_ffff) as f64])
            .collect(),
    )
    .expect("two halves per id");
    encode_tensors(&[&images, &labels, &ids, &hash_tensor(config_hash)])
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<LabeledSample>> {
    let t = decode_tensors(bytes)?;
    ensure(t.len() == 4, || format!("expected 4 records, found {}", t.len()))
        .map_err(|e| Error::Format(e.to_string()))?;
    let (images, labels, ids) = (&t[0], &t[1], &t[2]);
    let n = labels.len();
    let ok = images.rank() == 4 && images.shape()[0] == n && ids.shape() == [n, 2];
    if !ok {
        return Err(Error::Format(format!(
            "inconsistent record shapes {:?}, {:?}, {:?}",
            images.shape(),
            labels.shape(),
            ids.shape()
        )));
    }
    let img_shape = images.shape()[1..].to_vec();
    Ok((0..n)
        .map(|i| {
            let id = ((ids.data()[2 * i] as u64) << 32) | ids.data()[2 * i + 1] as u64;
            let image = Tensor::new(img_shape.clone(), images.row(i).to_vec()).expect("row has image size");
            LabeledSample::new(image, labels.data()[i] as usize, id)
        })
        .collect())
}

fn split_files(name: &str) -> [String; 2] {
    [format!("{name}/train.gait"), format!("{name}/test.gait")]
}

/// Renders every family and the real images into `cfg.data.dir`.
/// Families with a zero count are listed but get no files.
pub fn write_datasets(cfg: &ExperimentConfig) -> Result<Manifest> {
    let dir = &cfg.data.dir;
    let hash = cfg.hash();
    let mut entries = Vec::new();
    let mut targets: Vec<(String, Option<usize>)> = vec![(REAL.into(), None)];
    targets.extend(cfg.families.iter().map(|f| (f.name.clone(), Some(f.id))));
    for (name, id) in targets {
        let (train, test) = cfg.split_counts(&name);
        let kind = id.map(|i| cfg.families[i].kind);
        let mut files = Vec::new();
        if train + test > 0 {
            let splits = match id {
                None => generate_real_splits(cfg.image, cfg.data.seed, train, test),
                Some(i) => generate_family_splits(&cfg.families[i], cfg.image, cfg.data.seed, train, test)?,
            };
            for (file, part) in split_files(&name).into_iter().zip([&splits.train, &splits.test]) {
                write_atomic(&dir.join(&file), &encode_samples(part, cfg.image, &hash))?;
                files.push(file);
            }
            log::info!("wrote {name}: {train} train, {test} test");
        }
        entries.push(ManifestEntry {
            name,
            id,
            kind,
            train,
            test,
            files,
        });
    }
    let manifest = Manifest {
        config_hash: hash,
        data_hash: data_hash(cfg),
        seed: cfg.data.seed,
        image: cfg.image,
        entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = std::fs::read(&path).map_err(|e| {
        Error::io(&path, e).context(format!("no rendered data in {}; run gen-data first", dir.display()))
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Read-only view of a rendered data directory.
pub struct DataStore {
    dir: PathBuf,
    manifest: Manifest,
}

impl DataStore {
    /// Opens the directory and checks it was rendered with settings that
    /// match `cfg`.
    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let manifest = read_manifest(&cfg.data.dir)?;
        if manifest.data_hash != data_hash(cfg) {
            return Err(Error::Config(format!(
                "data in {} was rendered with different settings; rerun gen-data",
                cfg.data.dir.display()
            )));
        }
        Ok(Self {
            dir: cfg.data.dir.clone(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Loads the first `limit` train and test samples of `name` (all when
    /// `None`).
    pub fn splits(&self, name: &str, limit: Option<(usize, usize)>) -> Result<Splits> {
        let entry = self
            .manifest
            .entry(name)
            .ok_or_else(|| Error::contract(format!("family {name} is not in the manifest")))?;
        let what = match entry.id {
            Some(id) => format!("family {id} ({name})"),
            None => name.to_string(),
        };
        let (want_tr, want_te) = limit.unwrap_or((entry.train, entry.test));
        ensure(want_tr <= entry.train && want_te <= entry.test, || {
            format!(
                "{what} has {} train / {} test samples, {want_tr} / {want_te} needed",
                entry.train, entry.test
            )
        })?;
        let load = |file: &str, n: usize| -> Result<Vec<LabeledSample>> {
            if n == 0 {
                return Ok(Vec::new());
            }
            let path = self.dir.join(file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e).context(format!("loading {what}")))?;
            let mut s = decode_samples(&bytes).map_err(|e| e.context(path.display().to_string()))?;
            s.truncate(n);
            Ok(s)
        };
        let [tr, te] = split_files(name);
        Ok(Splits {
            train: load(&tr, want_tr)?,
            test: load(&te, want_te)?,
        })
    }
}
