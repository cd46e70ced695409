use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::{apply_artifact, render_real, ArtifactKind, ImageShape};
use crate::error::{ensure, Result};
use crate::numcore::{derive_seed, SeededRng};
use crate::LabeledSample;

/// One synthetic forgery approach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeryFamilySpec {
    pub id: usize,
    pub name: String,
    pub kind: ArtifactKind,
    pub params: Vec<f64>,
    /// Intended coverage group.
    pub group: usize,
    /// Per-image strength is drawn from `[1 - jitter, 1]`.
    #[serde(default)]
    pub jitter: f64,
}

impl ForgeryFamilySpec {
    pub fn new(id: usize, name: &str, kind: ArtifactKind, params: &[f64], group: usize, jitter: f64) -> Self {
        Self {
            id,
            name: name.to_string(),
            kind,
            params: params.to_vec(),
            group,
            jitter,
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.params[self.kind.amplitude_index()]
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.params.len() == self.kind.param_count(), || {
            format!(
                "family {}: {:?} takes {} params, got {}",
                self.name,
                self.kind,
                self.kind.param_count(),
                self.params.len()
            )
        })?;
        ensure(self.params.iter().all(|p| p.is_finite()), || {
            format!("family {}: non-finite parameter", self.name)
        })?;
        let max_amp = match self.kind {
            ArtifactKind::PeriodicPattern | ArtifactKind::SeamBlend => 0.5,
            ArtifactKind::ChannelShift | ArtifactKind::LocalWarp => 1.0,
        };
        ensure((0.0..=max_amp).contains(&self.amplitude()), || {
            format!("family {}: amplitude must lie in [0, {max_amp}]", self.name)
        })?;
        ensure((0.0..=1.0).contains(&self.jitter), || {
            format!("family {}: jitter must lie in [0, 1]", self.name)
        })
    }
}

/// Six families in three coverage groups of two near variants each.
pub fn default_roster() -> Vec<ForgeryFamilySpec> {
    use ArtifactKind::*;
    vec![
        ForgeryFamilySpec::new(0, "grid-a", PeriodicPattern, &[0.0, 6.0, 0.05], 0, 0.5),
        ForgeryFamilySpec::new(1, "grid-b", PeriodicPattern, &[0.5, 6.0, 0.05], 0, 0.5),
        ForgeryFamilySpec::new(2, "seam-a", SeamBlend, &[1.0, 0.1, 0.08], 1, 0.3),
        ForgeryFamilySpec::new(3, "seam-b", SeamBlend, &[0.9, 0.1, 0.1], 1, 0.3),
        ForgeryFamilySpec::new(4, "shift-a", ChannelShift, &[0.0, 0.0, 1.0, 1.0], 2, 0.5),
        ForgeryFamilySpec::new(5, "shift-b", ChannelShift, &[0.0, 0.25, 1.0, 1.0], 2, 0.5),
    ]
}

/// Seed of the `i`-th base image rendered from `source_seed`; doubles as
/// the sample id.
pub fn sample_seed(source_seed: u64, i: usize) -> u64 {
    derive_seed(source_seed, i as u64)
}

/// Unmodified base images, labeled 0.
pub fn generate_real_dataset(shape: ImageShape, source_seed: u64, count: usize) -> Vec<LabeledSample> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = sample_seed(source_seed, i);
            LabeledSample::new(render_real(shape, s).0, 0, s)
        })
        .collect()
}

/// Base images with the family's artifact applied, labeled 1 (fake).
///
/// Deterministic per `(spec, shape, real_source_seed)`; sample `i` depends
/// only on `i`, so a longer dataset extends a shorter one.
pub fn generate_family_dataset(
    spec: &ForgeryFamilySpec,
    shape: ImageShape,
    real_source_seed: u64,
    count: usize,
) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    shape.validate()?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let s = sample_seed(real_source_seed, i);
            let (base, face) = render_real(shape, s);
            let mut rng = SeededRng::new(derive_seed(s, 0x5eed_0000 + spec.id as u64));
            let strength = 1.0 - spec.jitter * rng.uniform();
            let img = apply_artifact(spec.kind, &spec.params, strength, &base, &face, &mut rng);
            LabeledSample::new(img, 1, s)
        })
        .collect())
}

/// Train and test samples of one family (or of the real class).
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Source seeds of the train and test splits of family `family` (`None`
/// for real data). Train and test never share a base image seed stream.
pub fn split_seeds(seed: u64, family: Option<usize>) -> (u64, u64) {
    let f = family.map_or(0, |id| id as u64 + 1);
    (derive_seed(seed, 2 * f), derive_seed(seed, 2 * f + 1))
}

pub fn generate_family_splits(
    spec: &ForgeryFamilySpec,
    shape: ImageShape,
    seed: u64,
    train: usize,
    test: usize,
) -> Result<Splits> {
    let (a, b) = split_seeds(seed, Some(spec.id));
    Ok(Splits {
        train: generate_family_dataset(spec, shape, a, train)?,
        test: generate_family_dataset(spec, shape, b, test)?,
    })
}

pub fn generate_real_splits(shape: ImageShape, seed: u64, train: usize, test: usize) -> Splits {
    let (a, b) = split_seeds(seed, None);
    Splits {
        train: generate_real_dataset(shape, a, train),
        test: generate_real_dataset(shape, b, test),
    }
}
