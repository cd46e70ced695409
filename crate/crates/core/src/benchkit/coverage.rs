use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::family::Splits;
use crate::diffnet::{argmax, Classifier};
use crate::error::{ensure, Error, Result};
use crate::gai::GaiConfig;
use crate::numcore::SeededRng;
use crate::trainkit::{train, Dataset, Method, MethodSpec, TrainSchedule};
use crate::LabeledSample;

/// `acc[i][j]`: accuracy (percent) on family `j`'s test split of a binary
/// detector trained on family `i` plus real data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub names: Vec<String>,
    pub acc: Vec<Vec<f64>>,
}

impl CoverageMatrix {
    pub fn new(names: Vec<String>, acc: Vec<Vec<f64>>) -> Result<Self> {
        let k = names.len();
        ensure(acc.len() == k && acc.iter().all(|r| r.len() == k), || {
            format!("coverage matrix must be {k}x{k}")
        })?;
        ensure(acc.iter().flatten().all(|v| (0.0..=100.0).contains(v)), || {
            "coverage entries must lie in [0, 100]".into()
        })?;
        Ok(Self { names, acc })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Rows whose diagonal entry is not the row maximum.
    pub fn off_diagonal_maxima(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.acc[i].iter().any(|&v| v > self.acc[i][i]))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trained_on");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.acc) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty coverage csv".into()))?;
        let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut acc = Vec::new();
        for line in lines {
            let row: std::result::Result<Vec<f64>, _> = line.split(',').skip(1).map(str::parse).collect();
            acc.push(row.map_err(|e| Error::Format(format!("coverage csv: {e}")))?);
        }
        Self::new(names, acc).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Binary accuracy (percent) of `model` on reals (class 0) and fakes.
pub fn binary_accuracy(model: &Classifier, real: &[LabeledSample], fake: &[LabeledSample]) -> Result<f64> {
    let images: Vec<_> = real.iter().chain(fake).map(|s| &s.image).collect();
    ensure(!images.is_empty(), || "no test samples".into())?;
    let probs = model.predict_proba(&images)?;
    let correct = probs
        .iter()
        .enumerate()
        .filter(|(i, p)| (argmax(p) == 0) == (*i < real.len()))
        .count();
    Ok(100.0 * correct as f64 / images.len() as f64)
}

/// Trains one real-vs-family detector per family and fills the matrix.
///
/// Family `j`'s test split is scored together with an equal number of real
/// test images (cycled if there are fewer). Detector `i` trains with the
/// child stream `i` of a seed drawn from `rng`.
pub fn coverage_matrix<F>(
    families: &[(String, Splits)],
    real: &Splits,
    detector_factory: F,
    schedule: &TrainSchedule,
    rng: &mut SeededRng,
) -> Result<CoverageMatrix>
where
    F: Fn(&mut SeededRng) -> Result<Classifier> + Sync,
{
    ensure(families.len() >= 2, || "coverage needs at least two families".into())?;
    ensure(!real.train.is_empty() && !real.test.is_empty(), || "coverage needs real data".into())?;
    let root = rng.fork();
    let method = MethodSpec::new(Method::Ib, GaiConfig::with_minority(1));
    let detectors: Vec<Result<Classifier>> = families
        .par_iter()
        .enumerate()
        .map(|(i, (name, splits))| {
            let mut r = root.child(i as u64);
            let init = detector_factory(&mut r)?;
            ensure(init.num_classes() == 2, || "detectors must have two classes".into())?;
            let mut samples = real.train.clone();
            samples.extend(splits.train.iter().cloned().map(|mut s| {
                s.label = 1;
                s
            }));
            let ds = Dataset::new(samples, 2)?;
            train(&init, &ds, schedule, &method, &mut r)
                .map(|(m, _)| m)
                .map_err(|e| e.context(format!("coverage detector for family {name}")))
        })
        .collect();
    let detectors = detectors.into_iter().collect::<Result<Vec<_>>>()?;
    let mut acc = vec![vec![0.0; families.len()]; families.len()];
    for (i, det) in detectors.iter().enumerate() {
        for (j, (_, splits)) in families.iter().enumerate() {
            let n = splits.test.len();
            let reals: Vec<LabeledSample> = real.test.iter().cycle().take(n).cloned().collect();
            acc[i][j] = binary_accuracy(det, &reals, &splits.test)?;
        }
    }
    let names = families.iter().map(|(n, _)| n.clone()).collect();
    let m = CoverageMatrix::new(names, acc)?;
    for i in m.off_diagonal_maxima() {
        log::warn!("coverage row {} is not maximal on its diagonal", m.names[i]);
    }
    Ok(m)
}

/// Directed coverage edges and the undirected components they induce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub names: Vec<String>,
    pub threshold: f64,
    pub edges: Vec<(usize, usize)>,
    /// Components in order of their smallest member, members ascending.
    pub components: Vec<Vec<usize>>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Edge `i -> j` iff `i != j` and `A[i][j] >= threshold`.
pub fn build_taxonomy(matrix: &CoverageMatrix, threshold: f64) -> Result<Taxonomy> {
    ensure(threshold > 0.0 && threshold < 100.0, || {
        format!("threshold must lie in (0, 100), got {threshold}")
    })?;
    let k = matrix.len();
    let mut edges = Vec::new();
    let mut parent: Vec<usize> = (0..k).collect();
    for i in 0..k {
        for j in 0..k {
            if i != j && matrix.acc[i][j] >= threshold {
                edges.push((i, j));
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; k];
    for i in 0..k {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = components.len();
            components.push(Vec::new());
        }
        components[slot[r]].push(i);
    }
    Ok(Taxonomy {
        names: matrix.names.clone(),
        threshold,
        edges,
        components,
    })
}

impl Taxonomy {
    /// Component index of every family.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.names.len()];
        for (c, members) in self.components.iter().enumerate() {
            for &m in members {
                out[m] = c;
            }
        }
        out
    }

    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{} -> {}", self.names[i], self.names[j]);
        }
        out
    }

    pub fn components_csv(&self) -> String {
        let mut out = String::from("family,component\n");
        for (i, c) in self.assignment().into_iter().enumerate() {
            let _ = writeln!(out, "{},{c}", self.names[i]);
        }
        out
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph taxonomy {\n");
        for (c, members) in self.components.iter().enumerate() {
            let _ = writeln!(out, "  subgraph cluster_{c} {{");
            let _ = writeln!(out, "    label=\"component {c}\";");
            for &m in members {
                let _ = writeln!(out, "    n{m} [label=\"{}\"];", self.names[m]);
            }
            out.push_str("  }\n");
        }
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "  n{i} -> n{j};");
        }
        out.push_str("}\n");
        out
    }
}
