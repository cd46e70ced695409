use std::sync::Arc;

use crate::error::{ensure, Result};
use crate::LabeledSample;

/// Labeled samples with a per-class index.
///
/// Storage is shared: views produced by [`Dataset::filter`] reference the same
/// samples, so large training sets can be split without copying images.
#[derive(Clone, Debug)]
pub struct Dataset {
    store: Arc<Vec<LabeledSample>>,
    members: Vec<usize>,
    classes: usize,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, classes: usize) -> Result<Self> {
        ensure(classes >= 1, || "dataset needs at least one class".into())?;
        for s in &samples {
            ensure(s.label < classes, || {
                format!("sample {} has label {} but only {classes} classes", s.id, s.label)
            })?;
        }
        let members = (0..samples.len()).collect();
        Ok(Self::from_members(Arc::new(samples), members, classes))
    }

    fn from_members(store: Arc<Vec<LabeledSample>>, members: Vec<usize>, classes: usize) -> Self {
        let mut by_class = vec![Vec::new(); classes];
        for (pos, &i) in members.iter().enumerate() {
            by_class[store[i].label].push(pos);
        }
        Self {
            store,
            members,
            classes,
            by_class,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize) -> &LabeledSample {
        &self.store[self.members[i]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledSample> + '_ {
        self.members.iter().map(|&i| &self.store[i])
    }

    /// Positions (for [`Dataset::get`]) of the samples labeled `class`.
    pub fn class_positions(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    /// View keeping the samples for which `keep` holds.
    pub fn filter(&self, mut keep: impl FnMut(&LabeledSample) -> bool) -> Dataset {
        let members = self.members.iter().copied().filter(|&i| keep(&self.store[i])).collect();
        Self::from_members(Arc::clone(&self.store), members, self.classes)
    }

    pub fn without_class(&self, class: usize) -> Dataset {
        self.filter(|s| s.label != class)
    }

    pub fn to_vec(&self) -> Vec<LabeledSample> {
        self.iter().cloned().collect()
    }
}
