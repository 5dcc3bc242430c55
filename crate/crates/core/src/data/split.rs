use std::collections::{BTreeMap, HashSet};

use crate::data::{Dataset, LabeledSample, UnlabeledSample};
use crate::error::{Error, Result};
use crate::rng;

/// Ground truth for the unlabeled split. Only reporting code reads it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HiddenLabels {
    labels: BTreeMap<u32, usize>,
}

impl HiddenLabels {
    pub fn new(labels: BTreeMap<u32, usize>) -> Self {
        HiddenLabels { labels }
    }

    pub fn label_of(&self, id: u32) -> Option<usize> {
        self.labels.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in self.labels.values() {
            if l < classes {
                counts[l] += 1;
            }
        }
        counts
    }
}

/// Labeled, unlabeled and test partitions of one experiment.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
    pub test: Vec<LabeledSample>,
    hidden: HiddenLabels,
}

impl DatasetSplit {
    pub fn hidden_labels(&self) -> &HiddenLabels {
        &self.hidden
    }

    /// Per-class sizes of the training pool (labeled plus unlabeled). These
    /// define which classes count as tail classes in reports.
    pub fn train_class_counts(&self) -> Vec<usize> {
        let mut counts = self.hidden.class_counts(self.classes);
        for s in &self.labeled {
            counts[s.label] += 1;
        }
        counts
    }
}

/// Per class, `ceil(fraction * count)` samples (after a seeded shuffle) go to
/// the labeled split and the rest to the unlabeled split. `test` must be fully
/// labeled and share no ids with the pool.
pub fn make_splits(pool: &Dataset, fraction: f64, seed: u64, test: &Dataset) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    pool.validate()?;
    test.validate()?;
    if test.classes != pool.classes || test.height != pool.height || test.width != pool.width {
        return Err(Error::data("test set does not match the training pool's classes or image size"));
    }
    let pool_ids: HashSet<u32> = pool.samples.iter().map(|s| s.id).collect();
    if let Some(s) = test.samples.iter().find(|s| pool_ids.contains(&s.id)) {
        return Err(Error::data(format!("sample id {} appears in both pool and test set", s.id)));
    }
    let test_samples = test.labeled()?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); pool.classes];
    for (i, s) in pool.samples.iter().enumerate() {
        let l = s.label.ok_or_else(|| Error::data(format!("pool sample {} has no label", s.id)))?;
        by_class[l].push(i);
    }
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut hidden = BTreeMap::new();
    for (k, members) in by_class.iter_mut().enumerate() {
        members.sort_by_key(|&i| pool.samples[i].id);
        let n = members.len();
        // tolerance keeps e.g. 0.2 * 55 from rounding up past 11
        let take = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut r = rng::stream(&[seed, rng::tag::SPLIT, k as u64]);
        let order = rand::seq::index::sample(&mut r, n, n).into_vec();
        for (rank, &j) in order.iter().enumerate() {
            let s = &pool.samples[members[j]];
            if rank < take.min(n) {
                labeled.push(LabeledSample { id: s.id, pixels: s.pixels.clone(), label: k });
            } else {
                unlabeled.push(UnlabeledSample { id: s.id, pixels: s.pixels.clone() });
                hidden.insert(s.id, k);
            }
        }
    }
    labeled.sort_by_key(|s| s.id);
    unlabeled.sort_by_key(|s| s.id);
    Ok(DatasetSplit {
        classes: pool.classes,
        height: pool.height,
        width: pool.width,
        labeled,
        unlabeled,
        test: test_samples,
        hidden: HiddenLabels::new(hidden),
    })
}
