//! Long-tailed dataset construction, synthetic SAR-like imagery, the dataset
//! file format and the labeled/unlabeled batch sampler.

pub mod experiment;
pub mod format;
pub mod longtail;
pub mod sampler;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use experiment::SyntheticExperiment;
pub use longtail::{build_longtail, longtail_counts, LongTailSpec};
pub use sampler::{sample_batches, BatchIndices, BatchPlan};
pub use split::{make_splits, DatasetSplit, HiddenLabels};
pub use synth::{synth_generate, SynthParams};

/// One image with an optional ground-truth class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub id: u32,
    pub pixels: Vec<f32>,
    pub label: Option<usize>,
}

/// A training or test image whose class is known to the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: u32,
    pub pixels: Vec<f32>,
    pub label: usize,
}

/// An image as the trainer sees it on the unlabeled path. There is no label
/// field: the hidden ground truth lives in [`HiddenLabels`] and is only read
/// by reporting code.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub id: u32,
    pub pixels: Vec<f32>,
}

impl AsRef<[f32]> for LabeledSample {
    fn as_ref(&self) -> &[f32] {
        &self.pixels
    }
}

impl AsRef<[f32]> for UnlabeledSample {
    fn as_ref(&self) -> &[f32] {
        &self.pixels
    }
}

/// A flat list of same-sized images, the in-memory form of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    /// Checks pixel range, label range, image size and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::data("dataset needs at least two classes"));
        }
        let pixels = self.height * self.width;
        let mut ids = std::collections::HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !ids.insert(s.id) {
                return Err(Error::data(format!("duplicate sample id {}", s.id)));
            }
            if s.pixels.len() != pixels {
                return Err(Error::data(format!("sample {} has {} pixels, expected {pixels}", s.id, s.pixels.len())));
            }
            if s.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::data(format!("sample {} has pixels outside [0, 1]", s.id)));
            }
            if let Some(l) = s.label {
                if l >= self.classes {
                    return Err(Error::data(format!("sample {} has label {l} >= {}", s.id, self.classes)));
                }
            }
        }
        Ok(())
    }

    /// Number of samples per class (unlabeled samples are not counted).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            if let Some(l) = s.label {
                counts[l] += 1;
            }
        }
        counts
    }

    /// All samples as labeled records; fails if any label is missing.
    pub fn labeled(&self) -> Result<Vec<LabeledSample>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .map(|label| LabeledSample { id: s.id, pixels: s.pixels.clone(), label })
                    .ok_or_else(|| Error::data(format!("sample {} has no label", s.id)))
            })
            .collect()
    }
}
