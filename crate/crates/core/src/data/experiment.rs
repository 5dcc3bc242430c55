use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::rng;

use super::longtail::{longtail_counts, LongTailSpec};
use super::split::{make_splits, DatasetSplit};
use super::synth::{synth_generate_tagged, SynthParams};
use super::Dataset;

/// A complete synthetic long-tailed setup: training pool, balanced test
/// pool and split, all from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticExperiment {
    pub classes: usize,
    pub head: usize,
    pub ratio: f64,
    pub label_fraction: f64,
    pub test_per_class: usize,
    pub synth: SynthParams,
    pub seed: u64,
}

impl Default for SyntheticExperiment {
    fn default() -> Self {
        SyntheticExperiment {
            classes: 5,
            head: 100,
            ratio: 10.0,
            label_fraction: 0.2,
            test_per_class: 50,
            synth: SynthParams::default(),
            seed: 0,
        }
    }
}

impl SyntheticExperiment {
    pub fn counts(&self) -> Result<Vec<usize>> {
        longtail_counts(&LongTailSpec { head: self.head, ratio: self.ratio, classes: self.classes })
    }

    pub fn pool(&self) -> Result<Dataset> {
        let samples =
            synth_generate_tagged(&self.counts()?, &self.synth, self.seed, rng::tag::SAMPLE, 0, Exec::default())?;
        Ok(Dataset { classes: self.classes, height: self.synth.height, width: self.synth.width, samples })
    }

    /// Balanced test pool from the same class templates; ids follow the
    /// training pool's.
    pub fn test_pool(&self) -> Result<Dataset> {
        let base = self.counts()?.iter().sum::<usize>() as u32;
        let counts = vec![self.test_per_class; self.classes];
        let samples =
            synth_generate_tagged(&counts, &self.synth, self.seed, rng::tag::TEST_POOL, base, Exec::default())?;
        Ok(Dataset { classes: self.classes, height: self.synth.height, width: self.synth.width, samples })
    }

    pub fn split(&self) -> Result<DatasetSplit> {
        make_splits(&self.pool()?, self.label_fraction, self.seed, &self.test_pool()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_setup_sizes() {
        let s = SyntheticExperiment {
            synth: SynthParams { height: 8, width: 8, ..Default::default() },
            ..Default::default()
        }
        .split()
        .unwrap();
        assert_eq!(s.train_class_counts(), vec![100, 56, 32, 18, 10]);
        assert_eq!(s.labeled.len(), 45);
        assert_eq!(s.unlabeled.len(), 171);
        assert_eq!(s.test.len(), 250);
    }
}
