use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::rng;

/// Exponentially decaying class sizes: head count `head`, imbalance ratio
/// `ratio` between the first and last class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub head: usize,
    pub ratio: f64,
    pub classes: usize,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config(format!("long-tail spec needs K >= 2, got {}", self.classes)));
        }
        if !(self.ratio >= 1.0) || !self.ratio.is_finite() {
            return Err(Error::config(format!("imbalance ratio must be >= 1, got {}", self.ratio)));
        }
        if self.head == 0 {
            return Err(Error::config("head class count must be >= 1"));
        }
        Ok(())
    }
}

/// `N_k = N * IR^(-(k-1)/(K-1))`, rounded to the nearest integer with a floor of 1.
pub fn longtail_counts(spec: &LongTailSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let k_minus_1 = (spec.classes - 1) as f64;
    Ok((0..spec.classes)
        .map(|k| {
            let n = spec.head as f64 / spec.ratio.powf(k as f64 / k_minus_1);
            (n.round() as usize).max(1)
        })
        .collect())
}

/// Subsamples a labeled pool down to the long-tailed class sizes. Which
/// samples survive is decided by a seeded shuffle within each class.
pub fn build_longtail(pool: &Dataset, spec: &LongTailSpec, seed: u64) -> Result<Dataset> {
    if spec.classes != pool.classes {
        return Err(Error::config(format!(
            "long-tail spec has K={}, dataset has {} classes",
            spec.classes, pool.classes
        )));
    }
    let counts = longtail_counts(spec)?;
    let mut by_class: Vec<Vec<&ImageSample>> = vec![Vec::new(); pool.classes];
    for s in &pool.samples {
        let l = s.label.ok_or_else(|| Error::data(format!("sample {} has no label", s.id)))?;
        by_class[l].push(s);
    }
    let mut samples = Vec::new();
    for (k, members) in by_class.iter_mut().enumerate() {
        if members.len() < counts[k] {
            return Err(Error::data(format!(
                "class {k} has {} samples, long-tail spec needs {}",
                members.len(),
                counts[k]
            )));
        }
        members.sort_by_key(|s| s.id);
        let mut r = rng::stream(&[seed, rng::tag::LONGTAIL, k as u64]);
        let keep = rand::seq::index::sample(&mut r, members.len(), counts[k]);
        let mut chosen: Vec<&ImageSample> = keep.iter().map(|i| members[i]).collect();
        chosen.sort_by_key(|s| s.id);
        samples.extend(chosen.into_iter().cloned());
    }
    Ok(Dataset { classes: pool.classes, height: pool.height, width: pool.width, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_interior() {
        let c = longtail_counts(&LongTailSpec { head: 100, ratio: 10.0, classes: 10 }).unwrap();
        assert_eq!(c[0], 100);
        assert_eq!(c[9], 10);
        // 100 * 10^(-1/9) = 77.4264 -> 77
        assert_eq!(c[1], 77);
        let c5 = longtail_counts(&LongTailSpec { head: 100, ratio: 10.0, classes: 5 }).unwrap();
        assert_eq!(c5, vec![100, 56, 32, 18, 10]);
        assert_eq!(c5.iter().sum::<usize>(), 216);
    }

    #[test]
    fn flat_when_ratio_is_one() {
        let c = longtail_counts(&LongTailSpec { head: 100, ratio: 1.0, classes: 5 }).unwrap();
        assert_eq!(c, vec![100; 5]);
    }

    #[test]
    fn invalid_specs() {
        assert!(longtail_counts(&LongTailSpec { head: 100, ratio: 10.0, classes: 1 }).is_err());
        assert!(longtail_counts(&LongTailSpec { head: 100, ratio: 0.5, classes: 3 }).is_err());
        assert!(longtail_counts(&LongTailSpec { head: 0, ratio: 2.0, classes: 3 }).is_err());
    }

    #[test]
    fn never_empty_at_extreme_ratio() {
        let c = longtail_counts(&LongTailSpec { head: 3, ratio: 1000.0, classes: 4 }).unwrap();
        assert!(c.iter().all(|&n| n >= 1));
    }

    proptest! {
        #[test]
        fn monotone_with_exact_endpoints(head in 1usize..5000, ratio in 1.0f64..200.0, k in 2usize..20) {
            let spec = LongTailSpec { head, ratio, classes: k };
            let c = longtail_counts(&spec).unwrap();
            prop_assert_eq!(c.len(), k);
            prop_assert!(c.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(c[0], head);
            prop_assert_eq!(c[k - 1], ((head as f64 / ratio).round() as usize).max(1));
        }
    }
}
