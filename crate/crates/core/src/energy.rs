//! Energy scores and the in-distribution pseudo-label gate.
//!
//! `E(f) = -T * ln sum_i exp(f_i / T)`. Lower energy means the sample sits
//! closer to what the classifier has been trained on; a weak-view prediction
//! is accepted as a pseudo-label when its energy is strictly below `tau_e`.
//! Selection is stateless: every call re-scores its batch from scratch.

use serde::{Deserialize, Serialize};

use crate::data::HiddenLabels;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyScore {
    pub value: f64,
    pub temperature: f64,
}

/// `ln sum exp(x)` with the maximum subtracted first.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of `logits / temperature`.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&f| f / temperature).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|&s| (s - lse).exp()).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_t(logits, 1.0)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn energy(logits: &[f64], temperature: f64) -> Result<EnergyScore> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(format!("temperature must be positive, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(Error::config("energy of an empty logit vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("energy", "non-finite logit"));
    }
    let scaled: Vec<f64> = logits.iter().map(|&f| f / temperature).collect();
    Ok(EnergyScore { value: -temperature * log_sum_exp(&scaled), temperature })
}

/// Which gate decides pseudo-label membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BaselineMode {
    /// Energy gate `E < tau_e`.
    #[default]
    Off,
    /// Softmax-confidence gate `max softmax > tau_c`.
    Confidence { tau_c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub tau_e: f64,
    pub temperature: f64,
    pub baseline: BaselineMode,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !self.tau_e.is_finite() {
            return Err(Error::config("tau_e must be finite"));
        }
        if let BaselineMode::Confidence { tau_c } = self.baseline {
            if !(tau_c > 0.0 && tau_c < 1.0) {
                return Err(Error::config(format!("tau_c must lie in (0, 1), got {tau_c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub id: u32,
    pub class: usize,
    pub energy: EnergyScore,
    pub iteration: u64,
}

/// Outcome of gating one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: Vec<bool>,
    /// Argmax class of every row, selected or not.
    pub classes: Vec<usize>,
    pub energies: Vec<f64>,
    pub records: Vec<PseudoLabelRecord>,
}

impl Selection {
    pub fn selected_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn select<L: AsRef<[f64]>>(ids: &[u32], logits: &[L], cfg: &SelectionConfig, iteration: u64) -> Result<Selection> {
    cfg.validate()?;
    if ids.len() != logits.len() {
        return Err(Error::config("ids and logits differ in length"));
    }
    let mut out = Selection {
        mask: Vec::with_capacity(ids.len()),
        classes: Vec::with_capacity(ids.len()),
        energies: Vec::with_capacity(ids.len()),
        records: Vec::new(),
    };
    for (&id, row) in ids.iter().zip(logits) {
        let row = row.as_ref();
        let e = energy(row, cfg.temperature)?;
        let class = argmax(row);
        let keep = match cfg.baseline {
            BaselineMode::Off => e.value < cfg.tau_e,
            BaselineMode::Confidence { tau_c } => softmax(row)[class] > tau_c,
        };
        if keep {
            out.records.push(PseudoLabelRecord { id, class, energy: e, iteration });
        }
        out.mask.push(keep);
        out.classes.push(class);
        out.energies.push(e.value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub class: usize,
    pub selected: usize,
    pub correct: usize,
    /// Unlabeled samples whose hidden class is this one.
    pub population: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mean_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTable {
    pub rows: Vec<AuditRow>,
}

impl AuditTable {
    pub fn selected(&self) -> usize {
        self.rows.iter().map(|r| r.selected).sum()
    }

    /// Correct records over all records; `None` when nothing was selected.
    pub fn overall_precision(&self) -> Option<f64> {
        let sel = self.selected();
        (sel > 0).then(|| self.rows.iter().map(|r| r.correct).sum::<usize>() as f64 / sel as f64)
    }

    /// Mean recall over the given classes, counting undefined recall as 0.
    pub fn mean_recall(&self, classes: &[usize]) -> f64 {
        if classes.is_empty() {
            return 0.0;
        }
        classes.iter().map(|&c| self.rows[c].recall.unwrap_or(0.0)).sum::<f64>() / classes.len() as f64
    }
}

/// Per-class precision and recall of pseudo-labels against hidden labels.
/// Reporting only; nothing here feeds back into training.
pub fn audit(records: &[PseudoLabelRecord], hidden: &HiddenLabels, classes: usize) -> Result<AuditTable> {
    let population = hidden.class_counts(classes);
    let mut selected = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    let mut energy_sum = vec![0.0f64; classes];
    for r in records {
        let truth =
            hidden.label_of(r.id).ok_or_else(|| Error::data(format!("audit: sample {} has no hidden label", r.id)))?;
        if r.class >= classes {
            return Err(Error::data(format!("audit: record class {} >= {classes}", r.class)));
        }
        selected[r.class] += 1;
        energy_sum[r.class] += r.energy.value;
        if truth == r.class {
            correct[r.class] += 1;
        }
    }
    let rows = (0..classes)
        .map(|c| AuditRow {
            class: c,
            selected: selected[c],
            correct: correct[c],
            population: population[c],
            precision: (selected[c] > 0).then(|| correct[c] as f64 / selected[c] as f64),
            recall: (population[c] > 0).then(|| correct[c] as f64 / population[c] as f64),
            mean_energy: (selected[c] > 0).then(|| energy_sum[c] / selected[c] as f64),
        })
        .collect();
    Ok(AuditTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn zero_logits() {
        let e = energy(&[0.0; 10], 1.0).unwrap();
        assert!((e.value + 10f64.ln()).abs() < 1e-12);
        let e2 = energy(&[0.0; 10], 2.0).unwrap();
        assert!((e2.value + 2.0 * 10f64.ln()).abs() < 1e-12);
        assert!((e2.value + 4.605170).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(energy(&[f64::NAN, 1.0], 1.0).unwrap_err().exit_code(), 3);
        assert_eq!(energy(&[1.0], 0.0).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let e = energy(&[1000.0, 999.0], 1.0).unwrap();
        assert!((e.value + 1000.0 + (1.0 + (-1f64).exp()).ln()).abs() < 1e-9);
    }

    fn cfg(tau_e: f64) -> SelectionConfig {
        SelectionConfig { tau_e, temperature: 1.0, baseline: BaselineMode::Off }
    }

    /// Logits whose energy is exactly `e` (single class, T = 1).
    fn with_energy(e: f64) -> Vec<f64> {
        vec![-e, f64::MIN / 4.0]
    }

    #[test]
    fn strict_threshold() {
        let sel = select(&[1, 2], &[with_energy(-9.6), with_energy(-9.5)], &cfg(-9.5), 0).unwrap();
        assert_eq!(sel.mask, vec![true, false]);
        assert_eq!(sel.records.len(), 1);
        assert_eq!(sel.records[0].id, 1);
    }

    #[test]
    fn confidence_baseline_uses_softmax() {
        let c = SelectionConfig { tau_e: -100.0, temperature: 1.0, baseline: BaselineMode::Confidence { tau_c: 0.95 } };
        let sel = select(&[0, 1], &[vec![5.0, 0.0], vec![1.0, 0.0]], &c, 3).unwrap();
        assert_eq!(sel.mask, vec![true, false]);
        assert_eq!(sel.records[0].iteration, 3);
        let bad = SelectionConfig { baseline: BaselineMode::Confidence { tau_c: 1.0 }, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn audit_counts() {
        let hidden = HiddenLabels::new(BTreeMap::from([(1, 0), (2, 0), (3, 1), (4, 1), (5, 1)]));
        let e = EnergyScore { value: -10.0, temperature: 1.0 };
        let rec = |id, class| PseudoLabelRecord { id, class, energy: e, iteration: 0 };
        let empty = audit(&[], &hidden, 2).unwrap();
        assert!(empty.rows.iter().all(|r| r.precision.is_none()));
        assert_eq!(empty.rows[0].recall, Some(0.0));
        assert_eq!(empty.overall_precision(), None);

        let t = audit(&[rec(1, 0), rec(3, 0), rec(4, 1)], &hidden, 2).unwrap();
        assert_eq!(t.rows[0].precision, Some(0.5));
        assert_eq!(t.rows[0].recall, Some(0.5));
        assert_eq!(t.rows[1].precision, Some(1.0));
        assert!((t.rows[1].recall.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.overall_precision().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(audit(&[rec(99, 0)], &hidden, 2).is_err());
    }

    proptest! {
        #[test]
        fn bounds_hold(logits in proptest::collection::vec(-30.0f64..30.0, 1..12), t in 0.1f64..5.0) {
            let e = energy(&logits, t).unwrap().value;
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let k = logits.len() as f64;
            prop_assert!(e <= -m + 1e-9);
            prop_assert!(e >= -m - t * k.ln() - 1e-9);
        }

        #[test]
        fn strictly_decreasing_in_each_logit(logits in proptest::collection::vec(-10.0f64..10.0, 2..8), i in 0usize..8, d in 0.01f64..3.0) {
            let i = i % logits.len();
            let mut up = logits.clone();
            up[i] += d;
            prop_assert!(energy(&up, 1.0).unwrap().value < energy(&logits, 1.0).unwrap().value);
        }

        #[test]
        fn shift_behaviour_of_both_gates(logits in proptest::collection::vec(-10.0f64..10.0, 2..8), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let e0 = energy(&logits, 1.0).unwrap().value;
            let e1 = energy(&shifted, 1.0).unwrap().value;
            prop_assert!((e1 - (e0 - c)).abs() < 1e-9);
            let p0 = softmax(&logits);
            let p1 = softmax(&shifted);
            for (a, b) in p0.iter().zip(&p1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
