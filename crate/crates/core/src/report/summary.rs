use serde::{Deserialize, Serialize};

use crate::energy::AuditTable;

use super::confusion::ConfusionMatrix;

/// Pseudo-label quality at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPoint {
    pub iteration: u64,
    pub selected: usize,
    pub precision: Option<f64>,
    /// Correct selections over the whole unlabeled pool.
    pub recall: f64,
    pub tail_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: usize,
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub head_classes: Vec<usize>,
    pub tail_classes: Vec<usize>,
    pub head_recall: f64,
    pub tail_recall: f64,
    pub pseudo: Vec<PseudoPoint>,
    pub fingerprint: String,
    pub confusion: ConfusionMatrix,
}

/// The `n` classes with the fewest training samples; ties go to the higher
/// class index. Returned in ascending index order.
pub fn smallest_classes(train_counts: &[usize], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..train_counts.len()).collect();
    order.sort_by(|&a, &b| train_counts[a].cmp(&train_counts[b]).then(b.cmp(&a)));
    let mut out: Vec<usize> = order.into_iter().take(n).collect();
    out.sort_unstable();
    out
}

/// Mean of the defined recalls among `classes` (0 when none is defined).
pub fn mean_recall(recalls: &[Option<f64>], classes: &[usize]) -> f64 {
    let vals: Vec<f64> = classes.iter().filter_map(|&k| recalls[k]).collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn pseudo_point(iteration: u64, table: &AuditTable, tail: &[usize]) -> PseudoPoint {
    let population: usize = table.rows.iter().map(|r| r.population).sum();
    let correct: usize = table.rows.iter().map(|r| r.correct).sum();
    PseudoPoint {
        iteration,
        selected: table.selected(),
        precision: table.overall_precision(),
        recall: if population == 0 { 0.0 } else { correct as f64 / population as f64 },
        tail_recall: table.mean_recall(tail),
    }
}

/// Assembles the report. The tail is the `ceil(K / 2)` smallest training
/// classes; the rest form the head.
pub fn summarize(
    confusion: &ConfusionMatrix,
    train_counts: &[usize],
    audits: &[(u64, AuditTable)],
    fingerprint: &str,
) -> MetricsReport {
    let k = confusion.classes();
    let tail = smallest_classes(train_counts, k.div_ceil(2));
    let head: Vec<usize> = (0..k).filter(|c| !tail.contains(c)).collect();
    let recalls = confusion.per_class_recall();
    MetricsReport {
        classes: k,
        accuracy: confusion.accuracy(),
        head_recall: mean_recall(&recalls, &head),
        tail_recall: mean_recall(&recalls, &tail),
        per_class_recall: recalls,
        head_classes: head,
        tail_classes: tail.clone(),
        pseudo: audits.iter().map(|(it, t)| pseudo_point(*it, t, &tail)).collect(),
        fingerprint: fingerprint.to_string(),
        confusion: confusion.clone(),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl MetricsReport {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("accuracy      {:>8.2}\n", 100.0 * self.accuracy));
        s.push_str(&format!("head recall   {:>8.2}  classes {:?}\n", 100.0 * self.head_recall, self.head_classes));
        s.push_str(&format!("tail recall   {:>8.2}  classes {:?}\n", 100.0 * self.tail_recall, self.tail_classes));
        s.push_str("\nclass    recall  predicted\n");
        for (k, row) in self.confusion.counts().iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
            s.push_str(&format!("{k:>5}  {:>8}  {}\n", pct(self.per_class_recall[k]), cells.join("")));
        }
        if !self.pseudo.is_empty() {
            s.push_str("\niteration  selected  precision  recall  tail\n");
            for p in &self.pseudo {
                s.push_str(&format!(
                    "{:>9}  {:>8}  {:>9}  {:>6.2}  {:>5.2}\n",
                    p.iteration,
                    p.selected,
                    pct(p.precision),
                    100.0 * p.recall,
                    100.0 * p.tail_recall
                ));
            }
        }
        s.push_str(&format!("\nconfig {}\n", self.fingerprint));
        s
    }
}
