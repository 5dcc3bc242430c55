//! Evaluation, confusion matrices, pseudo-label audits, reports and sweeps.

pub mod confusion;
pub mod json;
pub mod summary;
pub mod sweep;

pub use confusion::{confusion, ConfusionMatrix};
pub use json::to_fixed_json;
pub use summary::{mean_recall, pseudo_point, smallest_classes, summarize, MetricsReport, PseudoPoint};
pub use sweep::{default_axis, run_sweep, SweepRow, SweepSpec};

use serde::{Deserialize, Serialize};

use crate::data::{HiddenLabels, LabeledSample, UnlabeledSample};
use crate::energy::{argmax, audit, select, AuditTable, SelectionConfig};
use crate::error::Result;
use crate::exec::Exec;
use crate::model::{ModelParams, Network};

const EVAL_CHUNK: usize = 64;

/// Raw logits for un-augmented images, in chunks to bound memory.
pub fn logits_of<I: AsRef<[f32]> + Sync>(
    net: &Network,
    params: &ModelParams,
    images: &[I],
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        out.extend(net.forward(params, chunk, exec)?.into_iter().map(|o| o.logits));
    }
    Ok(out)
}

/// Test-set confusion matrix of `params`.
pub fn evaluate(net: &Network, params: &ModelParams, test: &[LabeledSample], exec: Exec) -> Result<ConfusionMatrix> {
    let logits = logits_of(net, params, test, exec)?;
    let preds: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    confusion(&preds, &labels, net.classes())
}

/// Gates the whole unlabeled pool (no augmentation) and scores the result
/// against the hidden labels.
pub fn audit_pool(
    net: &Network,
    params: &ModelParams,
    unlabeled: &[UnlabeledSample],
    hidden: &HiddenLabels,
    selection: &SelectionConfig,
    iteration: u64,
    exec: Exec,
) -> Result<AuditTable> {
    let logits = logits_of(net, params, unlabeled, exec)?;
    let ids: Vec<u32> = unlabeled.iter().map(|s| s.id).collect();
    let sel = select(&ids, &logits, selection, iteration)?;
    audit(&sel.records, hidden, net.classes())
}

/// One line of the audit JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLine {
    pub iteration: u64,
    pub class: usize,
    pub selected: usize,
    pub correct: usize,
    pub population: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mean_energy: Option<f64>,
}

pub fn audit_lines(iteration: u64, table: &AuditTable) -> Vec<AuditLine> {
    table
        .rows
        .iter()
        .map(|r| AuditLine {
            iteration,
            class: r.class,
            selected: r.selected,
            correct: r.correct,
            population: r.population,
            precision: r.precision,
            recall: r.recall,
            mean_energy: r.mean_energy,
        })
        .collect()
}
