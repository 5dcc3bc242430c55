//! Supervised cross-entropy, the class-prior EMA with adaptive margins, the
//! gated adaptive-margin unsupervised loss and the weighted total.
//!
//! Every loss comes with its gradient with respect to the logits it reads.
//! Pseudo-labels, gates, priors and margins are plain numbers here: no
//! gradient flows through them.

use serde::{Deserialize, Serialize};

use crate::energy::{log_sum_exp, softmax};
use crate::error::{Error, Result};
use crate::model::net::{ForwardOutput, Objective, Upstream};

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

fn cross_entropy_grad(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut g = softmax(logits);
    g[target] -= 1.0;
    (cross_entropy(logits, target), g)
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        Err(Error::data(format!("label {label} outside [0, {classes})")))
    } else {
        Ok(())
    }
}

/// Mean cross-entropy over a labeled batch.
pub fn ce_supervised<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<f64> {
    ce_supervised_grad(logits, labels).map(|(v, _)| v)
}

/// Mean cross-entropy and its gradient with respect to each logit row.
pub fn ce_supervised_grad<L: AsRef<[f64]>>(logits: &[L], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.is_empty() {
        return Err(Error::data("supervised loss on an empty batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::config("logits and labels differ in length"));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &y) in logits.iter().zip(labels) {
        let row = row.as_ref();
        check_label(y, row.len())?;
        let (l, mut g) = cross_entropy_grad(row, y);
        total += l;
        g.iter_mut().for_each(|v| *v /= n);
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// Exponential moving average of the model's mean predicted class
/// distribution on unlabeled weak views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriorEma {
    p_hat: Vec<f64>,
    decay: f64,
}

/// Entries are floored here before renormalising so margins stay finite.
const PRIOR_FLOOR: f64 = 1e-12;

impl ClassPriorEma {
    /// Uniform `1/K` start.
    pub fn new(classes: usize, decay: f64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("class prior needs at least two classes"));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::config(format!("prior decay must lie in [0, 1], got {decay}")));
        }
        Ok(ClassPriorEma { p_hat: vec![1.0 / classes as f64; classes], decay })
    }

    pub fn from_values(p_hat: Vec<f64>, decay: f64) -> Result<Self> {
        let mut prior = ClassPriorEma::new(p_hat.len(), decay)?;
        if p_hat.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::data("class prior entries must be positive"));
        }
        let s: f64 = p_hat.iter().sum();
        prior.p_hat = p_hat.into_iter().map(|p| p / s).collect();
        Ok(prior)
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `p = decay * p + (1 - decay) * mean(rows)`, renormalised. An empty
    /// batch leaves the prior unchanged.
    pub fn update<R: AsRef<[f64]>>(&mut self, probs: &[R]) -> Result<()> {
        if probs.is_empty() {
            return Ok(());
        }
        let k = self.p_hat.len();
        let mut mean = vec![0.0; k];
        for row in probs {
            let row = row.as_ref();
            if row.len() != k {
                return Err(Error::config(format!("prior update row has {} entries, expected {k}", row.len())));
            }
            for (m, &p) in mean.iter_mut().zip(row) {
                *m += p;
            }
        }
        let n = probs.len() as f64;
        for (p, m) in self.p_hat.iter_mut().zip(&mean) {
            *p = (self.decay * *p + (1.0 - self.decay) * (m / n)).max(PRIOR_FLOOR);
        }
        let s: f64 = self.p_hat.iter().sum();
        self.p_hat.iter_mut().for_each(|p| *p /= s);
        Ok(())
    }
}

/// Per-class margins `m_j = scale * ln(1 / p_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginVector {
    pub m: Vec<f64>,
    pub scale: f64,
}

pub fn margins(prior: &ClassPriorEma, scale: f64) -> MarginVector {
    MarginVector { m: prior.p_hat().iter().map(|&p| scale * (1.0 / p).ln()).collect(), scale }
}

fn shifted(logits: &[f64], m: &MarginVector) -> Vec<f64> {
    logits.iter().zip(&m.m).map(|(f, mj)| f - mj).collect()
}

/// Cross-entropy on margin-shifted logits `f - m`.
pub fn aml(logits: &[f64], target: usize, m: &MarginVector) -> f64 {
    cross_entropy(&shifted(logits, m), target)
}

/// [`aml`] and its gradient `softmax(f - m) - onehot(target)`.
pub fn aml_grad(logits: &[f64], target: usize, m: &MarginVector) -> (f64, Vec<f64>) {
    cross_entropy_grad(&shifted(logits, m), target)
}

/// Gated adaptive-margin loss from the selected rows only:
/// `(1 / batch_size) * sum aml(strong_i, class_i)`. `batch_size` is the full
/// unlabeled batch; rows outside the gate contribute nothing.
pub fn unsup_loss_selected_grad(
    selected: &[(&[f64], usize)],
    batch_size: usize,
    m: &MarginVector,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if batch_size == 0 || selected.is_empty() {
        return Ok((0.0, vec![Vec::new(); selected.len()]));
    }
    let n = batch_size as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(selected.len());
    for &(row, class) in selected {
        check_label(class, row.len())?;
        let (v, mut g) = aml_grad(row, class, m);
        total += v;
        g.iter_mut().for_each(|x| *x /= n);
        grads.push(g);
    }
    Ok((total / n, grads))
}

/// Gated loss over a whole unlabeled batch; `mask`, `pseudo` and the logit
/// rows are aligned.
pub fn unsup_loss<L: AsRef<[f64]>>(
    strong_logits: &[L],
    pseudo: &[usize],
    mask: &[bool],
    m: &MarginVector,
) -> Result<f64> {
    if strong_logits.len() != mask.len() || pseudo.len() != mask.len() {
        return Err(Error::config("unsupervised loss inputs differ in length"));
    }
    let selected: Vec<(&[f64], usize)> = strong_logits
        .iter()
        .zip(pseudo)
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|((row, &c), _)| (row.as_ref(), c))
        .collect();
    unsup_loss_selected_grad(&selected, mask.len(), m).map(|(v, _)| v)
}

/// The three loss terms, their weights and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_u: f64,
    pub l_ahtl: f64,
    pub total: f64,
    pub lambda_u: f64,
    pub lambda_ahtl: f64,
}

/// `L = L_s + lambda_u * L_u + lambda_ahtl * L_ahtl`.
pub fn total(l_s: f64, l_u: f64, l_ahtl: f64, lambda_u: f64, lambda_ahtl: f64) -> Result<LossBreakdown> {
    for (name, v) in [("L_s", l_s), ("L_u", l_u), ("L_AHTL", l_ahtl)] {
        if !v.is_finite() {
            return Err(Error::numeric(name, format!("loss term = {v}")));
        }
    }
    Ok(LossBreakdown { l_s, l_u, l_ahtl, total: l_s + lambda_u * l_u + lambda_ahtl * l_ahtl, lambda_u, lambda_ahtl })
}

/// Supervised cross-entropy as a network objective.
pub struct SupervisedObjective {
    pub labels: Vec<usize>,
}

impl Objective for SupervisedObjective {
    fn name(&self) -> &str {
        "L_s"
    }

    fn evaluate(&self, outputs: &[ForwardOutput]) -> Result<(f64, Vec<Upstream>)> {
        let logits: Vec<&[f64]> = outputs.iter().map(|o| o.logits.as_slice()).collect();
        let (v, g) = ce_supervised_grad(&logits, &self.labels)?;
        Ok((v, g.into_iter().map(|logits| Upstream { logits, embedding: vec![] }).collect()))
    }
}

/// Gated adaptive-margin loss as a network objective over strong views. The
/// gate and pseudo-classes are fixed inputs.
pub struct UnsupervisedObjective {
    pub pseudo: Vec<usize>,
    pub mask: Vec<bool>,
    pub margins: MarginVector,
}

impl Objective for UnsupervisedObjective {
    fn name(&self) -> &str {
        "L_u"
    }

    fn evaluate(&self, outputs: &[ForwardOutput]) -> Result<(f64, Vec<Upstream>)> {
        if outputs.len() != self.mask.len() || self.pseudo.len() != self.mask.len() {
            return Err(Error::config("unsupervised objective inputs differ in length"));
        }
        let rows: Vec<usize> = (0..outputs.len()).filter(|&i| self.mask[i]).collect();
        let selected: Vec<(&[f64], usize)> =
            rows.iter().map(|&i| (outputs[i].logits.as_slice(), self.pseudo[i])).collect();
        let (v, grads) = unsup_loss_selected_grad(&selected, outputs.len(), &self.margins)?;
        let mut up = vec![Upstream::default(); outputs.len()];
        for (&i, g) in rows.iter().zip(grads) {
            up[i].logits = g;
        }
        Ok((v, up))
    }
}
