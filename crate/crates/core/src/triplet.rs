//! Batch-hard triplet mining over pseudo-labeled samples and the adaptive
//! hard triplet loss.
//!
//! Mining compares weak-view embeddings: the hardest positive is the
//! same-class peer farthest from the anchor, the hardest negative the
//! other-class sample nearest to it (squared Euclidean distance, ties to the
//! lowest key). The loss then measures the anchor's weak embedding against
//! the strong-view embeddings of the chosen positive and negative, with
//! per-triplet softmax weights treated as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::net::{ForwardOutput, Objective, Upstream};

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One pseudo-labeled sample offered to the miner. `key` must be unique
/// within a batch and orders ties.
#[derive(Debug, Clone, Copy)]
pub struct MiningEntry<'a> {
    pub key: u64,
    pub class: usize,
    pub weak: &'a [f64],
    pub strong: &'a [f64],
}

/// Indices into the mined entry list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub class: usize,
}

/// Mined triplets with their embeddings: anchor from the weak view, positive
/// and negative from the strong view.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Re-reads embeddings for fixed triplet indices.
    pub fn gather<W: AsRef<[f64]>, S: AsRef<[f64]>>(triplets: &[Triplet], weak: &[W], strong: &[S]) -> Self {
        TripletBatch {
            triplets: triplets.to_vec(),
            anchors: triplets.iter().map(|t| weak[t.anchor].as_ref().to_vec()).collect(),
            positives: triplets.iter().map(|t| strong[t.positive].as_ref().to_vec()).collect(),
            negatives: triplets.iter().map(|t| strong[t.negative].as_ref().to_vec()).collect(),
        }
    }

    pub fn positive_distances(&self) -> Vec<f64> {
        self.anchors.iter().zip(&self.positives).map(|(a, p)| squared_distance(a, p)).collect()
    }

    pub fn negative_distances(&self) -> Vec<f64> {
        self.anchors.iter().zip(&self.negatives).map(|(a, n)| squared_distance(a, n)).collect()
    }
}

fn better(candidate: (f64, u64), best: Option<(f64, u64)>, farther: bool) -> bool {
    match best {
        None => true,
        Some((d, k)) => {
            if candidate.0 == d {
                candidate.1 < k
            } else if farther {
                candidate.0 > d
            } else {
                candidate.0 < d
            }
        }
    }
}

/// Hardest positive and negative for every anchor that has at least one
/// same-class peer and one other-class sample. Anchors are visited in entry
/// order; anchors failing either condition are skipped.
pub fn mine_hard(entries: &[MiningEntry<'_>], exec: Exec) -> TripletBatch {
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        if e.class >= by_class.len() {
            by_class.resize(e.class + 1, Vec::new());
        }
        by_class[e.class].push(i);
    }
    let picks = exec.map_range(entries.len(), |i| {
        let a = &entries[i];
        let mut pos: Option<(f64, u64)> = None;
        let mut pos_idx = 0;
        for &j in &by_class[a.class] {
            if j == i {
                continue;
            }
            let cand = (squared_distance(a.weak, entries[j].weak), entries[j].key);
            if better(cand, pos, true) {
                pos = Some(cand);
                pos_idx = j;
            }
        }
        pos?;
        let mut neg: Option<(f64, u64)> = None;
        let mut neg_idx = 0;
        for (c, members) in by_class.iter().enumerate() {
            if c == a.class {
                continue;
            }
            for &j in members {
                let cand = (squared_distance(a.weak, entries[j].weak), entries[j].key);
                if better(cand, neg, false) {
                    neg = Some(cand);
                    neg_idx = j;
                }
            }
        }
        neg?;
        Some(Triplet { anchor: i, positive: pos_idx, negative: neg_idx, class: a.class })
    });
    let triplets: Vec<Triplet> = picks.into_iter().flatten().collect();
    let weak: Vec<&[f64]> = entries.iter().map(|e| e.weak).collect();
    let strong: Vec<&[f64]> = entries.iter().map(|e| e.strong).collect();
    TripletBatch::gather(&triplets, &weak, &strong)
}

/// Per-triplet weights: softmax of anchor-positive distances and softmax of
/// negated anchor-negative distances, both over the batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TripletWeights {
    pub w_p: Vec<f64>,
    pub w_n: Vec<f64>,
}

fn softmax_vec(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn weights(batch: &TripletBatch) -> TripletWeights {
    if batch.is_empty() {
        return TripletWeights::default();
    }
    let dn: Vec<f64> = batch.negative_distances().into_iter().map(|d| -d).collect();
    TripletWeights { w_p: softmax_vec(&batch.positive_distances()), w_n: softmax_vec(&dn) }
}

fn check_margin(margin: f64) -> Result<()> {
    if margin > 0.0 && margin.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("triplet margin must be positive, got {margin}")))
    }
}

/// `sum_i max(w_p,i * d_ap,i - w_n,i * d_an,i + margin, 0)`.
pub fn ahtl(batch: &TripletBatch, w: &TripletWeights, margin: f64) -> Result<f64> {
    ahtl_grad(batch, w, margin).map(|(v, _)| v)
}

/// Gradients of one triplet's hinge with respect to its three embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub active: bool,
}

pub fn ahtl_grad(batch: &TripletBatch, w: &TripletWeights, margin: f64) -> Result<(f64, Vec<TripletGrad>)> {
    check_margin(margin)?;
    if w.w_p.len() != batch.len() || w.w_n.len() != batch.len() {
        return Err(Error::config("triplet weights are not aligned with the batch"));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let (a, p, n) = (&batch.anchors[i], &batch.positives[i], &batch.negatives[i]);
        let d = a.len();
        let h = w.w_p[i] * squared_distance(a, p) - w.w_n[i] * squared_distance(a, n) + margin;
        if h > 0.0 {
            total += h;
            let gp: Vec<f64> = (0..d).map(|k| -2.0 * w.w_p[i] * (a[k] - p[k])).collect();
            let gn: Vec<f64> = (0..d).map(|k| 2.0 * w.w_n[i] * (a[k] - n[k])).collect();
            let ga: Vec<f64> = (0..d).map(|k| -gp[k] - gn[k]).collect();
            grads.push(TripletGrad { anchor: ga, positive: gp, negative: gn, active: true });
        } else {
            grads.push(TripletGrad {
                anchor: vec![0.0; d],
                positive: vec![0.0; d],
                negative: vec![0.0; d],
                active: false,
            });
        }
    }
    Ok((total, grads))
}

/// Summary numbers for the metrics file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TripletStats {
    pub count: usize,
    pub active_fraction: f64,
    pub mean_d_ap: f64,
    pub mean_d_an: f64,
}

pub fn stats(batch: &TripletBatch, grads: &[TripletGrad]) -> TripletStats {
    let n = batch.len();
    if n == 0 {
        return TripletStats::default();
    }
    TripletStats {
        count: n,
        active_fraction: grads.iter().filter(|g| g.active).count() as f64 / n as f64,
        mean_d_ap: batch.positive_distances().iter().sum::<f64>() / n as f64,
        mean_d_an: batch.negative_distances().iter().sum::<f64>() / n as f64,
    }
}

/// `e / |e|` (zero vectors pass through unchanged).
pub fn l2_normalize(e: &[f64]) -> Vec<f64> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        e.to_vec()
    } else {
        e.iter().map(|v| v / norm).collect()
    }
}

/// Pulls a gradient taken at `l2_normalize(e)` back to `e`.
pub fn l2_normalize_backward(e: &[f64], grad: &[f64]) -> Vec<f64> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return grad.to_vec();
    }
    let u: Vec<f64> = e.iter().map(|v| v / norm).collect();
    let dot: f64 = u.iter().zip(grad).map(|(a, b)| a * b).sum();
    grad.iter().zip(&u).map(|(g, ui)| (g - dot * ui) / norm).collect()
}

/// AHTL as a network objective. The first `n` outputs are weak views, the
/// next `n` the strong views of the same samples. Triplet indices and weights
/// are frozen inputs.
pub struct AhtlObjective {
    pub n: usize,
    pub triplets: Vec<Triplet>,
    pub weights: TripletWeights,
    pub margin: f64,
}

impl AhtlObjective {
    fn batch(&self, outputs: &[ForwardOutput]) -> TripletBatch {
        let weak: Vec<&[f64]> = outputs[..self.n].iter().map(|o| o.embedding.as_slice()).collect();
        let strong: Vec<&[f64]> = outputs[self.n..2 * self.n].iter().map(|o| o.embedding.as_slice()).collect();
        TripletBatch::gather(&self.triplets, &weak, &strong)
    }

    /// Which hinges are active.
    pub fn hinge_pattern(&self, outputs: &[ForwardOutput]) -> Result<Vec<bool>> {
        let (_, grads) = ahtl_grad(&self.batch(outputs), &self.weights, self.margin)?;
        Ok(grads.iter().map(|g| g.active).collect())
    }
}

impl Objective for AhtlObjective {
    fn name(&self) -> &str {
        "L_AHTL"
    }

    fn evaluate(&self, outputs: &[ForwardOutput]) -> Result<(f64, Vec<Upstream>)> {
        if outputs.len() != 2 * self.n {
            return Err(Error::config("AHTL objective expects weak and strong views of every sample"));
        }
        let (v, grads) = ahtl_grad(&self.batch(outputs), &self.weights, self.margin)?;
        let d = outputs.first().map_or(0, |o| o.embedding.len());
        let mut up: Vec<Upstream> =
            (0..outputs.len()).map(|_| Upstream { logits: vec![], embedding: vec![0.0; d] }).collect();
        for (t, g) in self.triplets.iter().zip(&grads) {
            add_into(&mut up[t.anchor].embedding, &g.anchor);
            add_into(&mut up[self.n + t.positive].embedding, &g.positive);
            add_into(&mut up[self.n + t.negative].embedding, &g.negative);
        }
        Ok((v, up))
    }

    fn region(&self, outputs: &[ForwardOutput]) -> Result<u64> {
        let pattern = self.hinge_pattern(outputs)?;
        Ok(pattern.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &a| (h ^ (a as u64 + 1)).wrapping_mul(0x0100_0000_01b3)))
    }
}

pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_of(a: &[f64], p: &[f64], n: &[f64]) -> TripletBatch {
        TripletBatch {
            triplets: vec![Triplet { anchor: 0, positive: 1, negative: 2, class: 0 }],
            anchors: vec![a.to_vec()],
            positives: vec![p.to_vec()],
            negatives: vec![n.to_vec()],
        }
    }

    #[test]
    fn picks_farthest_positive_and_nearest_negative() {
        let emb = [vec![0.0], vec![1.0], vec![3f64.sqrt()], vec![2f64.sqrt()], vec![-(0.5f64.sqrt())]];
        let classes = [0, 0, 0, 1, 1];
        let entries: Vec<MiningEntry> =
            (0..5).map(|i| MiningEntry { key: i as u64, class: classes[i], weak: &emb[i], strong: &emb[i] }).collect();
        let b = mine_hard(&entries, Exec::Sequential);
        let t0 = b.triplets.iter().find(|t| t.anchor == 0).unwrap();
        // same-class squared distances {1, 3}; other-class {2, 0.5}
        assert_eq!(t0.positive, 2);
        assert_eq!(t0.negative, 4);
    }

    #[test]
    fn ties_go_to_lowest_key_and_skips_happen() {
        let emb = [vec![0.0], vec![1.0], vec![-1.0], vec![5.0]];
        let entries = [
            MiningEntry { key: 10, class: 0, weak: &emb[0], strong: &emb[0] },
            MiningEntry { key: 30, class: 0, weak: &emb[1], strong: &emb[1] },
            MiningEntry { key: 20, class: 0, weak: &emb[2], strong: &emb[2] },
            MiningEntry { key: 40, class: 1, weak: &emb[3], strong: &emb[3] },
        ];
        let b = mine_hard(&entries, Exec::Sequential);
        let t0 = b.triplets.iter().find(|t| t.anchor == 0).unwrap();
        assert_eq!(t0.positive, 2);
        // singleton class 1 cannot anchor
        assert!(b.triplets.iter().all(|t| t.anchor != 3));
        let single = [entries[0], entries[1]];
        assert!(mine_hard(&single, Exec::Sequential).is_empty());
    }

    #[test]
    fn weight_cases() {
        let mut b = batch_of(&[0.0], &[1.0], &[0.0]);
        b.triplets.push(b.triplets[0]);
        b.anchors.push(vec![0.0]);
        b.positives.push(vec![-1.0]);
        b.negatives.push(vec![20f64.sqrt()]);
        let w = weights(&b);
        assert_eq!(w.w_p, vec![0.5, 0.5]);
        assert!((w.w_n[0] - 1.0).abs() < 1e-8);
        assert!((w.w_n[1] - (-20f64).exp() / (1.0 + (-20f64).exp())).abs() < 1e-15);
        let one = weights(&batch_of(&[0.0], &[3.0], &[1.0]));
        assert_eq!(one.w_p, vec![1.0]);
        assert_eq!(one.w_n, vec![1.0]);
        assert_eq!(weights(&TripletBatch::default()), TripletWeights::default());
    }

    #[test]
    fn hinge_values() {
        let unit = TripletWeights { w_p: vec![1.0], w_n: vec![1.0] };
        assert_eq!(ahtl(&batch_of(&[0.0], &[0.0], &[1.0]), &unit, 0.3).unwrap(), 0.0);
        assert!((ahtl(&batch_of(&[0.0], &[1.0], &[0.0]), &unit, 0.3).unwrap() - 1.3).abs() < 1e-15);
        assert_eq!(ahtl(&batch_of(&[0.0], &[1.0], &[0.0]), &unit, 0.0).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn normalize_backward_matches_finite_difference() {
        let e = vec![0.3, -1.2, 2.0];
        let g = vec![0.7, 0.1, -0.4];
        let back = l2_normalize_backward(&e, &g);
        for k in 0..3 {
            let h = 1e-6;
            let mut up = e.clone();
            up[k] += h;
            let mut dn = e.clone();
            dn[k] -= h;
            let f = |x: &[f64]| l2_normalize(x).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - back[k]).abs() < 1e-8);
        }
    }
}
