use serde::{Deserialize, Serialize};

use crate::augment::Augmenter;
use crate::data::{sample_batches, BatchPlan, LabeledSample, UnlabeledSample};
use crate::energy::{select, softmax, SelectionConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{self, ce_supervised_grad, margins, unsup_loss_selected_grad, ClassPriorEma};
use crate::model::{Architecture, EmaParams, ModelParams, Network, Upstream};
use crate::rng;
use crate::triplet::{self, add_into, MiningEntry, TripletStats};

use super::config::TrainConfig;
use super::schedule::lr_schedule;

/// Everything that changes from one step to the next.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub momentum: ModelParams,
    pub ema: EmaParams,
    pub prior: ClassPriorEma,
    pub iteration: u64,
    pub seed: u64,
}

/// Per-step numbers written to the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub l_s: f64,
    pub l_u: f64,
    pub l_ahtl: f64,
    pub total: f64,
    pub selected: usize,
    pub min_energy: f64,
    pub mean_energy: f64,
    pub triplets: TripletStats,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str =
        "step,lr,L_s,L_u,L_AHTL,total,selected,min_energy,mean_energy,triplets,active_fraction,mean_d_ap,mean_d_an";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{},{:.6},{:.6},{:.6}",
            self.step,
            self.lr,
            self.l_s,
            self.l_u,
            self.l_ahtl,
            self.total,
            self.selected,
            self.min_energy,
            self.mean_energy,
            self.triplets.count,
            self.triplets.active_fraction,
            self.triplets.mean_d_ap,
            self.triplets.mean_d_an
        )
    }
}

/// Fixed pieces of a training run: network, hyperparameters, augmentation.
pub struct Trainer {
    pub net: Network,
    pub config: TrainConfig,
    pub selection: SelectionConfig,
    pub augmenter: Augmenter,
    pub exec: Exec,
}

impl Trainer {
    pub fn new(config: TrainConfig, classes: usize, height: usize, width: usize, exec: Exec) -> Result<Self> {
        config.validate()?;
        let arch = Architecture { height, width, channels: config.channels.clone(), classes };
        let net = Network::new(arch)?;
        let selection = config.selection(classes);
        selection.validate()?;
        let augmenter = Augmenter::new(config.augment.clone(), height, width)?;
        Ok(Trainer { net, config, selection, augmenter, exec })
    }

    pub fn classes(&self) -> usize {
        self.net.classes()
    }

    pub fn plan(&self) -> BatchPlan {
        BatchPlan { labeled: self.config.batch_labeled, mu: self.config.mu }
    }

    pub fn init_state(&self) -> Result<TrainState> {
        let seed = self.config.seed;
        let params = self.net.init_params(rng::derive(&[seed, rng::tag::INIT]));
        Ok(TrainState {
            momentum: params.zeros_like(),
            ema: EmaParams::new(&params, self.config.delta_model)?,
            prior: ClassPriorEma::new(self.classes(), self.config.delta_prior)?,
            params,
            iteration: 0,
            seed,
        })
    }

    /// Draws this iteration's batches from the two splits and takes one step.
    pub fn step_on(
        &self,
        state: &mut TrainState,
        labeled: &[LabeledSample],
        unlabeled: &[UnlabeledSample],
    ) -> Result<StepMetrics> {
        let idx = sample_batches(labeled.len(), unlabeled.len(), &self.plan(), state.seed, state.iteration)?;
        let lb: Vec<&LabeledSample> = idx.labeled.iter().map(|&i| &labeled[i]).collect();
        let ub: Vec<&UnlabeledSample> = idx.unlabeled.iter().map(|&i| &unlabeled[i]).collect();
        self.train_step(state, &lb, &ub)
    }

    /// One optimization step on the given batches.
    pub fn train_step(
        &self,
        state: &mut TrainState,
        labeled: &[&LabeledSample],
        unlabeled: &[&UnlabeledSample],
    ) -> Result<StepMetrics> {
        let cfg = &self.config;
        let exec = self.exec;
        let it = state.iteration;
        let seed = state.seed;
        let aug = &self.augmenter;
        if labeled.is_empty() {
            return Err(Error::data("labeled batch is empty"));
        }

        // views; batch slots key the streams so repeated draws differ
        let weak_l: Vec<Vec<f32>> = exec.map_range(labeled.len(), |j| {
            aug.weak_labeled(labeled[j].id, &labeled[j].pixels, seed, rng::derive(&[it, j as u64]))
        });
        let pairs = exec.map_range(unlabeled.len(), |j| {
            aug.pair(unlabeled[j].id, &unlabeled[j].pixels, seed, rng::derive(&[it, j as u64]))
        });
        let nl = labeled.len();
        let nu = unlabeled.len();
        let mut weak_batch: Vec<&[f32]> = weak_l.iter().map(|v| v.as_slice()).collect();
        weak_batch.extend(pairs.iter().map(|p| p.weak.as_slice()));
        let (weak_out, weak_tapes) = self.net.forward_taped(&state.params, &weak_batch, exec)?;

        // supervised term
        let labels: Vec<usize> = labeled.iter().map(|s| s.label).collect();
        let l_logits: Vec<&[f64]> = weak_out[..nl].iter().map(|o| o.logits.as_slice()).collect();
        let (l_s, g_s) = ce_supervised_grad(&l_logits, &labels)?;
        let mut weak_up: Vec<Upstream> = (0..nl + nu).map(|_| Upstream { logits: vec![], embedding: vec![] }).collect();
        for (u, g) in weak_up.iter_mut().zip(g_s) {
            u.logits = g;
        }

        // gate, prior, margins
        let u_logits: Vec<&[f64]> = weak_out[nl..].iter().map(|o| o.logits.as_slice()).collect();
        let ids: Vec<u32> = unlabeled.iter().map(|s| s.id).collect();
        let sel = select(&ids, &u_logits, &self.selection, it)?;
        if !u_logits.is_empty() {
            let probs: Vec<Vec<f64>> = u_logits.iter().map(|l| softmax(l)).collect();
            state.prior.update(&probs)?;
        }
        let m = margins(&state.prior, cfg.lambda_margin);
        let (min_energy, mean_energy) = if sel.energies.is_empty() {
            (0.0, 0.0)
        } else {
            (
                sel.energies.iter().copied().fold(f64::INFINITY, f64::min),
                sel.energies.iter().sum::<f64>() / sel.energies.len() as f64,
            )
        };

        let rows: Vec<usize> = (0..nu).filter(|&j| sel.mask[j]).collect();
        let mut l_u = 0.0;
        let mut l_ahtl = 0.0;
        let mut tstats = TripletStats::default();
        let mut strong_tapes = Vec::new();
        let mut strong_up: Vec<Upstream> = Vec::new();
        if !rows.is_empty() {
            let strong_batch: Vec<&[f32]> = rows.iter().map(|&j| pairs[j].strong.as_slice()).collect();
            let (strong_out, tapes) = self.net.forward_taped(&state.params, &strong_batch, exec)?;
            strong_tapes = tapes;
            strong_up = (0..rows.len()).map(|_| Upstream { logits: vec![], embedding: vec![] }).collect();

            let selected: Vec<(&[f64], usize)> =
                rows.iter().zip(&strong_out).map(|(&j, o)| (o.logits.as_slice(), sel.classes[j])).collect();
            let (v, g_u) = unsup_loss_selected_grad(&selected, nu, &m)?;
            l_u = v;
            if cfg.lambda_u > 0.0 {
                for (u, g) in strong_up.iter_mut().zip(g_u) {
                    u.logits = g.into_iter().map(|x| cfg.lambda_u * x).collect();
                }
            }

            // metric term: anchors from weak views, positives and negatives from strong views
            let prep = |e: &[f64]| if cfg.normalize_embeddings { triplet::l2_normalize(e) } else { e.to_vec() };
            let weak_emb: Vec<Vec<f64>> = rows.iter().map(|&j| prep(&weak_out[nl + j].embedding)).collect();
            let strong_emb: Vec<Vec<f64>> = strong_out.iter().map(|o| prep(&o.embedding)).collect();
            let entries: Vec<MiningEntry> = rows
                .iter()
                .enumerate()
                .map(|(s, &j)| MiningEntry {
                    key: j as u64,
                    class: sel.classes[j],
                    weak: &weak_emb[s],
                    strong: &strong_emb[s],
                })
                .collect();
            let batch = triplet::mine_hard(&entries, exec);
            if !batch.is_empty() {
                let w = triplet::weights(&batch);
                let (v, grads) = triplet::ahtl_grad(&batch, &w, cfg.triplet_margin)?;
                l_ahtl = v;
                tstats = triplet::stats(&batch, &grads);
                if cfg.lambda_ahtl > 0.0 {
                    let d = self.net.embed_dim();
                    let mut g_weak = vec![vec![0.0; d]; rows.len()];
                    let mut g_strong = vec![vec![0.0; d]; rows.len()];
                    for (t, g) in batch.triplets.iter().zip(&grads) {
                        if !g.active {
                            continue;
                        }
                        add_into(&mut g_weak[t.anchor], &g.anchor);
                        add_into(&mut g_strong[t.positive], &g.positive);
                        add_into(&mut g_strong[t.negative], &g.negative);
                    }
                    let back = |raw: &[f64], g: Vec<f64>| -> Vec<f64> {
                        let g = if cfg.normalize_embeddings { triplet::l2_normalize_backward(raw, &g) } else { g };
                        g.into_iter().map(|x| cfg.lambda_ahtl * x).collect()
                    };
                    for (s, &j) in rows.iter().enumerate() {
                        if g_weak[s].iter().any(|&x| x != 0.0) {
                            weak_up[nl + j].embedding =
                                back(&weak_out[nl + j].embedding, std::mem::take(&mut g_weak[s]));
                        }
                        if g_strong[s].iter().any(|&x| x != 0.0) {
                            strong_up[s].embedding = back(&strong_out[s].embedding, std::mem::take(&mut g_strong[s]));
                        }
                    }
                }
            }
        }
        let lb = losses::total(l_s, l_u, l_ahtl, cfg.lambda_u, cfg.lambda_ahtl)?;

        let mut items: Vec<_> = weak_tapes.iter().zip(&weak_up).collect();
        items.extend(strong_tapes.iter().zip(&strong_up));
        let mut grads = self.net.backward(&state.params, &items, exec)?;
        grads.ensure_finite("gradient of total loss")?;

        let lr = lr_schedule(it, cfg.iterations, cfg.lr, cfg.schedule);
        apply_sgd(&mut state.params, &mut state.momentum, &mut grads, lr, cfg.momentum, cfg.weight_decay);
        state.params.ensure_finite("parameters after update")?;
        state.ema.update(&state.params)?;
        state.iteration += 1;

        Ok(StepMetrics {
            step: it,
            lr,
            l_s: lb.l_s,
            l_u: lb.l_u,
            l_ahtl: lb.l_ahtl,
            total: lb.total,
            selected: rows.len(),
            min_energy,
            mean_energy,
            triplets: tstats,
        })
    }
}

/// `g += wd * theta` on weight tensors, `v = mu * v + g`, `theta -= lr * v`.
pub fn apply_sgd(
    params: &mut ModelParams,
    velocity: &mut ModelParams,
    grads: &mut ModelParams,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, v), g) in params.tensors_mut().iter_mut().zip(velocity.tensors_mut()).zip(grads.tensors_mut()) {
        let decay = if p.name().ends_with("weight") { weight_decay } else { 0.0 };
        for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data_mut()) {
            *gv += decay * *pv;
            *vv = momentum * *vv + *gv;
            *pv -= lr * *vv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    #[test]
    fn sgd_arithmetic() {
        let mk = |w: f64, b: f64| {
            ModelParams::new(vec![
                Tensor::from_vec("head.weight", &[1], vec![w]).unwrap(),
                Tensor::from_vec("head.bias", &[1], vec![b]).unwrap(),
            ])
            .unwrap()
        };
        let mut p = mk(1.0, 1.0);
        let mut v = mk(0.5, 0.5);
        let mut g = mk(2.0, 2.0);
        apply_sgd(&mut p, &mut v, &mut g, 0.1, 0.9, 0.01);
        // weight: g = 2.01, v = 0.45 + 2.01 = 2.46, p = 1 - 0.246
        assert!((p.tensors()[0].data()[0] - 0.754).abs() < 1e-12);
        // bias: no decay, v = 2.45
        assert!((p.tensors()[1].data()[0] - 0.755).abs() < 1e-12);
    }
}
