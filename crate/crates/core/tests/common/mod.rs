#![allow(dead_code)]

use ltssl_core::energy::{argmax, energy};
use ltssl_core::losses::{margins, ClassPriorEma, SupervisedObjective, UnsupervisedObjective};
use ltssl_core::model::gradcheck::NetworkLoss;
use ltssl_core::model::{grad_check, Architecture, GradCheckOptions, GradCheckReport, ModelParams, Network, Objective};
use ltssl_core::triplet::{mine_hard, weights, AhtlObjective, MiningEntry};
use ltssl_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 6;

/// Two conv blocks of 3 and 4 channels on 6x6 inputs: 142 conv parameters
/// plus a 4 x K head.
pub fn tiny_net(classes: usize) -> Network {
    Network::new(Architecture { height: SIDE, width: SIDE, channels: vec![3, 4], classes }).unwrap()
}

pub fn images(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..SIDE * SIDE).map(|_| r.random::<f32>()).collect()).collect()
}

pub struct Instance {
    pub net: Network,
    pub params: ModelParams,
    pub images: Vec<Vec<f32>>,
    pub objective: Box<dyn Objective>,
}

impl Instance {
    pub fn check(&self) -> GradCheckReport {
        let eval = NetworkLoss { net: &self.net, images: self.images.clone(), objective: self.objective.as_ref() };
        grad_check(&eval, &self.params, &GradCheckOptions::default()).unwrap()
    }
}

pub fn supervised(seed: u64) -> Instance {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let k = r.random_range(2..=5);
    let net = tiny_net(k);
    let params = net.init_params(seed);
    let n = r.random_range(2..=6);
    let labels = (0..n).map(|_| r.random_range(0..k)).collect();
    Instance { images: images(&mut r, n), net, params, objective: Box::new(SupervisedObjective { labels }) }
}

/// Gate and pseudo-classes come from weak views at the base parameters; the
/// loss is taken on separate strong views.
pub fn unsupervised(seed: u64) -> Instance {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let k = r.random_range(2..=5);
    let net = tiny_net(k);
    let params = net.init_params(seed);
    let n = 8;
    let weak = images(&mut r, n);
    let strong = images(&mut r, n);
    let t = r.random_range(0.5..2.0);
    let out = net.forward(&params, &weak, Exec::Sequential).unwrap();
    let energies: Vec<f64> = out.iter().map(|o| energy(&o.logits, t).unwrap().value).collect();
    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let tau = sorted[n / 2];
    let mask: Vec<bool> = energies.iter().map(|&e| e < tau).collect();
    let pseudo = out.iter().map(|o| argmax(&o.logits)).collect();
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let prior = ClassPriorEma::from_values(raw.iter().map(|v| v / s).collect(), 0.99).unwrap();
    let m = margins(&prior, 0.5);
    Instance { images: strong, net, params, objective: Box::new(UnsupervisedObjective { pseudo, mask, margins: m }) }
}

/// Triplets mined on weak embeddings at the base parameters, weights frozen.
pub fn ahtl(seed: u64) -> Instance {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xa4);
    let k = 3;
    let net = tiny_net(k);
    let params = net.init_params(seed);
    let n = 8;
    let mut classes: Vec<usize> = vec![0, 0, 1, 1, 2, 2, 0, 1];
    for i in (1..n).rev() {
        classes.swap(i, r.random_range(0..=i));
    }
    let mut imgs = images(&mut r, n);
    imgs.extend(images(&mut r, n));
    let out = net.forward(&params, &imgs, Exec::Sequential).unwrap();
    let entries: Vec<MiningEntry> = (0..n)
        .map(|i| MiningEntry {
            key: i as u64,
            class: classes[i],
            weak: &out[i].embedding,
            strong: &out[n + i].embedding,
        })
        .collect();
    let batch = mine_hard(&entries, Exec::Sequential);
    let w = weights(&batch);
    // margin scaled to the embedding distances so hinges are mixed
    let margin = batch.negative_distances().iter().sum::<f64>() / batch.len() as f64 + 1e-3;
    let objective = AhtlObjective { n, triplets: batch.triplets.clone(), weights: w, margin };
    Instance { images: imgs, net, params, objective: Box::new(objective) }
}
