//! Reference convolutional classifier with hand-written backpropagation.
//!
//! Layout: `channels.len()` blocks of 3x3 convolution (stride 2, zero padding 1)
//! followed by ReLU, a global average pool producing the embedding, and a
//! linear head producing the logits. With no conv blocks the embedding is the
//! flattened image and the model is a plain linear classifier.
//!
//! Each sample is processed independently (im2col + GEMM), so a sample's
//! output never depends on which batch it travels in.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::params::{Gradients, ModelParams, Tensor};
use crate::rng;

/// Samples per gradient accumulation chunk. Fixed so the reduction order does
/// not depend on the thread count.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    /// Default desk-scale network: 32/64/128 channel blocks.
    pub fn small_convnet(height: usize, width: usize, classes: usize) -> Self {
        Architecture { height, width, channels: vec![32, 64, 128], classes }
    }

    pub fn embed_dim(&self) -> usize {
        match self.channels.last() {
            Some(&c) => c,
            None => self.height * self.width,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    hin: usize,
    win: usize,
    hout: usize,
    wout: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * 9
    }
    fn positions(&self) -> usize {
        self.hout * self.wout
    }
}

/// Raw classifier outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct SampleTape {
    cols: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    embedding: Vec<f64>,
}

/// Gradient of the loss with respect to one sample's outputs. An empty vector
/// stands for all zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Upstream {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl Upstream {
    pub fn is_zero(&self) -> bool {
        self.logits.iter().all(|&v| v == 0.0) && self.embedding.iter().all(|&v| v == 0.0)
    }
}

/// A differentiable scalar function of a batch of model outputs.
pub trait Objective {
    /// Name reported in numeric faults.
    fn name(&self) -> &str;
    /// Loss value and per-sample upstream gradients.
    fn evaluate(&self, outputs: &[ForwardOutput]) -> Result<(f64, Vec<Upstream>)>;
    /// Identifies the smooth piece of a piecewise objective (hinge states).
    fn region(&self, _outputs: &[ForwardOutput]) -> Result<u64> {
        Ok(0)
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    convs: Vec<ConvGeom>,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        if arch.height == 0 || arch.width == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if arch.classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if arch.channels.contains(&0) {
            return Err(Error::config("conv blocks need at least one channel"));
        }
        let mut convs = Vec::with_capacity(arch.channels.len());
        let (mut cin, mut h, mut w) = (1, arch.height, arch.width);
        for &cout in &arch.channels {
            let (hout, wout) = (h.div_ceil(2), w.div_ceil(2));
            convs.push(ConvGeom { cin, cout, hin: h, win: w, hout, wout });
            cin = cout;
            h = hout;
            w = wout;
        }
        Ok(Network { arch, convs })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim()
    }

    pub fn pixels(&self) -> usize {
        self.arch.height * self.arch.width
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, g) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", l + 1), vec![g.cout, g.cin, 3, 3]));
            out.push((format!("conv{}.bias", l + 1), vec![g.cout]));
        }
        out.push(("head.weight".into(), vec![self.arch.classes, self.embed_dim()]));
        out.push(("head.bias".into(), vec![self.arch.classes]));
        out
    }

    pub fn zero_params(&self) -> ModelParams {
        let tensors = self.shapes().into_iter().map(|(n, s)| Tensor::zeros(n, &s)).collect();
        ModelParams::new(tensors).expect("zero tensors are valid")
    }

    /// He-normal conv weights, scaled-normal head weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut params = self.zero_params();
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if t.shape().len() < 2 {
                continue;
            }
            let fan_in: usize = t.shape()[1..].iter().product();
            let gain = if t.name().starts_with("head") { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            let mut stream = rng::stream(&[seed, rng::tag::INIT, i as u64]);
            for v in t.data_mut() {
                *v = normal.sample(&mut stream);
            }
        }
        params
    }

    /// Verifies names and shapes against the architecture.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let expected = self.shapes();
        let ok = params.tensors().len() == expected.len()
            && params.tensors().iter().zip(&expected).all(|(t, (n, s))| t.name() == n && t.shape() == s.as_slice());
        if ok {
            Ok(())
        } else {
            Err(Error::config("parameters do not match the network architecture"))
        }
    }

    fn check_image(&self, image: &[f32]) -> Result<()> {
        if image.len() != self.pixels() {
            return Err(Error::config(format!(
                "image has {} pixels, network expects {}x{}",
                image.len(),
                self.arch.height,
                self.arch.width
            )));
        }
        Ok(())
    }

    fn forward_sample(
        &self,
        params: &ModelParams,
        image: &[f32],
        keep_tape: bool,
    ) -> Result<(ForwardOutput, Option<SampleTape>)> {
        self.check_image(image)?;
        let t = params.tensors();
        let mut cols = Vec::new();
        let mut acts = Vec::new();
        let mut x: Vec<f64> = image.iter().map(|&v| v as f64).collect();
        for (l, g) in self.convs.iter().enumerate() {
            let col = im2col(&x, g);
            let (k, p) = (g.patch(), g.positions());
            let mut z = vec![0.0; g.cout * p];
            let w = t[2 * l].data();
            let b = t[2 * l + 1].data();
            unsafe {
                matrixmultiply::dgemm(
                    g.cout,
                    k,
                    p,
                    1.0,
                    w.as_ptr(),
                    k as isize,
                    1,
                    col.as_ptr(),
                    p as isize,
                    1,
                    0.0,
                    z.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
            for (c, row) in z.chunks_mut(p).enumerate() {
                for v in row {
                    *v = (*v + b[c]).max(0.0);
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("forward conv{}", l + 1), "non-finite activation"));
            }
            if keep_tape {
                cols.push(col);
                acts.push(z.clone());
            }
            x = z;
        }
        let embedding = match self.convs.last() {
            Some(g) => {
                let p = g.positions() as f64;
                x.chunks(g.positions()).map(|row| row.iter().sum::<f64>() / p).collect()
            }
            None => x,
        };
        let nh = 2 * self.convs.len();
        let (hw, hb) = (t[nh].data(), t[nh + 1].data());
        let d = embedding.len();
        let logits: Vec<f64> =
            (0..self.arch.classes).map(|k| hb[k] + dot(&hw[k * d..(k + 1) * d], &embedding)).collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("forward head", "non-finite logit"));
        }
        let tape = keep_tape.then(|| SampleTape { cols, acts, embedding: embedding.clone() });
        Ok((ForwardOutput { logits, embedding }, tape))
    }

    /// Logits and embeddings for a batch of images (pixels in `[0, 1]`).
    pub fn forward<I: AsRef<[f32]> + Sync>(
        &self,
        params: &ModelParams,
        images: &[I],
        exec: Exec,
    ) -> Result<Vec<ForwardOutput>> {
        self.check_params(params)?;
        exec.map(images, |img| self.forward_sample(params, img.as_ref(), false).map(|(o, _)| o)).into_iter().collect()
    }

    /// Forward pass that also keeps the tapes needed by [`Network::backward`].
    pub fn forward_taped<I: AsRef<[f32]> + Sync>(
        &self,
        params: &ModelParams,
        images: &[I],
        exec: Exec,
    ) -> Result<(Vec<ForwardOutput>, Vec<SampleTape>)> {
        self.check_params(params)?;
        let results: Result<Vec<_>> =
            exec.map(images, |img| self.forward_sample(params, img.as_ref(), true)).into_iter().collect();
        Ok(results?.into_iter().map(|(o, t)| (o, t.expect("tape requested"))).unzip())
    }

    fn backward_sample(&self, params: &ModelParams, tape: &SampleTape, up: &Upstream, grads: &mut Gradients) {
        let k = self.arch.classes;
        let d = self.embed_dim();
        let nh = 2 * self.convs.len();
        let mut de = if up.embedding.is_empty() { vec![0.0; d] } else { up.embedding.clone() };
        if !up.logits.is_empty() {
            let hw = params.tensors()[nh].data();
            {
                let gw = grads.tensors_mut()[nh].data_mut();
                for c in 0..k {
                    let g = up.logits[c];
                    if g == 0.0 {
                        continue;
                    }
                    for (gv, &e) in gw[c * d..(c + 1) * d].iter_mut().zip(&tape.embedding) {
                        *gv += g * e;
                    }
                    for (dv, &w) in de.iter_mut().zip(&hw[c * d..(c + 1) * d]) {
                        *dv += g * w;
                    }
                }
            }
            let gb = grads.tensors_mut()[nh + 1].data_mut();
            for (gv, &g) in gb.iter_mut().zip(&up.logits) {
                *gv += g;
            }
        }
        let Some(last) = self.convs.last() else {
            return;
        };
        // average pool
        let p = last.positions();
        let mut da: Vec<f64> = de.iter().flat_map(|&g| std::iter::repeat_n(g / p as f64, p)).collect();
        for l in (0..self.convs.len()).rev() {
            let g = &self.convs[l];
            let (kk, p) = (g.patch(), g.positions());
            let act = &tape.acts[l];
            for (dv, &a) in da.iter_mut().zip(act) {
                if a <= 0.0 {
                    *dv = 0.0;
                }
            }
            let col = &tape.cols[l];
            {
                let gw = grads.tensors_mut()[2 * l].data_mut();
                unsafe {
                    matrixmultiply::dgemm(
                        g.cout,
                        p,
                        kk,
                        1.0,
                        da.as_ptr(),
                        p as isize,
                        1,
                        col.as_ptr(),
                        1,
                        p as isize,
                        1.0,
                        gw.as_mut_ptr(),
                        kk as isize,
                        1,
                    );
                }
            }
            {
                let gb = grads.tensors_mut()[2 * l + 1].data_mut();
                for (c, row) in da.chunks(p).enumerate() {
                    gb[c] += row.iter().sum::<f64>();
                }
            }
            if l == 0 {
                break;
            }
            let w = params.tensors()[2 * l].data();
            let mut dcol = vec![0.0; kk * p];
            unsafe {
                matrixmultiply::dgemm(
                    kk,
                    g.cout,
                    p,
                    1.0,
                    w.as_ptr(),
                    1,
                    kk as isize,
                    da.as_ptr(),
                    p as isize,
                    1,
                    0.0,
                    dcol.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
            da = col2im(&dcol, g);
        }
    }

    /// Accumulates parameter gradients for `(tape, upstream)` pairs. Rows with
    /// all-zero upstream gradients are skipped.
    pub fn backward(&self, params: &ModelParams, items: &[(&SampleTape, &Upstream)], exec: Exec) -> Result<Gradients> {
        self.check_params(params)?;
        let active: Vec<(&SampleTape, &Upstream)> = items.iter().copied().filter(|(_, u)| !u.is_zero()).collect();
        let partials = exec.map_chunks(&active, GRAD_CHUNK, |chunk| {
            let mut g = params.zeros_like();
            for (tape, up) in chunk {
                self.backward_sample(params, tape, up, &mut g);
            }
            g
        });
        let mut grads = params.zeros_like();
        for p in &partials {
            grads.add_scaled(1.0, p);
        }
        Ok(grads)
    }

    /// Loss value and parameter gradient of `objective` on a batch.
    pub fn value_and_grad<I: AsRef<[f32]> + Sync>(
        &self,
        params: &ModelParams,
        images: &[I],
        objective: &dyn Objective,
        exec: Exec,
    ) -> Result<(f64, Gradients)> {
        let (outputs, tapes) = self.forward_taped(params, images, exec)?;
        let (loss, upstream) = objective.evaluate(&outputs)?;
        if upstream.len() != outputs.len() {
            return Err(Error::config(format!(
                "objective {} returned {} upstream rows for {} samples",
                objective.name(),
                upstream.len(),
                outputs.len()
            )));
        }
        if !loss.is_finite() {
            return Err(Error::numeric(objective.name(), format!("loss = {loss}")));
        }
        let items: Vec<_> = tapes.iter().zip(&upstream).collect();
        let grads = self.backward(params, &items, exec)?;
        grads.ensure_finite(&format!("gradient of {}", objective.name()))?;
        Ok((loss, grads))
    }

    /// Hash of every ReLU on/off state for the batch. Two parameter vectors
    /// with equal signatures lie in the same linear region.
    pub fn activation_signature<I: AsRef<[f32]> + Sync>(&self, params: &ModelParams, images: &[I]) -> Result<u64> {
        let (_, tapes) = self.forward_taped(params, images, Exec::Sequential)?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for tape in &tapes {
            for act in &tape.acts {
                for &a in act {
                    h ^= (a > 0.0) as u64 + 1;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        Ok(h)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let mut col = vec![0.0; g.patch() * p];
    for ci in 0..g.cin {
        let plane = &x[ci * g.hin * g.win..(ci + 1) * g.hin * g.win];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..g.hout {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= g.hin as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.win..][..g.win];
                    for ox in 0..g.wout {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix >= 0 && ix < g.win as isize {
                            row[oy * g.wout + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(dcol: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.positions();
    let mut dx = vec![0.0; g.cin * g.hin * g.win];
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.hin * g.win..(ci + 1) * g.hin * g.win];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((ci * 9) + ky * 3 + kx) * p..][..p];
                for oy in 0..g.hout {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= g.hin as isize {
                        continue;
                    }
                    for ox in 0..g.wout {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix >= 0 && ix < g.win as isize {
                            plane[iy as usize * g.win + ix as usize] += row[oy * g.wout + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_images(n: usize, pixels: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut r = rng::stream(&[seed, 99]);
        (0..n).map(|_| (0..pixels).map(|_| r.random::<f32>()).collect()).collect()
    }

    /// Direct convolution written from the layer definitions, no im2col.
    fn naive_forward(net: &Network, params: &ModelParams, image: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let arch = net.architecture();
        let t = params.tensors();
        let (mut c, mut h, mut w) = (1usize, arch.height, arch.width);
        let mut x: Vec<f64> = image.iter().map(|&v| v as f64).collect();
        for (l, &cout) in arch.channels.iter().enumerate() {
            let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
            let wt = t[2 * l].data();
            let bs = t[2 * l + 1].data();
            let mut y = vec![0.0; cout * ho * wo];
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = bs[co];
                        for ci in 0..c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (2 * oy + ky) as i64 - 1;
                                    let ix = (2 * ox + kx) as i64 - 1;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        s += wt[((co * c + ci) * 3 + ky) * 3 + kx]
                                            * x[(ci * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                        }
                        y[(co * ho + oy) * wo + ox] = if s > 0.0 { s } else { 0.0 };
                    }
                }
            }
            x = y;
            c = cout;
            h = ho;
            w = wo;
        }
        let emb: Vec<f64> = if arch.channels.is_empty() {
            x
        } else {
            (0..c).map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64).collect()
        };
        let d = emb.len();
        let hw = t[t.len() - 2].data();
        let hb = t[t.len() - 1].data();
        let logits = (0..arch.classes).map(|k| hb[k] + (0..d).map(|j| hw[k * d + j] * emb[j]).sum::<f64>()).collect();
        (logits, emb)
    }

    #[test]
    fn zero_params_give_equal_logits() {
        let net = Network::new(Architecture::small_convnet(12, 12, 4)).unwrap();
        let p = net.zero_params();
        let out = net.forward(&p, &random_images(3, 144, 1), Exec::Sequential).unwrap();
        for o in &out {
            assert!(o.logits.iter().all(|&v| v == o.logits[0]));
        }
    }

    #[test]
    fn duplicate_samples_give_identical_rows() {
        let net = Network::new(Architecture::small_convnet(10, 9, 3)).unwrap();
        let p = net.init_params(3);
        let img = random_images(1, 90, 2).remove(0);
        let out = net.forward(&p, &[img.clone(), img], Exec::Parallel).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn matches_direct_convolution() {
        for (seed, arch) in [
            (1, Architecture { height: 11, width: 8, channels: vec![4, 6], classes: 3 }),
            (2, Architecture::small_convnet(16, 16, 5)),
            (3, Architecture { height: 5, width: 5, channels: vec![], classes: 2 }),
        ] {
            let net = Network::new(arch.clone()).unwrap();
            let mut p = net.init_params(seed);
            // non-zero biases to exercise the bias path
            for t in p.tensors_mut() {
                if t.shape().len() == 1 {
                    t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 * (i as f64 % 3.0 - 1.0));
                }
            }
            let imgs = random_images(4, arch.height * arch.width, seed);
            let out = net.forward(&p, &imgs, Exec::Sequential).unwrap();
            for (o, img) in out.iter().zip(&imgs) {
                let (logits, emb) = naive_forward(&net, &p, img);
                for (a, b) in o.logits.iter().zip(&logits).chain(o.embedding.iter().zip(&emb)) {
                    assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn linear_model_sum_of_logits_gradient_is_input_sum() {
        let net = Network::new(Architecture { height: 3, width: 4, channels: vec![], classes: 3 }).unwrap();
        let p = net.init_params(5);
        let imgs = random_images(5, 12, 8);
        struct SumLogits;
        impl Objective for SumLogits {
            fn name(&self) -> &str {
                "sum"
            }
            fn evaluate(&self, outputs: &[ForwardOutput]) -> Result<(f64, Vec<Upstream>)> {
                let loss = outputs.iter().flat_map(|o| o.logits.iter()).sum();
                let up =
                    outputs.iter().map(|o| Upstream { logits: vec![1.0; o.logits.len()], embedding: vec![] }).collect();
                Ok((loss, up))
            }
        }
        let (_, g) = net.value_and_grad(&p, &imgs, &SumLogits, Exec::Sequential).unwrap();
        let sums: Vec<f64> = (0..12).map(|j| imgs.iter().map(|im| im[j] as f64).sum()).collect();
        let gw = g.get("head.weight").unwrap().data();
        for k in 0..3 {
            for j in 0..12 {
                assert!((gw[k * 12 + j] - sums[j]).abs() < 1e-12);
            }
        }
        assert!(g.get("head.bias").unwrap().data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = Network::new(Architecture::small_convnet(8, 8, 3)).unwrap();
        let p = net.init_params(1);
        struct Constant;
        impl Objective for Constant {
            fn name(&self) -> &str {
                "const"
            }
            fn evaluate(&self, outputs: &[ForwardOutput]) -> Result<(f64, Vec<Upstream>)> {
                Ok((4.2, vec![Upstream::default(); outputs.len()]))
            }
        }
        let (v, g) = net.value_and_grad(&p, &random_images(3, 64, 1), &Constant, Exec::Sequential).unwrap();
        assert_eq!(v, 4.2);
        assert!(g.iter_values().all(|x| x == 0.0));
    }

    #[test]
    fn shape_errors_are_config_errors() {
        let net = Network::new(Architecture::small_convnet(8, 8, 3)).unwrap();
        let p = net.init_params(1);
        let err = net.forward(&p, &[vec![0.0f32; 63]], Exec::Sequential).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let other = Network::new(Architecture::small_convnet(8, 8, 4)).unwrap().init_params(1);
        assert!(net.forward(&other, &[vec![0.0f32; 64]], Exec::Sequential).is_err());
    }

    #[test]
    fn parallel_and_sequential_gradients_are_bit_identical() {
        let net = Network::new(Architecture::small_convnet(8, 8, 3)).unwrap();
        let p = net.init_params(9);
        let imgs = random_images(21, 64, 4);
        let (outs, tapes) = net.forward_taped(&p, &imgs, Exec::Parallel).unwrap();
        let ups: Vec<Upstream> =
            outs.iter().map(|o| Upstream { logits: o.logits.clone(), embedding: o.embedding.clone() }).collect();
        let items: Vec<_> = tapes.iter().zip(&ups).collect();
        let a = net.backward(&p, &items, Exec::Sequential).unwrap();
        let b = net.backward(&p, &items, Exec::Parallel).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }
}
