//! Weak and strong augmentation.
//!
//! Weak: horizontal flip, then an integer translation with zero fill.
//! Strong: the weak view followed by `n_ops` distinct transforms drawn from a
//! pool. Drawing and applying are separate steps so a fixed plan can be
//! replayed. The strong view always continues the stream that produced the
//! weak view, so both views share flip and shift.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeakConfig {
    pub flip_prob: f64,
    /// Maximum shift as a fraction of each image dimension.
    pub max_shift: f64,
}

impl Default for WeakConfig {
    fn default() -> Self {
        WeakConfig { flip_prob: 0.5, max_shift: 0.125 }
    }
}

/// One entry of the strong-op pool with its magnitude bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpSpec {
    Rotate { max_degrees: f64 },
    Shear { max: f64 },
    Contrast { min: f64, max: f64 },
    Gamma { min: f64, max: f64 },
    Speckle { max_sigma: f64 },
    Cutout { side: f64 },
}

impl OpSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OpSpec::Rotate { .. } => "rotate",
            OpSpec::Shear { .. } => "shear",
            OpSpec::Contrast { .. } => "contrast",
            OpSpec::Gamma { .. } => "gamma",
            OpSpec::Speckle { .. } => "speckle",
            OpSpec::Cutout { .. } => "cutout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrongConfig {
    pub n_ops: usize,
    pub op_pool: Vec<OpSpec>,
}

impl Default for StrongConfig {
    fn default() -> Self {
        StrongConfig {
            n_ops: 2,
            op_pool: vec![
                OpSpec::Rotate { max_degrees: 15.0 },
                OpSpec::Shear { max: 0.2 },
                OpSpec::Contrast { min: 0.5, max: 1.5 },
                OpSpec::Gamma { min: 0.7, max: 1.4 },
                OpSpec::Speckle { max_sigma: 0.1 },
                OpSpec::Cutout { side: 0.25 },
            ],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub weak: WeakConfig,
    pub strong: StrongConfig,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weak.flip_prob) {
            return Err(Error::config("weak.flip_prob must lie in [0, 1]"));
        }
        if !(0.0..0.5).contains(&self.weak.max_shift) {
            return Err(Error::config("weak.max_shift must lie in [0, 0.5)"));
        }
        if self.strong.n_ops > self.strong.op_pool.len() {
            return Err(Error::config(format!(
                "strong.n_ops = {} exceeds the op pool size {}",
                self.strong.n_ops,
                self.strong.op_pool.len()
            )));
        }
        Ok(())
    }
}

/// Drawn parameters of the weak transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakPlan {
    pub flip: bool,
    pub dx: i32,
    pub dy: i32,
}

impl WeakPlan {
    pub const IDENTITY: WeakPlan = WeakPlan { flip: false, dx: 0, dy: 0 };
}

/// One drawn strong transform with its magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpDraw {
    Rotate { degrees: f64 },
    Shear { factor: f64 },
    Contrast { factor: f64 },
    Gamma { exponent: f64 },
    Speckle { sigma: f64, noise_seed: u64 },
    Cutout { cy: usize, cx: usize, side_y: usize, side_x: usize },
}

/// Two views of the same unlabeled source image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub id: u32,
    pub weak: Vec<f32>,
    pub strong: Vec<f32>,
}

/// Augmentation bound to an image size.
#[derive(Debug, Clone)]
pub struct Augmenter {
    pub config: AugmentConfig,
    pub height: usize,
    pub width: usize,
}

impl Augmenter {
    pub fn new(config: AugmentConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        Ok(Augmenter { config, height, width })
    }

    /// Stream for one sample at one iteration.
    pub fn stream(seed: u64, tag: u64, id: u32, iteration: u64) -> Stream {
        rng::stream(&[seed, tag, id as u64, iteration])
    }

    pub fn draw_weak(&self, r: &mut Stream) -> WeakPlan {
        let flip = r.random::<f64>() < self.config.weak.flip_prob;
        let sy = (self.config.weak.max_shift * self.height as f64).floor() as i32;
        let sx = (self.config.weak.max_shift * self.width as f64).floor() as i32;
        let dy = r.random_range(-sy..=sy);
        let dx = r.random_range(-sx..=sx);
        WeakPlan { flip, dx, dy }
    }

    pub fn apply_weak(&self, pixels: &[f32], plan: WeakPlan) -> Vec<f32> {
        let (h, w) = (self.height as i32, self.width as i32);
        let mut out = vec![0.0f32; pixels.len()];
        for y in 0..h {
            let sy = y - plan.dy;
            if sy < 0 || sy >= h {
                continue;
            }
            for x in 0..w {
                let mut sx = x - plan.dx;
                if sx < 0 || sx >= w {
                    continue;
                }
                if plan.flip {
                    sx = w - 1 - sx;
                }
                out[(y * w + x) as usize] = pixels[(sy * w + sx) as usize].clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Indices into the op pool plus magnitudes, in application order.
    pub fn draw_strong(&self, r: &mut Stream) -> Vec<(usize, OpDraw)> {
        let pool = &self.config.strong.op_pool;
        let picks = rand::seq::index::sample(r, pool.len(), self.config.strong.n_ops).into_vec();
        picks
            .into_iter()
            .map(|i| {
                let draw = match pool[i] {
                    OpSpec::Rotate { max_degrees } => OpDraw::Rotate { degrees: symmetric(r, max_degrees) },
                    OpSpec::Shear { max } => OpDraw::Shear { factor: symmetric(r, max) },
                    OpSpec::Contrast { min, max } => OpDraw::Contrast { factor: between(r, min, max) },
                    OpSpec::Gamma { min, max } => OpDraw::Gamma { exponent: between(r, min, max) },
                    OpSpec::Speckle { max_sigma } => {
                        OpDraw::Speckle { sigma: between(r, 0.0, max_sigma), noise_seed: r.random() }
                    }
                    OpSpec::Cutout { side } => {
                        let side_y = ((side * self.height as f64).round() as usize).max(1);
                        let side_x = ((side * self.width as f64).round() as usize).max(1);
                        OpDraw::Cutout {
                            cy: r.random_range(0..self.height),
                            cx: r.random_range(0..self.width),
                            side_y,
                            side_x,
                        }
                    }
                };
                (i, draw)
            })
            .collect()
    }

    pub fn apply_op(&self, pixels: &[f32], op: OpDraw) -> Vec<f32> {
        let out: Vec<f32> = match op {
            OpDraw::Rotate { degrees } => {
                let (s, c) = degrees.to_radians().sin_cos();
                // inverse map: rotate destination coordinates by -angle
                self.resample(pixels, |u, v| (c * u + s * v, -s * u + c * v))
            }
            OpDraw::Shear { factor } => self.resample(pixels, |u, v| (u - factor * v, v)),
            OpDraw::Contrast { factor } => {
                let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / pixels.len().max(1) as f64;
                pixels.iter().map(|&p| (mean + factor * (p as f64 - mean)) as f32).collect()
            }
            OpDraw::Gamma { exponent } => pixels.iter().map(|&p| (p.max(0.0) as f64).powf(exponent) as f32).collect(),
            OpDraw::Speckle { sigma, noise_seed } => {
                let mut r = rng::stream(&[noise_seed]);
                pixels
                    .iter()
                    .map(|&p| {
                        let n: f64 = StandardNormal.sample(&mut r);
                        (p as f64 + sigma * n) as f32
                    })
                    .collect()
            }
            OpDraw::Cutout { cy, cx, side_y, side_x } => {
                let mut out = pixels.to_vec();
                let y0 = cy.saturating_sub(side_y / 2);
                let x0 = cx.saturating_sub(side_x / 2);
                for y in y0..(y0 + side_y).min(self.height) {
                    for x in x0..(x0 + side_x).min(self.width) {
                        out[y * self.width + x] = 0.0;
                    }
                }
                out
            }
        };
        out.into_iter().map(|p| p.clamp(0.0, 1.0)).collect()
    }

    /// Bilinear resampling about the image centre; `map` takes destination
    /// offsets from the centre to source offsets. Outside pixels read as zero.
    fn resample(&self, pixels: &[f32], map: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f32> {
        let (h, w) = (self.height, self.width);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let at = |y: i64, x: i64| -> f64 {
            if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                0.0
            } else {
                pixels[y as usize * w + x as usize] as f64
            }
        };
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (su, sv) = map(x as f64 - cx, y as f64 - cy);
                let (sx, sy) = (su + cx, sv + cy);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as i64, y0 as i64);
                let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + at(y0, x0 + 1) * fx * (1.0 - fy)
                    + at(y0 + 1, x0) * (1.0 - fx) * fy
                    + at(y0 + 1, x0 + 1) * fx * fy;
                out.push(v as f32);
            }
        }
        out
    }

    pub fn weak(&self, pixels: &[f32], r: &mut Stream) -> Vec<f32> {
        let plan = self.draw_weak(r);
        self.apply_weak(pixels, plan)
    }

    pub fn strong(&self, pixels: &[f32], r: &mut Stream) -> Vec<f32> {
        self.pair_views(pixels, r).1
    }

    fn pair_views(&self, pixels: &[f32], r: &mut Stream) -> (Vec<f32>, Vec<f32>) {
        let weak = self.weak(pixels, r);
        let mut strong = weak.clone();
        for (_, op) in self.draw_strong(r) {
            strong = self.apply_op(&strong, op);
        }
        (weak, strong)
    }

    /// Weak and strong views of one unlabeled sample from its keyed stream.
    pub fn pair(&self, id: u32, pixels: &[f32], seed: u64, iteration: u64) -> AugmentedPair {
        let mut r = Self::stream(seed, rng::tag::AUG_UNLABELED, id, iteration);
        let (weak, strong) = self.pair_views(pixels, &mut r);
        AugmentedPair { id, weak, strong }
    }

    /// Weak view of one labeled sample from its keyed stream.
    pub fn weak_labeled(&self, id: u32, pixels: &[f32], seed: u64, iteration: u64) -> Vec<f32> {
        let mut r = Self::stream(seed, rng::tag::AUG_LABELED, id, iteration);
        self.weak(pixels, &mut r)
    }
}

fn symmetric(r: &mut Stream, max: f64) -> f64 {
    if max > 0.0 {
        r.random_range(-max..=max)
    } else {
        0.0
    }
}

fn between(r: &mut Stream, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        r.random_range(lo..=hi)
    } else {
        lo
    }
}
