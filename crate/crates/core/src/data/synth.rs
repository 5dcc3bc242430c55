//! Synthetic SAR-like target chips.
//!
//! Each class owns a template (orientation, length, width, offset) drawn from
//! the run seed. A sample is a bright elongated Gaussian blob rendered from
//! the jittered template over a dim clutter floor, multiplied by fully
//! developed speckle (unit-mean gamma noise with `looks` shape) and clipped
//! to `[0, 1]`. Every sample is a pure function of (seed, stream tag, class,
//! index within class).

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Gamma shape of the multiplicative speckle.
    pub looks: f64,
    /// Std-dev of per-sample orientation jitter, radians.
    pub angle_jitter: f64,
    /// Relative std-dev of per-sample length/width jitter.
    pub scale_jitter: f64,
    /// Std-dev of per-sample centre jitter, in half-image units.
    pub offset_jitter: f64,
    /// Mean clutter floor before speckle.
    pub clutter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            height: 32,
            width: 32,
            looks: 4.0,
            angle_jitter: 0.12,
            scale_jitter: 0.12,
            offset_jitter: 0.06,
            clutter: 0.12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassTemplate {
    pub angle: f64,
    pub length: f64,
    pub breadth: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Class templates. Orientations are spread over `[0, pi/2)` so that a
/// horizontal flip (which maps angle `a` to `-a`) never turns one class into
/// another.
pub fn class_templates(classes: usize, seed: u64) -> Vec<ClassTemplate> {
    (0..classes)
        .map(|k| {
            let mut r = rng::stream(&[seed, rng::tag::TEMPLATE, k as u64]);
            let slot = FRAC_PI_2 / classes as f64;
            ClassTemplate {
                angle: slot * (k as f64 + r.random_range(0.25..0.75)),
                length: r.random_range(0.30..0.50),
                breadth: r.random_range(0.07..0.14),
                dx: r.random_range(-0.15..0.15),
                dy: r.random_range(-0.15..0.15),
            }
        })
        .collect()
}

fn render(t: &ClassTemplate, p: &SynthParams, r: &mut rng::Stream) -> Vec<f32> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let angle = t.angle + p.angle_jitter * normal.sample(r);
    let length = t.length * (1.0 + p.scale_jitter * normal.sample(r)).max(0.3);
    let breadth = t.breadth * (1.0 + p.scale_jitter * normal.sample(r)).max(0.3);
    let cx = t.dx + p.offset_jitter * normal.sample(r);
    let cy = t.dy + p.offset_jitter * normal.sample(r);
    let amp = r.random_range(0.55..0.95);
    let speckle = Gamma::new(p.looks, 1.0 / p.looks).expect("positive looks");
    let (s, c) = angle.sin_cos();
    let mut out = Vec::with_capacity(p.height * p.width);
    for y in 0..p.height {
        let ny = 2.0 * (y as f64 + 0.5) / p.height as f64 - 1.0 - cy;
        for x in 0..p.width {
            let nx = 2.0 * (x as f64 + 0.5) / p.width as f64 - 1.0 - cx;
            let u = c * nx + s * ny;
            let v = -s * nx + c * ny;
            let blob = (-0.5 * ((u / length).powi(2) + (v / breadth).powi(2))).exp();
            let base = p.clutter + amp * blob;
            out.push((base * speckle.sample(r)).clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Generates `counts[k]` samples of class `k`. Ids run consecutively from
/// `id_base` in class order. `stream_tag` separates independent pools drawn
/// from the same templates (training pool versus test pool).
pub fn synth_generate_tagged(
    counts: &[usize],
    params: &SynthParams,
    seed: u64,
    stream_tag: u64,
    id_base: u32,
    exec: Exec,
) -> Result<Vec<ImageSample>> {
    if params.height == 0 || params.width == 0 {
        return Err(Error::config("synthetic image size must be positive"));
    }
    if !(params.looks > 0.0) {
        return Err(Error::config("speckle looks must be positive"));
    }
    let templates = class_templates(counts.len(), seed);
    let jobs: Vec<(usize, usize)> = counts.iter().enumerate().flat_map(|(k, &n)| (0..n).map(move |i| (k, i))).collect();
    let samples = exec.map(&jobs, |&(k, i)| {
        let mut r = rng::stream(&[seed, stream_tag, k as u64, i as u64]);
        render(&templates[k], params, &mut r)
    });
    Ok(samples
        .into_iter()
        .zip(&jobs)
        .enumerate()
        .map(|(n, (pixels, &(k, _)))| ImageSample { id: id_base + n as u32, pixels, label: Some(k) })
        .collect())
}

/// Training pool with per-class `counts`, ids from 0.
pub fn synth_generate(counts: &[usize], params: &SynthParams, seed: u64) -> Result<Vec<ImageSample>> {
    synth_generate_tagged(counts, params, seed, rng::tag::SAMPLE, 0, Exec::default())
}
