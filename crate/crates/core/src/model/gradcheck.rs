//! Central finite-difference validation of analytic gradients.

use serde::Serialize;

use crate::error::Result;
use crate::exec::Exec;
use crate::model::net::{Network, Objective};
use crate::model::params::{Gradients, ModelParams};
use crate::rng;

/// A scalar loss that is a pure function of the parameters.
pub trait LossEvaluator {
    fn loss(&self, params: &ModelParams) -> Result<f64>;
    fn gradient(&self, params: &ModelParams) -> Result<Gradients>;
    /// Identifies the piecewise-smooth region (ReLU pattern, active hinges)
    /// that `params` falls in. Coordinates whose finite-difference probes
    /// straddle two regions are excluded from the report.
    fn region(&self, _params: &ModelParams) -> Result<u64> {
        Ok(0)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates whose analytic gradient is at most this are skipped.
    pub min_grad: f64,
    /// Optional cap on probed coordinates per tensor (sampled deterministically).
    pub max_coords_per_group: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-3, tolerance: 1e-4, min_grad: 1e-6, max_coords_per_group: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_small: usize,
    pub skipped_kink: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.max_rel_error))
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

/// Relative error `|a - n| / max(|a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// An [`Objective`] on a fixed image batch as a function of the parameters.
/// The region combines the ReLU pattern with the objective's own kinks.
pub struct NetworkLoss<'a> {
    pub net: &'a Network,
    pub images: Vec<Vec<f32>>,
    pub objective: &'a dyn Objective,
}

impl LossEvaluator for NetworkLoss<'_> {
    fn loss(&self, params: &ModelParams) -> Result<f64> {
        let out = self.net.forward(params, &self.images, Exec::Sequential)?;
        Ok(self.objective.evaluate(&out)?.0)
    }

    fn gradient(&self, params: &ModelParams) -> Result<Gradients> {
        Ok(self.net.value_and_grad(params, &self.images, self.objective, Exec::Sequential)?.1)
    }

    fn region(&self, params: &ModelParams) -> Result<u64> {
        let relu = self.net.activation_signature(params, &self.images)?;
        let out = self.net.forward(params, &self.images, Exec::Sequential)?;
        Ok(relu ^ self.objective.region(&out)?.rotate_left(17))
    }
}

pub fn grad_check(
    evaluator: &dyn LossEvaluator,
    params: &ModelParams,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = evaluator.gradient(params)?;
    let base_region = evaluator.region(params)?;
    let mut probe = params.clone();
    let mut groups = Vec::new();
    for (ti, tensor) in params.tensors().iter().enumerate() {
        let n = tensor.len();
        let coords: Vec<usize> = match opts.max_coords_per_group {
            Some(cap) if cap < n => {
                let mut r = rng::stream(&[opts.seed, ti as u64, 0x6763]);
                rand::seq::index::sample(&mut r, n, cap).into_vec()
            }
            _ => (0..n).collect(),
        };
        let mut report = GroupReport {
            name: tensor.name().to_string(),
            max_rel_error: 0.0,
            checked: 0,
            skipped_small: 0,
            skipped_kink: 0,
        };
        for i in coords {
            let g = analytic.tensors()[ti].data()[i];
            if g.abs() <= opts.min_grad {
                report.skipped_small += 1;
                continue;
            }
            let orig = tensor.data()[i];
            probe.tensors_mut()[ti].data_mut()[i] = orig + opts.step;
            let up = evaluator.loss(&probe)?;
            let up_region = evaluator.region(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig - opts.step;
            let down = evaluator.loss(&probe)?;
            let down_region = evaluator.region(&probe)?;
            probe.tensors_mut()[ti].data_mut()[i] = orig;
            if up_region != base_region || down_region != base_region {
                report.skipped_kink += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * opts.step);
            report.max_rel_error = report.max_rel_error.max(relative_error(g, numeric));
            report.checked += 1;
        }
        groups.push(report);
    }
    Ok(GradCheckReport { groups, tolerance: opts.tolerance })
}
