use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;
use crate::trainer::{fit, FitOptions, TrainConfig};

use super::json::to_fixed_json;

/// A base configuration and the values each varied key takes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub axes: BTreeMap<String, Vec<Value>>,
}

/// Default grid for a sweepable key.
pub fn default_axis(key: &str) -> Option<Vec<Value>> {
    let v = |xs: &[f64]| xs.iter().map(|&x| Value::from(x)).collect();
    match key {
        "tau_e" => Some((0..=10).map(|i| Value::from(-11.0 + 0.5 * i as f64)).collect()),
        "temperature" => Some(v(&[0.5, 1.0, 1.5, 2.0, 4.0])),
        "triplet_margin" => Some(v(&[0.1, 0.2, 0.3, 0.4])),
        "lambda_u" | "lambda_ahtl" => Some(v(&[0.1, 0.5, 1.0, 1.5, 2.0, 4.0])),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: BTreeMap<String, Value>,
    pub seed: u64,
    pub ok: bool,
    pub accuracy: Option<f64>,
    pub head_recall: Option<f64>,
    pub tail_recall: Option<f64>,
    pub pseudo_selected: Option<usize>,
    pub pseudo_precision: Option<f64>,
    pub error: Option<String>,
}

fn point_seed(base: u64, params: &BTreeMap<String, Value>) -> u64 {
    let text = to_fixed_json(params).expect("grid values serialize");
    let h = Sha256::digest(text.as_bytes());
    let word = u64::from_le_bytes(h[..8].try_into().expect("digest has 8 bytes"));
    rng::derive(&[base, rng::tag::SWEEP, word])
}

impl SweepSpec {
    /// Every grid point with its configuration, in lexicographic axis order.
    /// Each point's seed is derived from the base seed and its values.
    pub fn points(&self) -> Result<Vec<(BTreeMap<String, Value>, TrainConfig)>> {
        let mut combos: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
        for (key, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::config(format!("sweep axis `{key}` has no values")));
            }
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.insert(key.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|params| {
                let mut cfg = self.base.clone();
                for (k, v) in &params {
                    cfg.set(k, &v.to_string())?;
                }
                cfg.seed = point_seed(self.base.seed, &params);
                Ok((params, cfg))
            })
            .collect()
    }
}

fn run_point(params: BTreeMap<String, Value>, cfg: &TrainConfig, split: &DatasetSplit, exec: Exec) -> SweepRow {
    let opts = FitOptions { exec, ..Default::default() };
    match fit(cfg, split, &opts) {
        Ok(out) => {
            let last = out.report.pseudo.last();
            SweepRow {
                params,
                seed: cfg.seed,
                ok: true,
                accuracy: Some(out.report.accuracy),
                head_recall: Some(out.report.head_recall),
                tail_recall: Some(out.report.tail_recall),
                pseudo_selected: last.map(|p| p.selected),
                pseudo_precision: last.and_then(|p| p.precision),
                error: None,
            }
        }
        Err(e) => SweepRow {
            params,
            seed: cfg.seed,
            ok: false,
            accuracy: None,
            head_recall: None,
            tail_recall: None,
            pseudo_selected: None,
            pseudo_precision: None,
            error: Some(e.to_string()),
        },
    }
}

/// Fits every grid point. Failed points become failed rows.
pub fn run_sweep(spec: &SweepSpec, split: &DatasetSplit, exec: Exec) -> Result<Vec<SweepRow>> {
    let points = spec.points()?;
    let (outer, inner) = if points.len() > 1 { (exec, Exec::Sequential) } else { (Exec::Sequential, exec) };
    Ok(outer.map(&points, |(params, cfg)| run_point(params.clone(), cfg, split, inner)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// CSV with one column per varied key followed by the outcome columns.
pub fn write_sweep_csv(rows: &[SweepRow], w: &mut impl Write) -> Result<()> {
    let keys: Vec<String> = rows.first().map(|r| r.params.keys().cloned().collect()).unwrap_or_default();
    let mut header = keys.clone();
    header.extend(
        ["seed", "status", "accuracy", "head_recall", "tail_recall", "pseudo_selected", "pseudo_precision", "error"]
            .map(String::from),
    );
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut cells: Vec<String> = keys.iter().map(|k| to_fixed_json(&r.params[k]).unwrap_or_default()).collect();
        cells.push(r.seed.to_string());
        cells.push(if r.ok { "ok" } else { "failed" }.into());
        cells.push(opt(r.accuracy));
        cells.push(opt(r.head_recall));
        cells.push(opt(r.tail_recall));
        cells.push(r.pseudo_selected.map_or_else(String::new, |n| n.to_string()));
        cells.push(opt(r.pseudo_precision));
        cells.push(r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn save_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_sweep_csv(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids_hold_the_paper_point() {
        let has = |k: &str, x: f64| default_axis(k).unwrap().iter().any(|v| v.as_f64() == Some(x));
        assert!(has("tau_e", -9.5) && has("tau_e", -9.0));
        assert_eq!(default_axis("tau_e").unwrap().len(), 11);
        assert!(has("temperature", 1.0) && has("temperature", 0.5) && !has("temperature", 0.0));
        assert!(has("triplet_margin", 0.3));
        assert!(has("lambda_u", 1.0) && has("lambda_ahtl", 1.5));
        assert!(default_axis("lr").is_none());
    }

    #[test]
    fn two_by_two_grid() {
        let mut spec = SweepSpec::default();
        spec.axes.insert("lambda_u".into(), vec![Value::from(0.5), Value::from(1.0)]);
        spec.axes.insert("triplet_margin".into(), vec![Value::from(0.1), Value::from(0.2)]);
        let pts = spec.points().unwrap();
        assert_eq!(pts.len(), 4);
        let pairs: Vec<(f64, f64)> = pts.iter().map(|(_, c)| (c.lambda_u, c.triplet_margin)).collect();
        assert_eq!(pairs, vec![(0.5, 0.1), (0.5, 0.2), (1.0, 0.1), (1.0, 0.2)]);
        let seeds: std::collections::HashSet<u64> = pts.iter().map(|(_, c)| c.seed).collect();
        assert_eq!(seeds.len(), 4);
        // seeds depend on the values, not on grid position
        let mut single = SweepSpec::default();
        single.axes.insert("lambda_u".into(), vec![Value::from(1.0)]);
        single.axes.insert("triplet_margin".into(), vec![Value::from(0.2)]);
        assert_eq!(single.points().unwrap()[0].1.seed, pts[3].1.seed);
    }

    #[test]
    fn bad_axis_is_config_error() {
        let mut spec = SweepSpec::default();
        spec.axes.insert("nope".into(), vec![Value::from(1)]);
        assert_eq!(spec.points().unwrap_err().exit_code(), 1);
        spec.axes.clear();
        spec.axes.insert("lr".into(), vec![]);
        assert!(spec.points().is_err());
    }
}
