use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::energy::AuditTable;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::ClassPriorEma;
use crate::model::{Checkpoint, EmaParams, ModelParams, NamedArray, Network, Tensor};
use crate::report::{self, audit_lines, smallest_classes, summarize, to_fixed_json, MetricsReport};

use super::config::TrainConfig;
use super::step::{StepMetrics, TrainState, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Where files go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub resume: bool,
    pub progress: bool,
    pub exec: Exec,
    /// Stop once this iteration is reached, leaving `last.ckpt` for a later
    /// resume.
    pub stop_after: Option<u64>,
}

/// One evaluation of the EMA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub accuracy: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub tail_recall: f64,
    pub pseudo_selected: usize,
    pub pseudo_precision: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub state: TrainState,
    pub steps: Vec<StepMetrics>,
    pub evals: Vec<EvalRecord>,
    pub best: EvalRecord,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    iteration: u64,
    classes: usize,
    height: usize,
    width: usize,
    best_accuracy: Option<f64>,
    config: TrainConfig,
}

fn arrays<'a>(prefix: &str, p: &'a ModelParams) -> impl Iterator<Item = NamedArray> + 'a {
    let prefix = prefix.to_string();
    p.tensors().iter().map(move |t| NamedArray {
        name: format!("{prefix}/{}", t.name()),
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&v| v as f32).collect(),
    })
}

fn restore(ckpt: &Checkpoint, prefix: &str, like: &ModelParams) -> Result<ModelParams> {
    let mut tensors = Vec::new();
    for t in like.tensors() {
        let key = format!("{prefix}/{}", t.name());
        let a = ckpt.get(&key).ok_or_else(|| Error::data(format!("checkpoint lacks `{key}`")))?;
        tensors.push(Tensor::from_vec(t.name(), &a.shape, a.data.iter().map(|&v| v as f64).collect())?);
    }
    let p = ModelParams::new(tensors)?;
    like.check_shapes(&p, "checkpoint")?;
    Ok(p)
}

fn to_checkpoint(trainer: &Trainer, state: &TrainState, best_accuracy: Option<f64>) -> Result<Checkpoint> {
    let arch = trainer.net.architecture();
    let meta = CheckpointMeta {
        iteration: state.iteration,
        classes: arch.classes,
        height: arch.height,
        width: arch.width,
        best_accuracy,
        config: trainer.config.clone(),
    };
    let mut out: Vec<NamedArray> = arrays("params", &state.params).collect();
    out.extend(arrays("ema", state.ema.params()));
    out.extend(arrays("momentum", &state.momentum));
    out.push(NamedArray {
        name: "prior/p_hat".into(),
        shape: vec![arch.classes],
        data: state.prior.p_hat().iter().map(|&v| v as f32).collect(),
    });
    Ok(Checkpoint { fingerprint: trainer.config.fingerprint(), metadata: serde_json::to_string(&meta)?, arrays: out })
}

fn from_checkpoint(trainer: &Trainer, ckpt: &Checkpoint) -> Result<(TrainState, Option<f64>)> {
    if ckpt.fingerprint != trainer.config.fingerprint() {
        return Err(Error::config("checkpoint was written by a different configuration"));
    }
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.metadata)?;
    let like = trainer.net.zero_params();
    let prior = ckpt.get("prior/p_hat").ok_or_else(|| Error::data("checkpoint lacks `prior/p_hat`"))?;
    let state = TrainState {
        params: restore(ckpt, "params", &like)?,
        momentum: restore(ckpt, "momentum", &like)?,
        ema: EmaParams::from_shadow(restore(ckpt, "ema", &like)?, trainer.config.delta_model)?,
        prior: ClassPriorEma::from_values(prior.data.iter().map(|&v| v as f64).collect(), trainer.config.delta_prior)?,
        iteration: meta.iteration,
        seed: trainer.config.seed,
    };
    Ok((state, meta.best_accuracy))
}

/// Network, EMA parameters and config stored in a checkpoint.
pub fn load_eval_model(path: &Path) -> Result<(Network, ModelParams, TrainConfig)> {
    let ckpt = Checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.metadata)?;
    let trainer = Trainer::new(meta.config.clone(), meta.classes, meta.height, meta.width, Exec::default())?;
    let ema = restore(&ckpt, "ema", &trainer.net.zero_params())?;
    Ok((trainer.net, ema, meta.config))
}

/// Keeps the lines for which `keep` holds (the first line always stays).
fn truncate_lines(path: &Path, keep: impl Fn(&str) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let mut w = BufWriter::new(File::create(path)?);
    for (i, l) in lines.iter().enumerate() {
        if i == 0 || keep(l) {
            writeln!(w, "{l}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn json_iteration(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line).ok()?.get("iteration")?.as_u64()
}

struct Sinks {
    dir: PathBuf,
    metrics: BufWriter<File>,
    eval: BufWriter<File>,
    audit: BufWriter<File>,
}

impl Sinks {
    fn open(dir: &Path, resume_at: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let m = dir.join(METRICS_FILE);
        let e = dir.join(EVAL_FILE);
        let a = dir.join(AUDIT_FILE);
        let append = |p: &Path| OpenOptions::new().create(true).append(true).open(p);
        match resume_at {
            Some(it) => {
                truncate_lines(&m, |l| {
                    l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < it)
                })?;
                // eval and audit files have no header line
                for p in [&e, &a] {
                    if p.exists() {
                        let text = fs::read_to_string(p)?;
                        let kept: String = text
                            .lines()
                            .filter(|l| json_iteration(l).is_some_and(|i| i <= it))
                            .map(|l| format!("{l}\n"))
                            .collect();
                        fs::write(p, kept)?;
                    }
                }
                let fresh_metrics = !m.exists();
                let mut metrics = BufWriter::new(append(&m)?);
                if fresh_metrics {
                    writeln!(metrics, "{}", StepMetrics::CSV_HEADER)?;
                }
                Ok(Sinks {
                    dir: dir.to_path_buf(),
                    metrics,
                    eval: BufWriter::new(append(&e)?),
                    audit: BufWriter::new(append(&a)?),
                })
            }
            None => {
                let mut metrics = BufWriter::new(File::create(&m)?);
                writeln!(metrics, "{}", StepMetrics::CSV_HEADER)?;
                Ok(Sinks {
                    dir: dir.to_path_buf(),
                    metrics,
                    eval: BufWriter::new(File::create(&e)?),
                    audit: BufWriter::new(File::create(&a)?),
                })
            }
        }
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush()?;
        self.eval.flush()?;
        self.audit.flush()?;
        Ok(())
    }
}

fn evaluate_point(
    trainer: &Trainer,
    state: &TrainState,
    split: &DatasetSplit,
    tail: &[usize],
    exec: Exec,
) -> Result<(EvalRecord, report::ConfusionMatrix, AuditTable)> {
    let ema = state.ema.params();
    let cm = report::evaluate(&trainer.net, ema, &split.test, exec)?;
    let table = report::audit_pool(
        &trainer.net,
        ema,
        &split.unlabeled,
        split.hidden_labels(),
        &trainer.selection,
        state.iteration,
        exec,
    )?;
    let recalls = cm.per_class_recall();
    let rec = EvalRecord {
        iteration: state.iteration,
        accuracy: cm.accuracy(),
        tail_recall: report::mean_recall(&recalls, tail),
        per_class_recall: recalls,
        pseudo_selected: table.selected(),
        pseudo_precision: table.overall_precision(),
    };
    Ok((rec, cm, table))
}

/// Runs the configured number of steps on `split`, evaluating the EMA model
/// on the test split at iteration 0, every `eval_interval` steps and at the
/// end.
pub fn fit(config: &TrainConfig, split: &DatasetSplit, opts: &FitOptions) -> Result<FitOutcome> {
    let exec = opts.exec;
    let trainer = Trainer::new(config.clone(), split.classes, split.height, split.width, exec)?;
    let train_counts = split.train_class_counts();
    let tail = smallest_classes(&train_counts, split.classes.div_ceil(2));

    let mut resumed = None;
    if opts.resume {
        if let Some(dir) = &opts.out_dir {
            let p = dir.join(LAST_CKPT);
            if p.exists() {
                resumed = Some(from_checkpoint(&trainer, &Checkpoint::load(&p)?)?);
            }
        }
    }
    let (mut state, mut best_accuracy) = match resumed {
        Some((s, b)) => (s, b),
        None => (trainer.init_state()?, None),
    };
    let start = state.iteration;
    let resume_at = (start > 0).then_some(start);
    let mut sinks = match &opts.out_dir {
        Some(dir) => Some(Sinks::open(dir, resume_at)?),
        None => None,
    };

    let mut steps = Vec::new();
    let mut evals = Vec::new();
    let mut audits = Vec::new();
    let mut last_cm = None;
    let mut best: Option<EvalRecord> = None;

    let mut do_eval = |state: &TrainState, sinks: &mut Option<Sinks>, best_accuracy: &mut Option<f64>| -> Result<()> {
        let (rec, cm, table) = evaluate_point(&trainer, state, split, &tail, exec)?;
        let improved = best_accuracy.is_none_or(|b| rec.accuracy > b);
        if improved {
            *best_accuracy = Some(rec.accuracy);
            best = Some(rec.clone());
        }
        if let Some(s) = sinks {
            writeln!(s.eval, "{}", to_fixed_json(&rec)?)?;
            for line in audit_lines(state.iteration, &table) {
                writeln!(s.audit, "{}", to_fixed_json(&line)?)?;
            }
            s.flush()?;
            let ckpt = to_checkpoint(&trainer, state, *best_accuracy)?;
            if improved {
                ckpt.save(&s.dir.join(BEST_CKPT))?;
            }
            ckpt.save(&s.dir.join(LAST_CKPT))?;
        }
        if opts.progress {
            println!(
                "iter {:>6}/{}  acc {:6.2}  tail {:6.2}  pseudo {:>5} @ {}",
                state.iteration,
                trainer.config.iterations,
                100.0 * rec.accuracy,
                100.0 * rec.tail_recall,
                rec.pseudo_selected,
                rec.pseudo_precision.map_or("-".to_string(), |p| format!("{:.2}", 100.0 * p)),
            );
        }
        audits.push((state.iteration, table));
        last_cm = Some(cm);
        evals.push(rec);
        Ok(())
    };

    if start == 0 {
        do_eval(&state, &mut sinks, &mut best_accuracy)?;
    }
    let total = trainer.config.iterations;
    let mut interrupted = false;
    let interval = trainer.config.eval_interval;
    while state.iteration < total {
        let m = trainer.step_on(&mut state, &split.labeled, &split.unlabeled)?;
        if let Some(s) = &mut sinks {
            writeln!(s.metrics, "{}", m.csv_row())?;
        }
        steps.push(m);
        if state.iteration % interval == 0 || state.iteration == total {
            do_eval(&state, &mut sinks, &mut best_accuracy)?;
        }
        if opts.stop_after.is_some_and(|s| state.iteration >= s) && state.iteration < total {
            interrupted = true;
            break;
        }
    }
    let cm = match last_cm {
        Some(cm) => cm,
        None => report::evaluate(&trainer.net, state.ema.params(), &split.test, exec)?,
    };
    let report = summarize(&cm, &train_counts, &audits, &trainer.config.fingerprint());
    let best = match best {
        Some(b) => b,
        None => evals
            .last()
            .cloned()
            .map_or_else(|| evaluate_point(&trainer, &state, split, &tail, exec).map(|r| r.0), Ok)?,
    };
    if let Some(s) = &mut sinks {
        s.flush()?;
        if interrupted {
            to_checkpoint(&trainer, &state, best_accuracy)?.save(&s.dir.join(LAST_CKPT))?;
            return Ok(FitOutcome { state, steps, evals, best, report });
        }
        to_checkpoint(&trainer, &state, best_accuracy)?.save(&s.dir.join(FINAL_CKPT))?;
        fs::write(s.dir.join(REPORT_JSON), to_fixed_json(&report)? + "\n")?;
        fs::write(s.dir.join(REPORT_TEXT), report.to_text())?;
    }
    Ok(FitOutcome { state, steps, evals, best, report })
}
