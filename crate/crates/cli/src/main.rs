use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ltssl_core::data::{
    build_longtail,
    format::{load_dataset, save_dataset},
    make_splits,
    synth::synth_generate_tagged,
    Dataset, LongTailSpec, SynthParams,
};
use ltssl_core::energy::{BaselineMode, SelectionConfig};
use ltssl_core::report::{self, audit_lines, summarize, sweep, to_fixed_json, SweepSpec};
use ltssl_core::rng;
use ltssl_core::trainer::{fit, load_eval_model, FitOptions, TrainConfig};
use ltssl_core::{Error, Exec, Result};

#[derive(Parser)]
#[command(name = "ltssl", version, about = "Semi-supervised long-tailed classification")]
struct Cli {
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic SAR-like pool with the same count per class.
    GenData(GenData),
    /// Subsample a pool to a long-tailed class distribution.
    BuildLongtail(BuildLongtail),
    /// Train on a pool and evaluate on a test set.
    Train(Train),
    /// Evaluate a checkpoint's EMA model on a test set.
    Eval(Eval),
    /// Audit a checkpoint's pseudo-labels against the hidden labels.
    AuditPseudo(AuditPseudo),
    /// Train over a hyperparameter grid and write one CSV.
    Sweep(Sweep),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw from the independent test stream instead of the training stream.
    #[arg(long)]
    test: bool,
    /// First sample id.
    #[arg(long, default_value_t = 0)]
    id_base: u32,
    /// Generator parameters as JSON (overrides --size).
    #[arg(long)]
    synth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildLongtail {
    #[arg(long)]
    input: PathBuf,
    /// Head-class count.
    #[arg(long, default_value_t = 100)]
    head: usize,
    #[arg(long, default_value_t = 10.0)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat JSON training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set tau_e=-10.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p)?)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| Error::config(format!("override `{kv}` is not KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        for w in cfg.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct SplitArgs {
    /// Training pool (all samples labeled).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    label_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl SplitArgs {
    fn load(&self) -> Result<ltssl_core::data::DatasetSplit> {
        let pool = load_dataset(&self.data)?;
        let test = load_dataset(&self.test)?;
        make_splits(&pool, self.label_fraction, self.split_seed, &test)
    }
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Continue from <out>/last.ckpt when present.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gate {
    Energy,
    Confidence,
}

#[derive(Args)]
struct AuditPseudo {
    #[arg(long)]
    checkpoint: PathBuf,
    /// The training pool the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    label_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Gate to audit; defaults to the checkpoint's own.
    #[arg(long, value_enum)]
    gate: Option<Gate>,
    #[arg(long, allow_hyphen_values = true)]
    tau_e: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    tau_c: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct Sweep {
    #[command(flatten)]
    split: SplitArgs,
    /// JSON document {"base": {...}, "axes": {"key": [values]}}.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Add a key with its default grid (tau_e, temperature, triplet_margin,
    /// lambda_u, lambda_ahtl).
    #[arg(long)]
    axis: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

fn gen_data(a: &GenData, exec: Exec) -> Result<()> {
    let params = match &a.synth {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SynthParams { height: a.size, width: a.size, ..Default::default() },
    };
    let tag = if a.test { rng::tag::TEST_POOL } else { rng::tag::SAMPLE };
    let counts = vec![a.per_class; a.classes];
    let samples = synth_generate_tagged(&counts, &params, a.seed, tag, a.id_base, exec)?;
    let ds = Dataset { classes: a.classes, height: params.height, width: params.width, samples };
    ds.validate()?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} samples ({} classes, {}x{}) to {}",
        ds.samples.len(),
        ds.classes,
        ds.height,
        ds.width,
        a.out.display()
    );
    Ok(())
}

fn build(a: &BuildLongtail) -> Result<()> {
    let pool = load_dataset(&a.input)?;
    let spec = LongTailSpec { head: a.head, ratio: a.ratio, classes: pool.classes };
    let ds = build_longtail(&pool, &spec, a.seed)?;
    save_dataset(&ds, &a.out)?;
    println!("class counts {:?} -> {}", ds.class_counts(), a.out.display());
    Ok(())
}

fn train(a: &Train, exec: Exec) -> Result<()> {
    let cfg = a.config.load()?;
    let split = a.split.load()?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let opts =
        FitOptions { out_dir: Some(a.out.clone()), resume: a.resume, progress: true, exec, ..Default::default() };
    let out = fit(&cfg, &split, &opts)?;
    print!("{}", out.report.to_text());
    Ok(())
}

fn eval(a: &Eval, exec: Exec) -> Result<()> {
    let (net, ema, cfg) = load_eval_model(&a.checkpoint)?;
    let test = load_dataset(&a.test)?;
    test.validate()?;
    let cm = report::evaluate(&net, &ema, &test.labeled()?, exec)?;
    // without the training pool the test counts stand in for the class sizes
    let rep = summarize(&cm, &test.class_counts(), &[], &cfg.fingerprint());
    match a.format {
        Format::Text => print!("{}", rep.to_text()),
        Format::Json => println!("{}", to_fixed_json(&rep)?),
    }
    Ok(())
}

fn audit_pseudo(a: &AuditPseudo, exec: Exec) -> Result<()> {
    let (net, ema, cfg) = load_eval_model(&a.checkpoint)?;
    let pool = load_dataset(&a.data)?;
    let empty = Dataset { classes: pool.classes, height: pool.height, width: pool.width, samples: vec![] };
    let split = make_splits(&pool, a.label_fraction, a.split_seed, &empty)?;
    let mut sel: SelectionConfig = cfg.selection(net.classes());
    if let Some(t) = a.tau_e {
        sel.tau_e = t;
    }
    if let Some(t) = a.temperature {
        sel.temperature = t;
    }
    match (a.gate, a.tau_c) {
        (Some(Gate::Energy), _) => sel.baseline = BaselineMode::Off,
        (Some(Gate::Confidence), t) => sel.baseline = BaselineMode::Confidence { tau_c: t.unwrap_or(cfg.tau_c) },
        (None, Some(t)) => {
            if let BaselineMode::Confidence { .. } = sel.baseline {
                sel.baseline = BaselineMode::Confidence { tau_c: t };
            }
        }
        (None, None) => {}
    }
    sel.validate()?;
    let table = report::audit_pool(&net, &ema, &split.unlabeled, split.hidden_labels(), &sel, 0, exec)?;
    match a.format {
        Format::Json => {
            for line in audit_lines(0, &table) {
                println!("{}", to_fixed_json(&line)?);
            }
        }
        Format::Text => {
            let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
            println!("class  population  selected  correct  precision  recall  mean_energy");
            for r in &table.rows {
                println!(
                    "{:>5}  {:>10}  {:>8}  {:>7}  {:>9}  {:>6}  {:>11}",
                    r.class,
                    r.population,
                    r.selected,
                    r.correct,
                    pct(r.precision),
                    pct(r.recall),
                    r.mean_energy.map_or_else(|| "-".to_string(), |e| format!("{e:.3}"))
                );
            }
            println!("overall precision {}", pct(table.overall_precision()));
        }
    }
    Ok(())
}

fn run_sweep(a: &Sweep, exec: Exec) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str::<SweepSpec>(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::config(format!("sweep spec: {e}")))?,
        None => SweepSpec { base: a.config.load()?, ..Default::default() },
    };
    for key in &a.axis {
        let grid = sweep::default_axis(key).ok_or_else(|| Error::config(format!("no default grid for `{key}`")))?;
        spec.axes.insert(key.clone(), grid);
    }
    if spec.axes.is_empty() {
        return Err(Error::config("sweep needs at least one axis (--axis or a spec file)"));
    }
    let split = a.split.load()?;
    let rows = report::run_sweep(&spec, &split, exec)?;
    sweep::save_sweep_csv(&rows, &a.out)?;
    let failed = rows.iter().filter(|r| !r.ok).count();
    println!("{} points, {} failed -> {}", rows.len(), failed, a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match &cli.command {
        Command::GenData(a) => gen_data(a, exec),
        Command::BuildLongtail(a) => build(a),
        Command::Train(a) => train(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::AuditPseudo(a) => audit_pseudo(a, exec),
        Command::Sweep(a) => run_sweep(a, exec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
