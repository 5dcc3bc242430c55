use ltssl_core::data::{LabeledSample, SynthParams, SyntheticExperiment, UnlabeledSample};
use ltssl_core::losses::SupervisedObjective;
use ltssl_core::model::EmaParams;
use ltssl_core::trainer::{apply_sgd, fit, lr_schedule, FitOptions, TrainConfig, Trainer};
use ltssl_core::Exec;

fn experiment() -> SyntheticExperiment {
    SyntheticExperiment {
        classes: 3,
        head: 20,
        ratio: 4.0,
        test_per_class: 6,
        synth: SynthParams { height: 8, width: 8, ..Default::default() },
        ..Default::default()
    }
}

fn small(cfg: TrainConfig) -> TrainConfig {
    TrainConfig { channels: vec![4, 8], iterations: 20, eval_interval: 10, ..cfg }
}

fn batches(split: &ltssl_core::data::DatasetSplit) -> (Vec<&LabeledSample>, Vec<&UnlabeledSample>) {
    let l = (0..16).map(|i| &split.labeled[i % split.labeled.len()]).collect();
    let u = (0..112).map(|i| &split.unlabeled[(3 * i) % split.unlabeled.len()]).collect();
    (l, u)
}

#[test]
fn zero_unlabeled_weights_reduce_to_a_supervised_step() {
    let split = experiment().split().unwrap();
    let cfg = small(TrainConfig { lambda_u: 0.0, lambda_ahtl: 0.0, tau_e: Some(1e9), ..Default::default() });
    let trainer = Trainer::new(cfg.clone(), 3, 8, 8, Exec::Sequential).unwrap();
    let mut state = trainer.init_state().unwrap();
    let reference = state.clone();
    let (l, u) = batches(&split);
    let m = trainer.train_step(&mut state, &l, &u).unwrap();
    // every unlabeled sample passes this gate, so both terms were computed
    assert_eq!(m.selected, 112);
    assert!(m.l_u > 0.0);

    let views: Vec<Vec<f32>> = l
        .iter()
        .enumerate()
        .map(|(j, s)| {
            trainer.augmenter.weak_labeled(s.id, &s.pixels, cfg.seed, ltssl_core::rng::derive(&[0, j as u64]))
        })
        .collect();
    let obj = SupervisedObjective { labels: l.iter().map(|s| s.label).collect() };
    let (_, mut g) = trainer.net.value_and_grad(&reference.params, &views, &obj, Exec::Sequential).unwrap();
    let mut params = reference.params.clone();
    let mut v = reference.momentum.clone();
    apply_sgd(
        &mut params,
        &mut v,
        &mut g,
        lr_schedule(0, cfg.iterations, cfg.lr, cfg.schedule),
        cfg.momentum,
        cfg.weight_decay,
    );
    assert_eq!(params.checksum(), state.params.checksum());
    assert_eq!(params, state.params);
}

#[test]
fn zero_learning_rate_keeps_params_and_blends_ema() {
    let split = experiment().split().unwrap();
    let cfg = small(TrainConfig { lr: 0.0, ..Default::default() });
    let trainer = Trainer::new(cfg, 3, 8, 8, Exec::Sequential).unwrap();
    let mut state = trainer.init_state().unwrap();
    state.ema = EmaParams::new(&state.params.zeros_like(), 0.999).unwrap();
    let before = state.params.clone();
    let (l, u) = batches(&split);
    trainer.train_step(&mut state, &l, &u).unwrap();
    assert_eq!(before, state.params);
    for (p, e) in state.params.iter_values().zip(state.ema.params().iter_values()) {
        assert!((e - 0.001 * p).abs() <= 1e-15 * p.abs().max(1.0));
    }
    assert_eq!(state.iteration, 1);
}

#[test]
fn unreachable_threshold_gives_a_valid_supervised_step() {
    let split = experiment().split().unwrap();
    let trainer =
        Trainer::new(small(TrainConfig { tau_e: Some(-1e9), ..Default::default() }), 3, 8, 8, Exec::Sequential)
            .unwrap();
    let mut state = trainer.init_state().unwrap();
    let (l, u) = batches(&split);
    let m = trainer.train_step(&mut state, &l, &u).unwrap();
    assert_eq!((m.selected, m.l_u, m.l_ahtl, m.triplets.count), (0, 0.0, 0.0, 0));
    assert_eq!(m.total, m.l_s);
}

#[test]
fn same_seed_same_checksums_and_exec_modes_agree() {
    let split = experiment().split().unwrap();
    let cfg = small(TrainConfig { iterations: 100, ..Default::default() });
    let run = |exec: Exec| {
        let trainer = Trainer::new(cfg.clone(), 3, 8, 8, exec).unwrap();
        let mut state = trainer.init_state().unwrap();
        let mut sums = Vec::new();
        for _ in 0..100 {
            trainer.step_on(&mut state, &split.labeled, &split.unlabeled).unwrap();
            if state.iteration == 10 || state.iteration == 100 {
                sums.push(state.params.checksum());
            }
        }
        sums
    };
    let a = run(Exec::Sequential);
    assert_eq!(a, run(Exec::Sequential));
    assert_eq!(a, run(Exec::Parallel));
}

#[test]
fn zero_iterations_emit_only_the_initial_evaluation() {
    let split = experiment().split().unwrap();
    let cfg = TrainConfig { iterations: 0, ..small(TrainConfig::default()) };
    let out = fit(&cfg, &split, &FitOptions::default()).unwrap();
    assert!(out.steps.is_empty());
    assert_eq!(out.evals.len(), 1);
    assert_eq!(out.evals[0].iteration, 0);
    assert_eq!(out.report.confusion.total(), split.test.len() as u64);
}

#[test]
fn fit_writes_identical_files_twice_and_resumes() {
    let split = experiment().split().unwrap();
    let cfg = small(TrainConfig::default());
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs[..2] {
        fit(&cfg, &split, &FitOptions { out_dir: Some(d.path().into()), ..Default::default() }).unwrap();
    }
    for f in ["metrics.csv", "eval.jsonl", "audit.jsonl", "report.json"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dirs[0].path().join("report.json")).unwrap()).unwrap();
    for key in [
        "accuracy",
        "per_class_recall",
        "head_recall",
        "tail_recall",
        "tail_classes",
        "pseudo",
        "fingerprint",
        "confusion",
    ] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }

    let dir = dirs[2].path();
    let stopped =
        fit(&cfg, &split, &FitOptions { out_dir: Some(dir.into()), stop_after: Some(10), ..Default::default() })
            .unwrap();
    assert_eq!(stopped.state.iteration, 10);
    assert!(!dir.join("final.ckpt").exists());
    let resumed =
        fit(&cfg, &split, &FitOptions { out_dir: Some(dir.into()), resume: true, ..Default::default() }).unwrap();
    assert_eq!(resumed.steps.first().map(|s| s.step), Some(10));
    assert_eq!(resumed.state.iteration, 20);
    assert!(dir.join("final.ckpt").exists());
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let steps: Vec<u64> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (0..20).collect::<Vec<_>>());
    let full = std::fs::read_to_string(dirs[0].path().join("metrics.csv")).unwrap();
    // the first ten rows precede the interruption and match exactly
    assert_eq!(metrics.lines().take(11).collect::<Vec<_>>(), full.lines().take(11).collect::<Vec<_>>());
}

#[test]
fn baseline_configuration_is_the_confidence_pipeline() {
    let b = TrainConfig::baseline();
    let sel = b.selection(5);
    assert_eq!(sel.baseline, ltssl_core::energy::BaselineMode::Confidence { tau_c: 0.95 });
    assert_eq!((b.lambda_margin, b.lambda_ahtl, b.lambda_u), (0.0, 0.0, 1.0));
}
