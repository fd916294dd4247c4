use std::sync::Arc;

use beamcast::harness::{
    aggregate, evaluate, read_split, sweep, synth_split, synth_trace, train_learned, trace_seed, write_dataset,
    ExperimentConfig, LearnedModels, Split,
};
use beamcast::predictors::PredictorKind;
use beamcast::protocol::SwitchRule;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.mobility.duration_s = 0.4;
    cfg.train_traces = 3;
    cfg.eval_traces = 3;
    cfg.predictors = vec![PredictorKind::Ekf, PredictorKind::Arima, PredictorKind::Oracle, PredictorKind::Hold];
    cfg.velocities_mps = vec![5.0, 20.0];
    cfg
}

#[test]
fn eval_seeds_follow_train_seeds() {
    let cfg = small();
    assert_eq!(trace_seed(&cfg, Split::Train, 0), cfg.seed);
    assert_eq!(trace_seed(&cfg, Split::Train, 2), cfg.seed + 2);
    assert_eq!(trace_seed(&cfg, Split::Eval, 0), cfg.seed + 3);
}

#[test]
fn sweep_traces_are_paired_across_speeds() {
    let cfg = small();
    for j in 0..cfg.eval_traces {
        let slow = synth_trace(&cfg, Split::Eval, j, 5.0).unwrap();
        let fast = synth_trace(&cfg, Split::Eval, j, 30.0).unwrap();
        assert_eq!(slow.id, fast.id);
        assert_eq!(slow.seed, fast.seed);
        // Same start; the user then moves six times further at the higher speed.
        assert_eq!(slow.trace.snapshots[0], fast.trace.snapshots[0]);
        assert_ne!(slow.trace.snapshots.last(), fast.trace.snapshots.last());
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let written = write_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(written.len(), 6);
    let train = read_split(dir.path(), Split::Train).unwrap();
    let eval = read_split(dir.path(), Split::Eval).unwrap();
    assert_eq!(train.len(), 3);
    for (a, b) in written.iter().zip(train.iter().chain(&eval)) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.trace, b.trace);
    }
    assert_eq!(eval[0].trace, synth_split(&cfg, Split::Eval, cfg.mobility.speed_mps).unwrap()[0].trace);
}

#[test]
fn sweep_is_deterministic_and_bounded() {
    let cfg = small();
    let a = sweep(&cfg, &LearnedModels::default()).unwrap();
    let b = sweep(&cfg, &LearnedModels::default()).unwrap();
    assert_eq!(a, b);
    // 4 predictors x 2 rules x 2 velocities.
    assert_eq!(a.gain_vs_velocity.len(), 16);
    assert_eq!(a.overhead.len(), 4);
    for v in [5.0, 20.0] {
        assert_eq!(a.mean_gain(PredictorKind::Oracle, SwitchRule::Adaptive, v), Some(1.0));
        assert_eq!(a.mean_gain(PredictorKind::Oracle, SwitchRule::Periodic, v), Some(1.0));
        // Four stages, scans at 0 and 2; stage 0 is not counted.
        assert_eq!(a.overhead_of(SwitchRule::Periodic, v), Some((11.0 + 64.0 + 11.0) / (3.0 * 64.0)));
    }
    for r in &a.gain_vs_tau {
        assert!((0.0..=1.0).contains(&r.mean_norm_gain));
        assert_eq!(r.n, cfg.eval_traces * 4);
    }
    let dir = tempfile::tempdir().unwrap();
    a.write_csvs(&dir.path().join("a")).unwrap();
    b.write_csvs(&dir.path().join("b")).unwrap();
    for f in ["gain_vs_tau.csv", "gain_vs_velocity.csv", "overhead.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn aggregation_ignores_nothing_but_order() {
    let cfg = small();
    let groups = vec![(10.0, synth_split(&cfg, Split::Eval, 10.0).unwrap())];
    let results = evaluate(&cfg, &LearnedModels::default(), &[SwitchRule::Adaptive], &groups).unwrap();
    let m = aggregate(&results, "t");
    let mut per_trace = 0.0;
    let mut count = 0usize;
    for r in results.iter().filter(|r| r.predictor == PredictorKind::Hold) {
        for p in r.log.stages.iter().flat_map(|s| &s.predictions) {
            per_trace += p.normalized_gain;
            count += 1;
        }
    }
    let direct = per_trace / count as f64;
    let reported = m.mean_gain(PredictorKind::Hold, SwitchRule::Adaptive, 10.0).unwrap();
    assert!((direct - reported).abs() < 1e-12, "{direct} vs {reported}");
    assert!(m.gain_vs_velocity.iter().all(|r| r.experiment_id == "t"));
}

#[test]
fn learned_predictors_train_and_evaluate() {
    let mut cfg = small();
    cfg.model.hidden_size = 8;
    cfg.model.conv_channels = 3;
    cfg.model.ode_hidden = 8;
    cfg.model.ode_steps = 4;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 2;
    cfg.predictors = vec![PredictorKind::OdeLstm, PredictorKind::Lstm];
    let traces = synth_split(&cfg, Split::Train, cfg.mobility.speed_mps).unwrap();
    let (ode, report) = train_learned(&cfg, PredictorKind::OdeLstm, &traces, None).unwrap();
    assert_eq!(report.epoch_losses.len(), 2);
    let (lstm, _) = train_learned(&cfg, PredictorKind::Lstm, &traces, None).unwrap();
    assert!(train_learned(&cfg, PredictorKind::OdeLstm, &traces, Some(lstm.clone())).is_err());
    let models = LearnedModels {
        odelstm: Some(Arc::new(ode)),
        lstm: Some(Arc::new(lstm)),
    };
    let m = sweep(&cfg, &models).unwrap();
    assert_eq!(m.gain_vs_tau.len(), 2 * 2 * 2 * 99);
}
