use std::hint::black_box;

use beamcast::channel::{all_gains, best_beam, build_codebook, channel_vector, synth_pilot};
use beamcast::harness::{synth_trace, ExperimentConfig, Split};
use beamcast::predictors::{
    arima_fit, ekf_update, odelstm_ingest, odelstm_query, ArimaConfig, EkfConfig, EkfState, HoldPredictor,
    ModelConfig, OdeLstmModel, PredictorState,
};
use beamcast::protocol::{run_episode, ProtocolConfig, SwitchRule};
use beamcast::selection::{build_candidate_set, DirectionEstimate, Strategy};
use beamcast::{seeded_rng, ArrayConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn channel(c: &mut Criterion) {
    let array = ArrayConfig::default();
    let cb = build_codebook(&array).unwrap();
    let trace = synth_trace(&ExperimentConfig::default(), Split::Eval, 0, 10.0).unwrap().trace;
    let h = channel_vector(&trace.snapshots[0], &array).unwrap();
    c.bench_function("all_gains_q64", |b| b.iter(|| all_gains(black_box(&h), &cb).unwrap()));
    c.bench_function("best_beam_q64", |b| b.iter(|| best_beam(black_box(&h), &cb).unwrap()));
    c.bench_function("candidate_set_uneven_11", |b| {
        b.iter(|| build_candidate_set(Strategy::Uneven, black_box(63), 11, 64, 2, DirectionEstimate::Increasing).unwrap())
    });
}

fn predictors(c: &mut Criterion) {
    let array = ArrayConfig::default();
    let cb = build_codebook(&array).unwrap();
    let trace = synth_trace(&ExperimentConfig::default(), Split::Eval, 0, 10.0).unwrap().trace;
    let h = channel_vector(&trace.snapshots[0], &array).unwrap();
    let cs = build_candidate_set(Strategy::Uneven, 32, 11, 64, 2, DirectionEstimate::Increasing).unwrap();
    let mut rng = seeded_rng(1);
    let pilots: Vec<_> = cs
        .global_indices()
        .iter()
        .map(|&q| synth_pilot(&h, q, &cb, 1e-3, 0.0, &mut rng).unwrap())
        .collect();

    let model = OdeLstmModel::new(ModelConfig::default(), &mut seeded_rng(2)).unwrap();
    let state = PredictorState::new(&model, 64);
    c.bench_function("odelstm_ingest", |b| {
        b.iter(|| odelstm_ingest(&model, black_box(&state), &pilots, &cs).unwrap())
    });
    let ingested = odelstm_ingest(&model, &state, &pilots, &cs).unwrap();
    c.bench_function("odelstm_query", |b| {
        b.iter(|| odelstm_query(&model, black_box(&ingested), 0.05, &cs).unwrap())
    });

    let ekf = EkfState::new(0.1, 0.0, 0.0, &EkfConfig::default());
    c.bench_function("ekf_update_11", |b| b.iter(|| ekf_update(black_box(&ekf), &pilots, &cb).unwrap()));

    let series: Vec<f64> = (0..400).map(|i| 20.0 + 0.05 * i as f64 + (i as f64 * 0.3).sin()).collect();
    c.bench_function("arima_fit_400", |b| {
        b.iter(|| arima_fit(black_box(&series), &ArimaConfig::default()).unwrap())
    });
}

fn episode(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let cb = build_codebook(&cfg.array).unwrap();
    let trace = synth_trace(&cfg, Split::Eval, 0, 10.0).unwrap().trace;
    let protocol = ProtocolConfig {
        switch_rule: SwitchRule::Adaptive,
        ..ProtocolConfig::default()
    };
    c.bench_function("episode_hold_1s", |b| {
        b.iter(|| {
            let mut p = HoldPredictor::default();
            run_episode(black_box(&trace), &mut p, &protocol, &cb, &mut seeded_rng(3)).unwrap()
        })
    });
}

criterion_group!(benches, channel, predictors, episode);
criterion_main!(benches);
