use log::{debug, info, warn};
use rand::seq::SliceRandom;

use super::model::{stage_view, IngestCache, OdeLstmModel, TrackingLayout};
use super::{PredictorKind, StageInput};
use crate::channel::{best_beam, channel_vector, Codebook};
use crate::error::{Error, Result};
use crate::mobility::{prediction_instants, ChannelTrace};
use crate::nn::{
    adam_step, cross_entropy, ode_evolve, ode_evolve_backward, softmax, softmax_cross_entropy_backward, AdamConfig,
    AdamState, Parameters, Tensor,
};
use crate::protocol::{decide_periodic, ProtocolConfig, StageDriver, StageMode};
use crate::selection::CandidateSet;
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Trajectories per gradient step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Use every `query_stride`-th prediction instant as a training label.
    pub query_stride: usize,
    /// Scan period used while generating training stages; 0 scans only at stage 0.
    pub scan_period_stages: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            learning_rate: 3e-3,
            query_stride: 7,
            scan_period_stages: 0,
            clip_norm: 5.0,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.query_stride == 0 {
            return Err(Error::Config("train.batch_size and train.query_stride must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("train.clip_norm must be >= 0".into()));
        }
        Ok(())
    }
}

/// One alignment stage as the model sees it, with its labels.
#[derive(Debug, Clone)]
pub struct StageSample {
    pub time_s: f64,
    pub input: Tensor,
    pub candidate_set: CandidateSet,
    /// `(elapsed seconds, 1-based local label)` per supervised instant.
    pub labels: Vec<(f64, usize)>,
}

#[derive(Debug, Clone)]
pub struct TrainingSequence {
    pub stages: Vec<StageSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss of the initial model over the whole set.
    pub initial_loss: f64,
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Simulates the alignment stages of every trace and records what the model
/// would read together with oracle labels. Candidate sets depend only on the
/// measured optima, so the data does not depend on the model being trained.
pub fn build_sequences(
    traces: &[ChannelTrace],
    protocol: &ProtocolConfig,
    model: &OdeLstmModel,
    train: &TrainConfig,
    codebook: &Codebook,
) -> Result<(Vec<TrainingSequence>, usize)> {
    if traces.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    protocol.validate(codebook.size())?;
    train.validate()?;
    let layout = TrackingLayout {
        strategy: protocol.strategy,
        size: protocol.candidate_size,
        j0: protocol.j0,
    };
    let q = codebook.size();
    let mut rng = seeded_rng(train.seed);
    let mut skipped = 0;
    let mut sequences = Vec::with_capacity(traces.len());
    for trace in traces {
        let mut driver = StageDriver::new(protocol);
        let mut stages = Vec::new();
        for n in 0..protocol.stage_count(trace) {
            let mode = if train.scan_period_stages > 0 && decide_periodic(n, train.scan_period_stages) {
                StageMode::Scan
            } else {
                StageMode::Track
            };
            let obs = driver.probe(trace, codebook, n, mode, &mut rng)?;
            let input = StageInput {
                stage_index: n,
                time_s: obs.time_s,
                period_s: protocol.period_s,
                mode: obs.mode,
                candidate_set: &obs.candidate_set,
                pilots: &obs.pilots,
                optima: driver.optima(),
            };
            let (cs, pilots) = stage_view(model, &layout, &input, q)?;
            if pilots.len() != model.config.width {
                return Err(Error::Config(format!(
                    "model width {} does not match the {} pilots per stage",
                    model.config.width,
                    pilots.len()
                )));
            }
            let mut labels = Vec::new();
            let instants = prediction_instants(obs.time_s, protocol.period_s, protocol.prediction_count);
            for (i, &t) in instants.iter().enumerate() {
                if (i + 1) % train.query_stride != 0 && i + 1 != instants.len() {
                    continue;
                }
                let snap = trace.nearest(t);
                if snap.paths.iter().all(|p| p.gain.norm_sqr() == 0.0) {
                    skipped += 1;
                    continue;
                }
                let best = best_beam(&channel_vector(snap, codebook.array())?, codebook)?;
                labels.push((t - obs.time_s, cs.nearest_local(best)));
            }
            stages.push(StageSample {
                time_s: obs.time_s,
                input: super::pack_pilots(&pilots),
                candidate_set: cs,
                labels,
            });
        }
        sequences.push(TrainingSequence { stages });
    }
    if skipped > 0 {
        warn!("{skipped} training labels skipped: empty channel");
    }
    Ok((sequences, skipped))
}

/// Loss summed over every label of one sequence, and its gradient.
pub fn sequence_gradient(model: &OdeLstmModel, seq: &TrainingSequence) -> Result<(f64, usize, OdeLstmModel)> {
    let mut grads = model.zeroed();
    let (loss, count) = sequence_pass(model, seq, Some(&mut grads))?;
    Ok((loss, count, grads))
}

/// Summed loss and label count of one sequence, with gradients when asked.
fn sequence_pass(model: &OdeLstmModel, seq: &TrainingSequence, mut grads: Option<&mut OdeLstmModel>) -> Result<(f64, usize)> {
    let hs = model.config.hidden_size;
    let mut h = vec![0.0; hs];
    let mut c = vec![0.0; hs];
    let mut loss = 0.0;
    let mut count = 0;
    let mut tape: Vec<(IngestCache, Vec<f64>)> = Vec::with_capacity(seq.stages.len());
    for stage in &seq.stages {
        let (h2, c2, cache) = model.ingest_cached(&stage.input, &h, &c)?;
        h = h2;
        c = c2;
        let mut dh = vec![0.0; hs];
        for &(elapsed, label) in &stage.labels {
            let scaled = elapsed / model.config.time_scale_s;
            let (s, ode_cache) = match &model.ode {
                Some(ode) => {
                    let (s, oc) = ode_evolve(ode, &h, scaled, model.config.ode_steps)?;
                    (s, Some(oc))
                }
                None => (h.clone(), None),
            };
            let probs = softmax(&model.fc.forward(&s));
            loss += cross_entropy(&probs, label)?;
            count += 1;
            if let Some(g) = grads.as_deref_mut() {
                let dz = softmax_cross_entropy_backward(&probs, label);
                let ds = model.fc.backward(&s, &dz, &mut g.fc);
                let d = match (&model.ode, ode_cache, g.ode.as_mut()) {
                    (Some(ode), Some(oc), Some(gode)) => ode_evolve_backward(ode, &oc, &ds, gode),
                    _ => ds,
                };
                crate::nn::axpy(1.0, &d, &mut dh);
            }
        }
        if grads.is_some() {
            tape.push((cache, dh));
        }
    }
    if let Some(g) = grads {
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for (cache, dh_query) in tape.iter().rev() {
            crate::nn::axpy(1.0, dh_query, &mut dh_next);
            let (dh, dc) = model.ingest_backward(cache, &dh_next, &dc_next, g)?;
            dh_next = dh;
            dc_next = dc;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("training loss is not finite".into()));
    }
    Ok((loss, count))
}

/// Mean loss over a set of sequences.
pub fn mean_loss(model: &OdeLstmModel, sequences: &[TrainingSequence]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for seq in sequences {
        let (l, n) = sequence_pass(model, seq, None)?;
        total += l;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Minibatch Adam over whole sequences (truncation-free BPTT).
pub fn train_model(model: &mut OdeLstmModel, sequences: &[TrainingSequence], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    let kind = if model.config.one_step {
        PredictorKind::Lstm
    } else {
        PredictorKind::OdeLstm
    };
    let initial_loss = mean_loss(model, sequences)?;
    info!("{kind}: initial loss {initial_loss:.5}");
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.num_params());
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut rng = seeded_rng(cfg.seed ^ 0x05ee_d0fb_a7c4);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zeroed();
            let mut count = 0;
            for &i in batch {
                let (l, n) = sequence_pass(model, &sequences[i], Some(&mut grads))?;
                epoch_loss += l;
                count += n;
            }
            epoch_count += count;
            if count == 0 {
                continue;
            }
            grads.scale(1.0 / count as f64);
            if cfg.clip_norm > 0.0 {
                let norm = grads.flatten().iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.clip_norm {
                    grads.scale(cfg.clip_norm / norm);
                }
            }
            adam_step(model, &grads, &mut state, &adam)?;
        }
        let mean = if epoch_count == 0 {
            0.0
        } else {
            epoch_loss / epoch_count as f64
        };
        debug!("{kind}: epoch {} loss {mean:.5}", epoch + 1);
        epoch_losses.push(mean);
    }
    if let Some(last) = epoch_losses.last() {
        info!("{kind}: final epoch loss {last:.5}");
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_codebook, ArrayConfig};
    use crate::mobility::{channel_trace, gen_trajectory, MobilityConfig, SceneConfig};
    use crate::predictors::{ModelConfig, Variant};

    fn trace(seed: u64, duration: f64) -> ChannelTrace {
        let mob = MobilityConfig {
            duration_s: duration,
            ..MobilityConfig::default()
        };
        let mut rng = seeded_rng(seed);
        let traj = gen_trajectory(&mob, &mut rng).unwrap();
        channel_trace(&traj, &SceneConfig::default(), &ArrayConfig::default(), &mut rng).unwrap()
    }

    fn small_config(one_step: bool) -> ModelConfig {
        ModelConfig {
            hidden_size: 8,
            conv_channels: 3,
            ode_hidden: 6,
            ode_steps: 4,
            one_step,
            ..ModelConfig::default()
        }
    }

    /// Two stages of dense random inputs; one random label after the second.
    fn toy_sequence(cfg: &ModelConfig, seed: u64) -> TrainingSequence {
        use rand::Rng;
        let mut rng = seeded_rng(seed);
        let stages = (0..2)
            .map(|n| {
                let data = (0..2 * cfg.width).map(|_| rng.random_range(-1.0..1.0)).collect();
                let labels = (0..n)
                    .map(|_| (rng.random_range(0.0..0.1), rng.random_range(1..=cfg.width)))
                    .collect();
                StageSample {
                    time_s: 0.1 * n as f64,
                    input: Tensor::from_vec(&[2, cfg.width], data).unwrap(),
                    candidate_set: CandidateSet::full(cfg.width),
                    labels,
                }
            })
            .collect();
        TrainingSequence { stages }
    }

    /// Analytic vs central-difference gradient of the whole stack. A few of
    /// the ~1500 components land within 1e-7 of zero, where differencing a
    /// loss of order 1 cannot resolve them relatively, so agreement is
    /// measured in norm and per component in absolute terms.
    #[test]
    fn full_stack_gradient() {
        for one_step in [false, true] {
            for seed in 0..5 {
                let cfg = small_config(one_step);
                let mut model = OdeLstmModel::new(cfg.clone(), &mut seeded_rng(seed)).unwrap();
                model.randomize_head(&mut seeded_rng(100 + seed));
                let seq = toy_sequence(&cfg, 200 + seed);
                let (_, _, grads) = sequence_gradient(&model, &seq).unwrap();
                let analytic = grads.flatten();
                let numeric = central_differences(&model, &seq, 1e-5);
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
                let rel = norm(&diff) / norm(&analytic).max(norm(&numeric));
                let worst = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                assert!(rel <= 1e-6, "one_step={one_step} seed {seed}: norm error {rel}");
                assert!(worst <= 1e-8, "one_step={one_step} seed {seed}: abs error {worst}");
            }
        }
    }

    fn central_differences(model: &OdeLstmModel, seq: &TrainingSequence, eps: f64) -> Vec<f64> {
        let mut theta = model.flatten();
        let mut m = model.clone();
        let mut loss = |t: &[f64]| {
            m.load_flat(t);
            sequence_gradient(&m, seq).unwrap().0
        };
        (0..theta.len())
            .map(|i| {
                let orig = theta[i];
                theta[i] = orig + eps;
                let plus = loss(&theta);
                theta[i] = orig - eps;
                let minus = loss(&theta);
                theta[i] = orig;
                (plus - minus) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn zero_head_starts_at_ln_k() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        let model = OdeLstmModel::new(ModelConfig::default(), &mut seeded_rng(1)).unwrap();
        let (seqs, _) =
            build_sequences(&[trace(3, 0.5)], &ProtocolConfig::default(), &model, &TrainConfig::default(), &cb).unwrap();
        let l = mean_loss(&model, &seqs).unwrap();
        assert!((l - (11f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn scanning_variant_reads_all_beams() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        let cfg = ModelConfig {
            variant: Variant::Scanning,
            width: 64,
            ..small_config(false)
        };
        let model = OdeLstmModel::new(cfg, &mut seeded_rng(1)).unwrap();
        assert_eq!(model.convs.len(), 3);
        let (seqs, _) =
            build_sequences(&[trace(4, 0.3)], &ProtocolConfig::default(), &model, &TrainConfig::default(), &cb).unwrap();
        for s in &seqs[0].stages {
            assert_eq!(s.input.shape(), &[2, 64]);
            assert_eq!(s.candidate_set.len(), 64);
        }
    }

    #[test]
    fn overfits_one_trajectory_deterministically() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            learning_rate: 1e-2,
            query_stride: 11,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = OdeLstmModel::new(small_config(false), &mut seeded_rng(2)).unwrap();
            let (seqs, _) = build_sequences(&[trace(5, 0.5)], &ProtocolConfig::default(), &model, &cfg, &cb).unwrap();
            let report = train_model(&mut model, &seqs, &cfg).unwrap();
            (report, model)
        };
        let (a, ma) = run();
        assert!((a.initial_loss - (11f64).ln()).abs() < 1e-12);
        let last = *a.epoch_losses.last().unwrap();
        assert!(last < 0.1 * a.initial_loss, "{} -> {last}", a.initial_loss);
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }
}
