//! Training and evaluation runs, and the four experiment commands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use log::info;

use super::config::ExperimentConfig;
use super::data::{csv_error, read_split, synth_split, write_dataset, Split, TraceRecord};
use super::metrics::{aggregate, EpisodeResult, Metrics};
use crate::channel::{build_codebook, Codebook};
use crate::error::{Error, Result};
use crate::predictors::{
    build_sequences, train_model, ArimaPredictor, BeamPredictor, EkfPredictor, HoldPredictor, LstmPredictor,
    OdeLstmModel, OdeLstmPredictor, OraclePredictor, PredictorKind, TrackingLayout, TrainReport,
};
use crate::protocol::{run_episode, ProtocolConfig, SwitchRule};
use crate::seeded_rng;

/// Trained networks for the learned predictors, when loaded.
#[derive(Debug, Clone, Default)]
pub struct LearnedModels {
    pub odelstm: Option<Arc<OdeLstmModel>>,
    pub lstm: Option<Arc<OdeLstmModel>>,
}

impl LearnedModels {
    fn get(&self, kind: PredictorKind) -> Result<Arc<OdeLstmModel>> {
        let slot = match kind {
            PredictorKind::OdeLstm => &self.odelstm,
            PredictorKind::Lstm => &self.lstm,
            _ => unreachable!("not a learned predictor"),
        };
        slot.clone()
            .ok_or_else(|| Error::Config(format!("predictor {kind} needs a trained checkpoint")))
    }
}

pub fn checkpoint_file(kind: PredictorKind) -> String {
    format!("{kind}.bmdl")
}

pub fn loss_file(kind: PredictorKind) -> String {
    format!("{kind}_loss.csv")
}

fn learned(cfg: &ExperimentConfig) -> Vec<PredictorKind> {
    cfg.predictors.iter().copied().filter(|k| k.is_learned()).collect()
}

/// Initial weights of a learned predictor; a different stream per kind.
fn fresh_model(cfg: &ExperimentConfig, kind: PredictorKind) -> Result<OdeLstmModel> {
    let salt = match kind {
        PredictorKind::OdeLstm => 0x6f64,
        _ => 0x6c73,
    };
    let one_step = kind == PredictorKind::Lstm;
    OdeLstmModel::new(cfg.model_config(one_step), &mut seeded_rng(cfg.seed ^ salt))
}

fn check_traces(cfg: &ExperimentConfig, traces: &[TraceRecord]) -> Result<()> {
    for r in traces {
        if r.trace.array != cfg.array {
            return Err(Error::Config(format!(
                "trace {} was generated for {} antennas / {} beams, config has {} / {}",
                r.id, r.trace.array.num_antennas, r.trace.array.codebook_size, cfg.array.num_antennas, cfg.array.codebook_size
            )));
        }
    }
    Ok(())
}

/// Trains one learned predictor on `traces`, starting from `resume` if given.
pub fn train_learned(
    cfg: &ExperimentConfig,
    kind: PredictorKind,
    traces: &[TraceRecord],
    resume: Option<OdeLstmModel>,
) -> Result<(OdeLstmModel, TrainReport)> {
    if !kind.is_learned() {
        return Err(Error::Config(format!("predictor {kind} is not trainable")));
    }
    check_traces(cfg, traces)?;
    let expected = cfg.model_config(kind == PredictorKind::Lstm);
    let mut model = match resume {
        Some(m) if m.config != expected => {
            return Err(Error::Config(format!(
                "checkpoint architecture {:?} does not match the configured {:?}",
                m.config, expected
            )))
        }
        Some(m) => m,
        None => fresh_model(cfg, kind)?,
    };
    let codebook = build_codebook(&cfg.array)?;
    let owned: Vec<_> = traces.iter().map(|r| r.trace.clone()).collect();
    let train = cfg.train_config();
    let (sequences, _) = build_sequences(&owned, &cfg.protocol, &model, &train, &codebook)?;
    info!("training {kind} on {} sequences for {} epochs", sequences.len(), train.epochs);
    let report = train_model(&mut model, &sequences, &train)?;
    Ok((model, report))
}

fn predictor_for(
    kind: PredictorKind,
    cfg: &ExperimentConfig,
    models: &LearnedModels,
    record: &TraceRecord,
) -> Result<Box<dyn BeamPredictor>> {
    let layout = TrackingLayout {
        strategy: cfg.protocol.strategy,
        size: cfg.protocol.candidate_size,
        j0: cfg.protocol.j0,
    };
    Ok(match kind {
        PredictorKind::OdeLstm => Box::new(OdeLstmPredictor::new(models.get(kind)?, layout)),
        PredictorKind::Lstm => Box::new(LstmPredictor::new(models.get(kind)?, layout)),
        PredictorKind::Ekf => Box::new(EkfPredictor::new(cfg.ekf)),
        PredictorKind::Arima => Box::new(ArimaPredictor::new(cfg.arima_config())),
        PredictorKind::Oracle => Box::new(OraclePredictor::new(record.trace.clone())),
        PredictorKind::Hold => Box::new(HoldPredictor::default()),
    })
}

/// Pilot noise depends only on the trace, so every predictor and rule sees
/// the same draws on the same trace.
fn episode_seed(record: &TraceRecord) -> u64 {
    record.seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Runs every (velocity, rule, predictor, trace) combination in that order.
pub fn evaluate(
    cfg: &ExperimentConfig,
    models: &LearnedModels,
    rules: &[SwitchRule],
    groups: &[(f64, Vec<TraceRecord>)],
) -> Result<Vec<EpisodeResult>> {
    let codebook: Codebook = build_codebook(&cfg.array)?;
    let mut results = Vec::new();
    for (velocity_mps, traces) in groups {
        check_traces(cfg, traces)?;
        for &rule in rules {
            let protocol = ProtocolConfig {
                switch_rule: rule,
                ..cfg.protocol.clone()
            };
            for &kind in &cfg.predictors {
                for record in traces {
                    let mut predictor = predictor_for(kind, cfg, models, record)?;
                    let mut rng = seeded_rng(episode_seed(record));
                    let mut log = run_episode(&record.trace, predictor.as_mut(), &protocol, &codebook, &mut rng)?;
                    log.trace_id = record.id.clone();
                    results.push(EpisodeResult {
                        predictor: kind,
                        strategy: cfg.protocol.strategy,
                        rule,
                        velocity_mps: *velocity_mps,
                        log,
                    });
                }
            }
            info!("evaluated rule {rule} at {velocity_mps} m/s");
        }
    }
    Ok(results)
}

/// Short experiment id: the first 12 hex digits of the config hash.
pub fn experiment_id(cfg: &ExperimentConfig) -> String {
    cfg.hash()[..12].to_string()
}

/// Writes the train and eval traces, the manifest and the config to `out`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TraceRecord>> {
    write_dataset(cfg, out)
}

/// Trains every learned predictor named in the config on the dataset's train
/// split. Writes `<kind>.bmdl` and `<kind>_loss.csv` (epoch 0 is the initial
/// loss) per predictor. With `resume`, training continues from the
/// checkpoints found in that directory.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    traces_dir: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<Vec<(PredictorKind, TrainReport)>> {
    cfg.validate()?;
    let kinds = learned(cfg);
    if kinds.is_empty() {
        return Err(Error::Config("predictor lists no learned predictor to train".into()));
    }
    let traces = read_split(traces_dir, Split::Train)?;
    fs::create_dir_all(out)?;
    let mut reports = Vec::new();
    for kind in kinds {
        let start = match resume {
            Some(dir) => Some(load_checkpoint(cfg, kind, dir)?),
            None => None,
        };
        let (model, report) = train_learned(cfg, kind, &traces, start)?;
        model.save(BufWriter::new(File::create(out.join(checkpoint_file(kind)))?))?;
        write_loss_csv(&report, &out.join(loss_file(kind)))?;
        reports.push((kind, report));
    }
    fs::write(out.join(super::data::CONFIG_FILE), cfg.to_text())?;
    Ok(reports)
}

pub fn write_loss_csv(report: &TrainReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["epoch", "loss"]).map_err(csv_error)?;
    let losses = std::iter::once(report.initial_loss).chain(report.epoch_losses.iter().copied());
    for (epoch, loss) in losses.enumerate() {
        w.write_record([epoch.to_string(), loss.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn load_checkpoint(cfg: &ExperimentConfig, kind: PredictorKind, dir: &Path) -> Result<OdeLstmModel> {
    let path = dir.join(checkpoint_file(kind));
    let file = File::open(&path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    OdeLstmModel::load(BufReader::new(file), Some(&cfg.model_config(kind == PredictorKind::Lstm)))
}

/// Loads the checkpoints of every learned predictor in the config.
pub fn load_models(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<LearnedModels> {
    let mut models = LearnedModels::default();
    for kind in learned(cfg) {
        let Some(dir) = dir else {
            return Err(Error::Config(format!("predictor {kind} needs a checkpoint directory")));
        };
        let model = Arc::new(load_checkpoint(cfg, kind, dir)?);
        match kind {
            PredictorKind::OdeLstm => models.odelstm = Some(model),
            _ => models.lstm = Some(model),
        }
    }
    Ok(models)
}

/// Evaluates on the dataset's eval split at the speed it was generated with.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoints: Option<&Path>, traces_dir: &Path, out: &Path) -> Result<Metrics> {
    cfg.validate()?;
    let models = load_models(cfg, checkpoints)?;
    let traces = read_split(traces_dir, Split::Eval)?;
    let mut groups: Vec<(f64, Vec<TraceRecord>)> = Vec::new();
    for r in traces {
        match groups.iter_mut().find(|(v, _)| *v == r.speed_mps) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.speed_mps, vec![r])),
        }
    }
    let results = evaluate(cfg, &models, &cfg.rules, &groups)?;
    let metrics = aggregate(&results, &experiment_id(cfg));
    metrics.write_csvs(out)?;
    Ok(metrics)
}

/// Evaluates at every velocity of the sweep list. Each velocity uses the
/// same eval seeds, so trace `i` starts from the same place with the same
/// turn schedule at every speed, and every predictor sees the same traces.
pub fn cmd_sweep(cfg: &ExperimentConfig, checkpoints: Option<&Path>, out: &Path) -> Result<Metrics> {
    cfg.validate()?;
    let models = load_models(cfg, checkpoints)?;
    let metrics = sweep(cfg, &models)?;
    metrics.write_csvs(out)?;
    Ok(metrics)
}

/// [`cmd_sweep`] without the files.
pub fn sweep(cfg: &ExperimentConfig, models: &LearnedModels) -> Result<Metrics> {
    let groups = cfg
        .sweep_velocities()?
        .iter()
        .map(|&v| Ok((v, synth_split(cfg, Split::Eval, v)?)))
        .collect::<Result<Vec<_>>>()?;
    let results = evaluate(cfg, models, &cfg.rules, &groups)?;
    Ok(aggregate(&results, &experiment_id(cfg)))
}
