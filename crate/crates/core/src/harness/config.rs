//! Flat `key = value` experiment configuration.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Lines starting with `#` are comments. Unknown and repeated keys are
//! errors. [`ExperimentConfig::to_text`] writes every key back out in a fixed
//! order; that canonical text is what [`ExperimentConfig::hash`] digests.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::channel::ArrayConfig;
use crate::error::{Error, Result};
use crate::mobility::{MobilityConfig, SceneConfig};
use crate::predictors::{ArimaConfig, EkfConfig, ModelConfig, PredictorKind, TrainConfig, Variant};
use crate::protocol::{GainSignal, ProtocolConfig, SwitchRule, ThresholdPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub array: ArrayConfig,
    pub scene: SceneConfig,
    pub mobility: MobilityConfig,
    pub protocol: ProtocolConfig,
    /// Predictors to evaluate, in output order. Overhead rows follow the first.
    pub predictors: Vec<PredictorKind>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ekf: EkfConfig,
    pub arima: ArimaConfig,
    pub train_traces: usize,
    pub eval_traces: usize,
    pub velocities_mps: Vec<f64>,
    pub rules: Vec<SwitchRule>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            array: ArrayConfig::default(),
            scene: SceneConfig::default(),
            mobility: MobilityConfig::default(),
            protocol: ProtocolConfig::default(),
            predictors: vec![
                PredictorKind::OdeLstm,
                PredictorKind::Lstm,
                PredictorKind::Ekf,
                PredictorKind::Arima,
            ],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ekf: EkfConfig::default(),
            arima: ArimaConfig::default(),
            train_traces: 512,
            eval_traces: 64,
            velocities_mps: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            rules: vec![SwitchRule::Adaptive, SwitchRule::Periodic],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", n + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} is set twice", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "array.num_antennas" => self.array.num_antennas = parse(key, v)?,
            "array.spacing" => self.array.spacing = parse(key, v)?,
            "array.codebook_size" => self.array.codebook_size = parse(key, v)?,
            "scene.num_paths" => self.scene.num_paths = parse(key, v)?,
            "scene.nlos_relative_gain_db" => self.scene.nlos_relative_gain_db = parse(key, v)?,
            "scene.nlos_angle_spread_rad" => self.scene.nlos_angle_spread_radians = parse(key, v)?,
            "scene.pathloss_exponent" => self.scene.pathloss_exponent = parse(key, v)?,
            "scene.reference_gain" => self.scene.reference_gain = parse(key, v)?,
            "scene.doppler_hz" => self.scene.doppler_hz = parse(key, v)?,
            "mobility.speed_mps" => self.mobility.speed_mps = parse(key, v)?,
            "mobility.duration_s" => self.mobility.duration_s = parse(key, v)?,
            "mobility.sample_interval_s" => self.mobility.sample_interval_s = parse(key, v)?,
            "mobility.turn_event_rate_hz" => self.mobility.turn_event_rate_hz = parse(key, v)?,
            "mobility.heading_change_std_rad" => self.mobility.heading_change_std_radians = parse(key, v)?,
            "mobility.start_radius_min_m" => self.mobility.start_radius_bounds_m.0 = parse(key, v)?,
            "mobility.start_radius_max_m" => self.mobility.start_radius_bounds_m.1 = parse(key, v)?,
            "mobility.sector_margin_rad" => self.mobility.sector_margin_radians = parse(key, v)?,
            "mobility.min_radius_m" => self.mobility.min_radius_m = parse(key, v)?,
            "protocol.period_s" => self.protocol.period_s = parse(key, v)?,
            "protocol.switch_rule" => self.protocol.switch_rule = parse(key, v)?,
            "protocol.switch_period_stages" => self.protocol.switch_period_stages = parse(key, v)?,
            "selection.size" => self.protocol.candidate_size = parse(key, v)?,
            "selection.j0" => self.protocol.j0 = parse(key, v)?,
            "selection.strategy" => self.protocol.strategy = parse(key, v)?,
            "protocol.threshold" => {
                self.protocol.threshold_policy = match v {
                    "running_mean" => ThresholdPolicy::RunningMean,
                    _ => ThresholdPolicy::Fixed(parse(key, v)?),
                }
            }
            "protocol.gain_signal" => {
                self.protocol.gain_signal = match v {
                    "normalized" => GainSignal::Normalized,
                    "raw" => GainSignal::Raw,
                    _ => return Err(Error::Config(format!("{key}: expected normalized or raw, got {v:?}"))),
                }
            }
            "protocol.prediction_count" => self.protocol.prediction_count = parse(key, v)?,
            "protocol.noise_variance" => self.protocol.noise_variance = parse(key, v)?,
            "predictor" => self.predictors = parse_list(key, v)?,
            "model.variant" => self.model.variant = parse(key, v)?,
            "model.hidden_size" => self.model.hidden_size = parse(key, v)?,
            "model.conv_channels" => self.model.conv_channels = parse(key, v)?,
            "model.kernel" => self.model.kernel = parse(key, v)?,
            "model.ode_hidden" => self.model.ode_hidden = parse(key, v)?,
            "model.ode_steps" => self.model.ode_steps = parse(key, v)?,
            "model.time_scale_s" => self.model.time_scale_s = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.query_stride" => self.train.query_stride = parse(key, v)?,
            "train.scan_period_stages" => self.train.scan_period_stages = parse(key, v)?,
            "train.clip_norm" => self.train.clip_norm = parse(key, v)?,
            "ekf.process_noise" => self.ekf.process_noise = parse(key, v)?,
            "ekf.measurement_noise" => {
                self.ekf.measurement_noise = match v {
                    "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "ekf.initial_angle_std" => self.ekf.initial_angle_std = parse(key, v)?,
            "ekf.initial_rate_std" => self.ekf.initial_rate_std = parse(key, v)?,
            "arima.max_p" => self.arima.max_p = parse(key, v)?,
            "arima.max_d" => self.arima.max_d = parse(key, v)?,
            "arima.max_q" => self.arima.max_q = parse(key, v)?,
            "arima.history_periods" => self.arima.history_periods = parse(key, v)?,
            "arima.per_stage" => self.arima.per_stage = parse_bool(key, v)?,
            "arima.stage_history" => self.arima.stage_history = parse(key, v)?,
            "data.train_traces" => self.train_traces = parse(key, v)?,
            "data.eval_traces" => self.eval_traces = parse(key, v)?,
            "sweep.velocities_mps" => self.velocities_mps = parse_list(key, v)?,
            "sweep.rules" => self.rules = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.protocol;
        let threshold = match p.threshold_policy {
            ThresholdPolicy::RunningMean => "running_mean".to_string(),
            ThresholdPolicy::Fixed(x) => x.to_string(),
        };
        let gain_signal = match p.gain_signal {
            GainSignal::Normalized => "normalized",
            GainSignal::Raw => "raw",
        };
        vec![
            ("seed", self.seed.to_string()),
            ("array.num_antennas", self.array.num_antennas.to_string()),
            ("array.spacing", self.array.spacing.to_string()),
            ("array.codebook_size", self.array.codebook_size.to_string()),
            ("scene.num_paths", self.scene.num_paths.to_string()),
            ("scene.nlos_relative_gain_db", self.scene.nlos_relative_gain_db.to_string()),
            ("scene.nlos_angle_spread_rad", self.scene.nlos_angle_spread_radians.to_string()),
            ("scene.pathloss_exponent", self.scene.pathloss_exponent.to_string()),
            ("scene.reference_gain", self.scene.reference_gain.to_string()),
            ("scene.doppler_hz", self.scene.doppler_hz.to_string()),
            ("mobility.speed_mps", self.mobility.speed_mps.to_string()),
            ("mobility.duration_s", self.mobility.duration_s.to_string()),
            ("mobility.sample_interval_s", self.mobility.sample_interval_s.to_string()),
            ("mobility.turn_event_rate_hz", self.mobility.turn_event_rate_hz.to_string()),
            ("mobility.heading_change_std_rad", self.mobility.heading_change_std_radians.to_string()),
            ("mobility.start_radius_min_m", self.mobility.start_radius_bounds_m.0.to_string()),
            ("mobility.start_radius_max_m", self.mobility.start_radius_bounds_m.1.to_string()),
            ("mobility.sector_margin_rad", self.mobility.sector_margin_radians.to_string()),
            ("mobility.min_radius_m", self.mobility.min_radius_m.to_string()),
            ("protocol.period_s", p.period_s.to_string()),
            ("protocol.switch_rule", p.switch_rule.to_string()),
            ("protocol.switch_period_stages", p.switch_period_stages.to_string()),
            ("selection.size", p.candidate_size.to_string()),
            ("selection.j0", p.j0.to_string()),
            ("selection.strategy", p.strategy.to_string()),
            ("protocol.threshold", threshold),
            ("protocol.gain_signal", gain_signal.to_string()),
            ("protocol.prediction_count", p.prediction_count.to_string()),
            ("protocol.noise_variance", p.noise_variance.to_string()),
            ("predictor", join(&self.predictors)),
            ("model.variant", self.model.variant.to_string()),
            ("model.hidden_size", self.model.hidden_size.to_string()),
            ("model.conv_channels", self.model.conv_channels.to_string()),
            ("model.kernel", self.model.kernel.to_string()),
            ("model.ode_hidden", self.model.ode_hidden.to_string()),
            ("model.ode_steps", self.model.ode_steps.to_string()),
            ("model.time_scale_s", self.model.time_scale_s.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.query_stride", self.train.query_stride.to_string()),
            ("train.scan_period_stages", self.train.scan_period_stages.to_string()),
            ("train.clip_norm", self.train.clip_norm.to_string()),
            ("ekf.process_noise", self.ekf.process_noise.to_string()),
            (
                "ekf.measurement_noise",
                self.ekf.measurement_noise.map_or("auto".to_string(), |r| r.to_string()),
            ),
            ("ekf.initial_angle_std", self.ekf.initial_angle_std.to_string()),
            ("ekf.initial_rate_std", self.ekf.initial_rate_std.to_string()),
            ("arima.max_p", self.arima.max_p.to_string()),
            ("arima.max_d", self.arima.max_d.to_string()),
            ("arima.max_q", self.arima.max_q.to_string()),
            ("arima.history_periods", self.arima.history_periods.to_string()),
            ("arima.per_stage", self.arima.per_stage.to_string()),
            ("arima.stage_history", self.arima.stage_history.to_string()),
            ("data.train_traces", self.train_traces.to_string()),
            ("data.eval_traces", self.eval_traces.to_string()),
            ("sweep.velocities_mps", join(&self.velocities_mps)),
            ("sweep.rules", join(&self.rules)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.scene.validate()?;
        self.mobility.validate()?;
        self.protocol.validate(self.array.codebook_size)?;
        self.model_config(false).validate()?;
        self.train.validate()?;
        self.ekf.validate()?;
        self.arima.validate()?;
        if self.predictors.is_empty() {
            return Err(Error::Config("predictor must list at least one predictor".into()));
        }
        if self.velocities_mps.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("sweep.velocities_mps must be >= 0".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::Config("sweep.rules must list at least one rule".into()));
        }
        Ok(())
    }

    /// Architecture of the learned predictors. The tracking variant reads one
    /// candidate set, the scanning variant the whole codebook.
    pub fn model_config(&self, one_step: bool) -> ModelConfig {
        let width = match self.model.variant {
            Variant::Tracking => self.protocol.candidate_size,
            Variant::Scanning => self.array.codebook_size,
        };
        ModelConfig {
            width,
            one_step,
            ..self.model.clone()
        }
    }

    /// Training settings with the master seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn arima_config(&self) -> ArimaConfig {
        ArimaConfig {
            prediction_count: self.protocol.prediction_count,
            ..self.arima.clone()
        }
    }

    /// The velocity list, or an error when a sweep has nothing to run.
    pub fn sweep_velocities(&self) -> Result<&[f64]> {
        if self.velocities_mps.is_empty() {
            return Err(Error::Config("sweep.velocities_mps must not be empty for a sweep".into()));
        }
        Ok(&self.velocities_mps)
    }
}
