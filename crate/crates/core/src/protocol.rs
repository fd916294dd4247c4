//! The alignment controller.
//!
//! Every period `T` starts with an alignment stage. A stage either scans the
//! whole codebook or tracks a candidate set around the previous optimum; the
//! UE reports the beam with the strongest received pilot. The predictor then
//! names a beam for each of the evenly spaced instants inside the period, and
//! the evaluator scores every choice against the true channel.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::channel::{all_gains, argmax_first, channel_vector, normalized_from_gains, synth_pilot, Codebook, PilotObservation};
use crate::error::{Error, Result};
use crate::mobility::{prediction_instants, ChannelTrace};
use crate::predictors::{BeamPredictor, StageInput};
use crate::selection::{build_candidate_set, estimate_direction, CandidateSet, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchRule {
    /// Scan once at stage 0, track afterwards.
    Off,
    /// Scan every `switch_period_stages` stages.
    Periodic,
    /// Scan when the gain at the end of the last period drops below the threshold.
    Adaptive,
}

impl fmt::Display for SwitchRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SwitchRule::Off => "off",
            SwitchRule::Periodic => "periodic",
            SwitchRule::Adaptive => "adaptive",
        })
    }
}

impl FromStr for SwitchRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(SwitchRule::Off),
            "periodic" => Ok(SwitchRule::Periodic),
            "adaptive" => Ok(SwitchRule::Adaptive),
            _ => Err(Error::Config(format!(
                "unknown switch rule {s:?} (expected off, periodic or adaptive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Mean of every normalized gain recorded so far in the episode.
    RunningMean,
    Fixed(f64),
}

/// Which gain the adaptive rule compares against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainSignal {
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageMode {
    Scan,
    Track,
}

impl fmt::Display for StageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageMode::Scan => "scan",
            StageMode::Track => "track",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub period_s: f64,
    pub switch_rule: SwitchRule,
    pub switch_period_stages: usize,
    pub candidate_size: usize,
    pub j0: usize,
    pub strategy: Strategy,
    pub threshold_policy: ThresholdPolicy,
    pub gain_signal: GainSignal,
    pub prediction_count: usize,
    pub noise_variance: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            period_s: 0.1,
            switch_rule: SwitchRule::Adaptive,
            switch_period_stages: 2,
            candidate_size: 11,
            j0: 2,
            strategy: Strategy::Uneven,
            threshold_policy: ThresholdPolicy::RunningMean,
            gain_signal: GainSignal::Normalized,
            prediction_count: 99,
            noise_variance: 1e-3,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.period_s > 0.0) {
            return bad("protocol.period_s must be > 0".into());
        }
        if self.switch_period_stages == 0 {
            return bad("protocol.switch_period_stages must be >= 1".into());
        }
        if self.candidate_size == 0 || self.candidate_size > codebook_size {
            return bad(format!(
                "selection.size must be in [1, {codebook_size}], got {}",
                self.candidate_size
            ));
        }
        // A size-1 interleaved set is just the previous beam; every other
        // directional set needs 1 <= j0 < size.
        let single_interleaved = self.strategy == Strategy::Interleaved && self.candidate_size == 1;
        if self.strategy != Strategy::Even && !single_interleaved && (self.j0 == 0 || self.j0 >= self.candidate_size) {
            return bad(format!(
                "selection.j0 ({}) must satisfy 1 <= j0 < selection.size ({})",
                self.j0, self.candidate_size
            ));
        }
        if self.strategy == Strategy::Interleaved && self.candidate_size > 1 && 2 * self.candidate_size > codebook_size {
            return bad("interleaved strategy needs 2 * selection.size <= Q".into());
        }
        if self.prediction_count == 0 {
            return bad("protocol.prediction_count must be >= 1".into());
        }
        if !(self.noise_variance >= 0.0) {
            return bad("protocol.noise_variance must be >= 0".into());
        }
        if let ThresholdPolicy::Fixed(g) = self.threshold_policy {
            if !g.is_finite() {
                return bad("protocol threshold must be finite".into());
            }
        }
        Ok(())
    }

    /// Whole periods that fit into the trace.
    pub fn stage_count(&self, trace: &ChannelTrace) -> usize {
        let periods = trace.duration() / self.period_s;
        (periods + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub time_s: f64,
    /// Elapsed fraction of the period.
    pub tau: f64,
    pub global_index: usize,
    pub normalized_gain: f64,
    pub raw_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub stage_index: usize,
    pub time_s: f64,
    pub mode: StageMode,
    pub candidate_set: CandidateSet,
    pub pilots_sent: usize,
    /// Beam with the strongest measured pilot.
    pub stage_optimum: usize,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub trace_id: String,
    pub codebook_size: usize,
    pub period_s: f64,
    pub stages: Vec<StageLog>,
}

impl EpisodeLog {
    pub fn overhead(&self) -> f64 {
        overhead(self, self.codebook_size)
    }

    /// Mean normalized gain over every prediction of the episode.
    pub fn mean_gain(&self) -> f64 {
        let (sum, n) = self
            .stages
            .iter()
            .flat_map(|s| &s.predictions)
            .fold((0.0, 0usize), |(s, n), p| (s + p.normalized_gain, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// `(sum, count)` of normalized gains per prediction slot `i` (0-based).
    pub fn gain_by_slot(&self) -> Vec<(f64, usize)> {
        let slots = self.stages.iter().map(|s| s.predictions.len()).max().unwrap_or(0);
        let mut acc = vec![(0.0, 0usize); slots];
        for stage in &self.stages {
            for (i, p) in stage.predictions.iter().enumerate() {
                acc[i].0 += p.normalized_gain;
                acc[i].1 += 1;
            }
        }
        acc
    }

    pub fn scan_stages(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter(|s| s.mode == StageMode::Scan)
            .map(|s| s.stage_index)
            .collect()
    }
}

/// Periodic rule: scan iff `stage_index` is a multiple of the period.
pub fn decide_periodic(stage_index: usize, switch_period_stages: usize) -> bool {
    stage_index.is_multiple_of(switch_period_stages.max(1))
}

/// Adaptive rule: scan iff the last gain is strictly below the threshold.
pub fn decide_adaptive(last_gain: f64, threshold: f64) -> bool {
    last_gain < threshold
}

/// Running-mean threshold. An empty history gives 0, which never triggers.
pub fn update_threshold(history: &[f64]) -> f64 {
    if history.is_empty() {
        0.0
    } else {
        history.iter().sum::<f64>() / history.len() as f64
    }
}

/// Pilots sent over pilots a full scan every period would have sent.
///
/// The initial acquisition scan at stage 0 happens whatever the rule, so it
/// is left out whenever later stages exist: a tracking-only episode then
/// costs exactly `|S| / Q` at any length.
pub fn overhead(log: &EpisodeLog, q: usize) -> f64 {
    let (sent, budget) = pilot_budget(log, q);
    if budget == 0 {
        0.0
    } else {
        sent as f64 / budget as f64
    }
}

/// `(pilots sent, pilots of a full scan per stage)` over the stages that
/// [`overhead`] counts.
pub fn pilot_budget(log: &EpisodeLog, q: usize) -> (usize, usize) {
    let counted = if log.stages.len() > 1 { &log.stages[1..] } else { &log.stages[..] };
    let sent = counted.iter().map(|s| s.pilots_sent).sum();
    (sent, q * counted.len())
}

/// What the UE measures in one alignment stage.
#[derive(Debug, Clone)]
pub struct StageObservation {
    pub stage_index: usize,
    pub time_s: f64,
    pub mode: StageMode,
    pub candidate_set: CandidateSet,
    /// Pilots in the candidate set's local order.
    pub pilots: Vec<PilotObservation>,
    pub stage_optimum: usize,
}

/// Stateful stage generator: remembers the measured optima that drive the
/// candidate sets. Shared by [`run_episode`] and the training data builder.
#[derive(Debug, Clone)]
pub struct StageDriver {
    cfg: ProtocolConfig,
    optima: Vec<usize>,
}

impl StageDriver {
    pub fn new(cfg: &ProtocolConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            optima: Vec::new(),
        }
    }

    /// Measured optima of every stage so far, oldest first.
    pub fn optima(&self) -> &[usize] {
        &self.optima
    }

    /// Runs stage `n` in `mode` (forced to scan at stage 0).
    pub fn probe<R: Rng + ?Sized>(
        &mut self,
        trace: &ChannelTrace,
        codebook: &Codebook,
        stage_index: usize,
        mode: StageMode,
        rng: &mut R,
    ) -> Result<StageObservation> {
        let q = codebook.size();
        let time_s = trace.start_time() + stage_index as f64 * self.cfg.period_s;
        let mode = if self.optima.is_empty() { StageMode::Scan } else { mode };
        let candidate_set = match mode {
            StageMode::Scan => CandidateSet::full(q),
            StageMode::Track => {
                let q_prev = *self.optima.last().expect("track stage without a previous optimum");
                let dir = estimate_direction(&self.optima, q);
                build_candidate_set(self.cfg.strategy, q_prev, self.cfg.candidate_size, q, self.cfg.j0, dir)?
            }
        };
        let h = channel_vector(trace.nearest(time_s), codebook.array())?;
        let pilots = candidate_set
            .global_indices()
            .iter()
            .map(|&b| synth_pilot(&h, b, codebook, self.cfg.noise_variance, time_s, rng))
            .collect::<Result<Vec<_>>>()?;
        let power: Vec<f64> = pilots.iter().map(|p| p.value.norm_sqr()).collect();
        let stage_optimum = pilots[argmax_first(&power)].beam_index;
        self.optima.push(stage_optimum);
        Ok(StageObservation {
            stage_index,
            time_s,
            mode,
            candidate_set,
            pilots,
            stage_optimum,
        })
    }
}

/// Mode-switching state across stages.
#[derive(Debug, Clone)]
struct Switcher {
    rule: SwitchRule,
    period: usize,
    policy: ThresholdPolicy,
    history: Vec<f64>,
    last_gain: Option<f64>,
}

impl Switcher {
    fn mode(&self, stage_index: usize) -> StageMode {
        let scan = stage_index == 0
            || match self.rule {
                SwitchRule::Off => false,
                SwitchRule::Periodic => decide_periodic(stage_index, self.period),
                SwitchRule::Adaptive => {
                    let threshold = match self.policy {
                        ThresholdPolicy::RunningMean => update_threshold(&self.history),
                        ThresholdPolicy::Fixed(g) => g,
                    };
                    self.last_gain.is_some_and(|g| decide_adaptive(g, threshold))
                }
            };
        if scan {
            StageMode::Scan
        } else {
            StageMode::Track
        }
    }
}

/// Runs the protocol over a whole trace with one predictor.
pub fn run_episode<R: Rng + ?Sized>(
    trace: &ChannelTrace,
    predictor: &mut dyn BeamPredictor,
    cfg: &ProtocolConfig,
    codebook: &Codebook,
    rng: &mut R,
) -> Result<EpisodeLog> {
    cfg.validate(codebook.size())?;
    let stages = cfg.stage_count(trace);
    if stages == 0 {
        return Err(Error::InvalidParameter(format!(
            "trace of {} s is shorter than one period ({} s)",
            trace.duration(),
            cfg.period_s
        )));
    }
    predictor.reset();
    let mut driver = StageDriver::new(cfg);
    let mut switcher = Switcher {
        rule: cfg.switch_rule,
        period: cfg.switch_period_stages,
        policy: cfg.threshold_policy,
        history: Vec::new(),
        last_gain: None,
    };
    let mut logs = Vec::with_capacity(stages);
    for n in 0..stages {
        let obs = driver.probe(trace, codebook, n, switcher.mode(n), rng)?;
        predictor.ingest(
            &StageInput {
                stage_index: n,
                time_s: obs.time_s,
                period_s: cfg.period_s,
                mode: obs.mode,
                candidate_set: &obs.candidate_set,
                pilots: &obs.pilots,
                optima: driver.optima(),
            },
            codebook,
        )?;
        let mut predictions = Vec::with_capacity(cfg.prediction_count);
        for t in prediction_instants(obs.time_s, cfg.period_s, cfg.prediction_count) {
            let out = predictor.query(t, codebook)?;
            let h = channel_vector(trace.nearest(t), codebook.array())?;
            let gains = all_gains(&h, codebook)?;
            codebook.check_index(out.global_index)?;
            predictions.push(PredictionRecord {
                time_s: t,
                tau: (t - obs.time_s) / cfg.period_s,
                global_index: out.global_index,
                normalized_gain: normalized_from_gains(&gains, out.global_index),
                raw_gain: gains[out.global_index - 1],
            });
        }
        let signal = |p: &PredictionRecord| match cfg.gain_signal {
            GainSignal::Normalized => p.normalized_gain,
            GainSignal::Raw => p.raw_gain,
        };
        switcher.history.extend(predictions.iter().map(signal));
        switcher.last_gain = predictions.last().map(signal);
        logs.push(StageLog {
            stage_index: n,
            time_s: obs.time_s,
            mode: obs.mode,
            pilots_sent: obs.pilots.len(),
            candidate_set: obs.candidate_set,
            stage_optimum: obs.stage_optimum,
            predictions,
        });
    }
    Ok(EpisodeLog {
        trace_id: String::new(),
        codebook_size: codebook.size(),
        period_s: cfg.period_s,
        stages: logs,
    })
}
