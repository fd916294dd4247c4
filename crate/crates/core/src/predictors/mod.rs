//! Beam predictors behind one interface.
//!
//! A predictor sees one [`StageInput`] per alignment stage and then answers
//! queries for instants inside the following period. The learned predictors
//! classify over the active candidate set; EKF, ARIMA and the debugging
//! predictors name global beam indices directly.

mod arima;
mod ekf;
mod model;
mod simple;
mod train;

use std::fmt;
use std::str::FromStr;

pub use arima::{arima_candidates, arima_fit, arima_forecast, beam_from_forecast, unwrap_beam_series, ArimaConfig, ArimaModel, ArimaPredictor};
pub use ekf::{beam_to_aod, ekf_predict, ekf_query, ekf_update, EkfConfig, EkfPredictor, EkfState};
pub use model::{
    odelstm_ingest, odelstm_query, onestep_query, pack_pilots, tracking_view, LstmPredictor, ModelConfig, OdeLstmModel,
    OdeLstmPredictor, PredictorState, TrackingLayout, Variant, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use simple::{HoldPredictor, OraclePredictor};
pub use train::{build_sequences, mean_loss, sequence_gradient, train_model, StageSample, TrainConfig, TrainReport, TrainingSequence};

use crate::channel::{Codebook, PilotObservation};
use crate::error::{Error, Result};
use crate::protocol::StageMode;
use crate::selection::CandidateSet;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub time_s: f64,
    pub probabilities: Vec<f64>,
    /// 1-based position inside the active candidate set.
    pub local_index: usize,
    pub global_index: usize,
}

impl PredictionOutput {
    /// Degenerate output that puts all mass on one global beam.
    pub fn one_hot(time_s: f64, global_index: usize, q: usize) -> Self {
        let mut probabilities = vec![0.0; q];
        probabilities[global_index - 1] = 1.0;
        Self {
            time_s,
            probabilities,
            local_index: global_index,
            global_index,
        }
    }
}

/// Everything a predictor may use from one alignment stage.
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a> {
    pub stage_index: usize,
    pub time_s: f64,
    pub period_s: f64,
    pub mode: StageMode,
    pub candidate_set: &'a CandidateSet,
    /// Pilots in the candidate set's local order.
    pub pilots: &'a [PilotObservation],
    /// Measured stage optima so far, this stage included.
    pub optima: &'a [usize],
}

impl StageInput<'_> {
    pub fn stage_optimum(&self) -> usize {
        *self.optima.last().expect("stage input without an optimum")
    }
}

pub trait BeamPredictor {
    fn name(&self) -> &'static str;

    /// Forgets all per-episode state.
    fn reset(&mut self);

    fn ingest(&mut self, stage: &StageInput<'_>, codebook: &Codebook) -> Result<()>;

    /// Beam for `time_s`, which must not precede the last ingested stage.
    fn query(&mut self, time_s: f64, codebook: &Codebook) -> Result<PredictionOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PredictorKind {
    OdeLstm,
    Lstm,
    Ekf,
    Arima,
    Oracle,
    Hold,
}

impl PredictorKind {
    pub fn is_learned(self) -> bool {
        matches!(self, PredictorKind::OdeLstm | PredictorKind::Lstm)
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::OdeLstm => "odelstm",
            PredictorKind::Lstm => "lstm",
            PredictorKind::Ekf => "ekf",
            PredictorKind::Arima => "arima",
            PredictorKind::Oracle => "oracle",
            PredictorKind::Hold => "hold",
        })
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "odelstm" => Ok(PredictorKind::OdeLstm),
            "lstm" => Ok(PredictorKind::Lstm),
            "ekf" => Ok(PredictorKind::Ekf),
            "arima" => Ok(PredictorKind::Arima),
            "oracle" => Ok(PredictorKind::Oracle),
            "hold" => Ok(PredictorKind::Hold),
            _ => Err(Error::Config(format!(
                "unknown predictor {s:?} (expected odelstm, lstm, ekf, arima, oracle or hold)"
            ))),
        }
    }
}

/// Smallest index among the maxima, 1-based.
pub(crate) fn argmax_local(probabilities: &[f64]) -> usize {
    crate::channel::argmax_first(probabilities) + 1
}

pub(crate) fn check_query_time(time_s: f64, stage_time_s: Option<f64>) -> Result<f64> {
    let Some(t0) = stage_time_s else {
        return Err(Error::InvalidParameter("query before the first alignment stage".into()));
    };
    if time_s < t0 {
        return Err(Error::InvalidParameter(format!(
            "query time {time_s} precedes the last stage time {t0}"
        )));
    }
    Ok(time_s - t0)
}
