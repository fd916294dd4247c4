use super::{check_query_time, BeamPredictor, PredictionOutput, StageInput};
use crate::channel::{best_beam, channel_vector, Codebook};
use crate::error::Result;
use crate::mobility::ChannelTrace;

/// Debug upper bound: the true best beam at every instant.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    trace: ChannelTrace,
    stage_time_s: Option<f64>,
}

impl OraclePredictor {
    pub fn new(trace: ChannelTrace) -> Self {
        Self {
            trace,
            stage_time_s: None,
        }
    }
}

impl BeamPredictor for OraclePredictor {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn reset(&mut self) {
        self.stage_time_s = None;
    }

    fn ingest(&mut self, stage: &StageInput<'_>, _codebook: &Codebook) -> Result<()> {
        self.stage_time_s = Some(stage.time_s);
        Ok(())
    }

    fn query(&mut self, time_s: f64, codebook: &Codebook) -> Result<PredictionOutput> {
        check_query_time(time_s, self.stage_time_s)?;
        let h = channel_vector(self.trace.nearest(time_s), codebook.array())?;
        let beam = best_beam(&h, codebook)?;
        Ok(PredictionOutput::one_hot(time_s, beam, codebook.size()))
    }
}

/// Keeps the measured stage optimum for the whole period.
#[derive(Debug, Clone, Default)]
pub struct HoldPredictor {
    current: Option<(f64, usize)>,
}

impl BeamPredictor for HoldPredictor {
    fn name(&self) -> &'static str {
        "hold"
    }

    fn reset(&mut self) {
        self.current = None;
    }

    fn ingest(&mut self, stage: &StageInput<'_>, _codebook: &Codebook) -> Result<()> {
        self.current = Some((stage.time_s, stage.stage_optimum()));
        Ok(())
    }

    fn query(&mut self, time_s: f64, codebook: &Codebook) -> Result<PredictionOutput> {
        check_query_time(time_s, self.current.map(|c| c.0))?;
        let beam = self.current.map(|c| c.1).unwrap_or(1);
        Ok(PredictionOutput::one_hot(time_s, beam, codebook.size()))
    }
}
