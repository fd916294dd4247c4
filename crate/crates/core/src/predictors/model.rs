use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use super::{argmax_local, check_query_time, BeamPredictor, PredictionOutput, StageInput};
use crate::channel::{Codebook, PilotObservation};
use crate::error::{Error, Result};
use crate::nn::{
    conv1d_backward, conv1d_forward, lstm_cell_step, read_named_tensors, softmax, write_named_tensors, Conv1d,
    Linear, LstmCache, LstmCellParams, OdeDerivativeNet, Parameters, Tensor,
};
use crate::protocol::StageMode;
use crate::selection::{build_candidate_set, estimate_direction, CandidateSet, Strategy};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BMDL";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Reads all Q pilots and classifies over the whole codebook.
    Scanning,
    /// Reads the candidate-set pilots and classifies over the set.
    Tracking,
}

impl Variant {
    pub fn conv_layers(self) -> usize {
        match self {
            Variant::Scanning => 3,
            Variant::Tracking => 2,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Scanning => "scanning",
            Variant::Tracking => "tracking",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scanning" => Ok(Variant::Scanning),
            "tracking" => Ok(Variant::Tracking),
            _ => Err(Error::Config(format!(
                "unknown model variant {s:?} (expected scanning or tracking)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Pilots per stage and output classes: Q (scanning) or |S| (tracking).
    pub width: usize,
    pub hidden_size: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub ode_hidden: usize,
    pub ode_steps: usize,
    /// Elapsed time is divided by this before integration.
    pub time_scale_s: f64,
    /// One-step LSTM baseline: no ODE block, the head reads `h` directly.
    pub one_step: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Tracking,
            width: 11,
            hidden_size: 32,
            conv_channels: 10,
            kernel: 3,
            ode_hidden: 32,
            ode_steps: 10,
            time_scale_s: 0.1,
            one_step: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width == 0 || self.hidden_size == 0 || self.conv_channels == 0 || self.ode_hidden == 0 {
            return bad("model widths must be >= 1");
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad("model.kernel must be odd");
        }
        if self.kernel > self.width {
            return bad("model.kernel must not exceed the input width");
        }
        if self.ode_steps == 0 {
            return bad("model.ode_steps must be >= 1");
        }
        if !(self.time_scale_s > 0.0) {
            return bad("model.time_scale_s must be > 0");
        }
        Ok(())
    }

    fn feature_size(&self) -> usize {
        self.conv_channels * self.width
    }
}

/// Conv stack, LSTM cell, optional ODE block and a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeLstmModel {
    pub config: ModelConfig,
    pub convs: Vec<Conv1d>,
    pub lstm: LstmCellParams,
    pub ode: Option<OdeDerivativeNet>,
    pub fc: Linear,
}

/// Intermediate values of one ingest, for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct IngestCache {
    /// Input of every conv layer followed by the last activation.
    activations: Vec<Tensor>,
    lstm: LstmCache,
}

impl OdeLstmModel {
    /// Random conv/LSTM/ODE weights and a zero head, so an untrained model
    /// predicts the uniform distribution.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.conv_channels;
        let convs = (0..config.variant.conv_layers())
            .map(|l| Conv1d::init(if l == 0 { 2 } else { c }, c, config.kernel, rng))
            .collect();
        let lstm = LstmCellParams::init(config.feature_size(), config.hidden_size, rng);
        let ode = (!config.one_step).then(|| OdeDerivativeNet::init(config.hidden_size, config.ode_hidden, rng));
        let fc = Linear::zeros(config.hidden_size, config.width);
        Ok(Self {
            config,
            convs,
            lstm,
            ode,
            fc,
        })
    }

    /// Every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, &mut crate::seeded_rng(0))?;
        for t in m.params_mut() {
            t.fill(0.0);
        }
        Ok(m)
    }

    /// Replaces the zero head with a random one.
    pub fn randomize_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.fc = Linear::init(self.config.hidden_size, self.config.width, rng);
    }

    pub fn num_classes(&self) -> usize {
        self.config.width
    }

    pub(crate) fn ingest_cached(&self, input: &Tensor, h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>, IngestCache)> {
        let mut activations = Vec::with_capacity(self.convs.len() + 1);
        activations.push(input.clone());
        for conv in &self.convs {
            let mut a = conv1d_forward(conv, activations.last().expect("non-empty"))?;
            a.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(a);
        }
        let x = activations.last().expect("non-empty").data();
        let (h2, c2, lstm) = lstm_cell_step(&self.lstm, x, h, c)?;
        Ok((h2, c2, IngestCache { activations, lstm }))
    }

    /// Backward through one ingest. Returns `(dh, dc)` for the previous state.
    pub(crate) fn ingest_backward(
        &self,
        cache: &IngestCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut OdeLstmModel,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (dx, dh_prev, dc_prev) = self.lstm.backward(&cache.lstm, dh, dc, &mut grads.lstm);
        let mut g = Tensor::from_vec(cache.activations.last().expect("non-empty").shape(), dx)?;
        for (l, conv) in self.convs.iter().enumerate().rev() {
            let out = &cache.activations[l + 1];
            for (gv, &a) in g.data_mut().iter_mut().zip(out.data()) {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            }
            g = conv1d_backward(conv, &cache.activations[l], &g, &mut grads.convs[l])?;
        }
        Ok((dh_prev, dc_prev))
    }

    /// State the head reads after `elapsed_s`.
    pub fn evolve(&self, h: &[f64], elapsed_s: f64) -> Vec<f64> {
        match &self.ode {
            Some(ode) => ode.evolve(h, elapsed_s / self.config.time_scale_s, self.config.ode_steps),
            None => h.to_vec(),
        }
    }

    pub fn head(&self, s: &[f64]) -> Vec<f64> {
        softmax(&self.fc.forward(s))
    }

    fn header_fields(&self) -> [u32; 9] {
        let c = &self.config;
        [
            match c.variant {
                Variant::Scanning => 0,
                Variant::Tracking => 1,
            },
            c.one_step as u32,
            c.width as u32,
            c.hidden_size as u32,
            c.conv_channels as u32,
            c.kernel as u32,
            self.convs.len() as u32,
            c.ode_hidden as u32,
            c.ode_steps as u32,
        ]
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in self.header_fields() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&self.config.time_scale_s.to_le_bytes())?;
        write_named_tensors(&mut out, &self.params())?;
        out.flush()?;
        Ok(())
    }

    /// Reads a checkpoint. With `expected`, any architecture difference is an error.
    pub fn load<R: Read>(mut input: R, expected: Option<&ModelConfig>) -> Result<Self> {
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Parse("missing checkpoint header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a model checkpoint: bad magic".into()));
        }
        let mut b2 = [0u8; 2];
        input
            .read_exact(&mut b2)
            .map_err(|_| Error::Parse("truncated checkpoint header".into()))?;
        let version = u16::from_le_bytes(b2);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut fields = [0u32; 9];
        let mut b4 = [0u8; 4];
        for f in fields.iter_mut() {
            input
                .read_exact(&mut b4)
                .map_err(|_| Error::Parse("truncated checkpoint header".into()))?;
            *f = u32::from_le_bytes(b4);
        }
        let mut b8 = [0u8; 8];
        input
            .read_exact(&mut b8)
            .map_err(|_| Error::Parse("truncated checkpoint header".into()))?;
        let variant = match fields[0] {
            0 => Variant::Scanning,
            1 => Variant::Tracking,
            v => return Err(Error::Parse(format!("unknown variant tag {v} in checkpoint"))),
        };
        let config = ModelConfig {
            variant,
            one_step: fields[1] != 0,
            width: fields[2] as usize,
            hidden_size: fields[3] as usize,
            conv_channels: fields[4] as usize,
            kernel: fields[5] as usize,
            ode_hidden: fields[7] as usize,
            ode_steps: fields[8] as usize,
            time_scale_s: f64::from_le_bytes(b8),
        };
        config
            .validate()
            .map_err(|e| Error::Parse(format!("checkpoint header is invalid: {e}")))?;
        if fields[6] as usize != variant.conv_layers() {
            return Err(Error::Parse(format!(
                "checkpoint has {} conv layers, the {variant} variant needs {}",
                fields[6],
                variant.conv_layers()
            )));
        }
        if let Some(exp) = expected {
            check_architecture(&config, exp)?;
        }
        let mut model = Self::zeros(config)?;
        let tensors = read_named_tensors(&mut input)?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        if tensors.len() != names.len() {
            return Err(Error::Parse(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                tensors.len(),
                names.len()
            )));
        }
        for ((name, dst), (found, t)) in names.iter().zip(model.params_mut()).zip(tensors) {
            if *name != found || dst.shape() != t.shape() {
                return Err(Error::Parse(format!(
                    "checkpoint tensor {found} {:?} does not match {name} {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t;
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        Ok(model)
    }
}

fn check_architecture(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    let mismatch = |what: &str, f: String, e: String| {
        Err(Error::Config(format!(
            "architecture mismatch: checkpoint has {what} {f}, configuration expects {e}"
        )))
    };
    if found.variant != expected.variant {
        return mismatch("variant", found.variant.to_string(), expected.variant.to_string());
    }
    if found.one_step != expected.one_step {
        return mismatch("one_step", found.one_step.to_string(), expected.one_step.to_string());
    }
    let pairs = [
        ("width", found.width, expected.width),
        ("hidden_size", found.hidden_size, expected.hidden_size),
        ("conv_channels", found.conv_channels, expected.conv_channels),
        ("kernel", found.kernel, expected.kernel),
        ("ode_hidden", found.ode_hidden, expected.ode_hidden),
        ("ode_steps", found.ode_steps, expected.ode_steps),
    ];
    for (what, f, e) in pairs {
        if f != e {
            return mismatch(what, f.to_string(), e.to_string());
        }
    }
    if found.time_scale_s != expected.time_scale_s {
        return mismatch(
            "time_scale_s",
            found.time_scale_s.to_string(),
            expected.time_scale_s.to_string(),
        );
    }
    Ok(())
}

impl Parameters for OdeLstmModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = Vec::new();
        for (l, conv) in self.convs.iter().enumerate() {
            for (n, t) in conv.params() {
                p.push((format!("conv{l}.{n}"), t));
            }
        }
        for (n, t) in self.lstm.params() {
            p.push((format!("lstm.{n}"), t));
        }
        if let Some(ode) = &self.ode {
            for (n, t) in ode.params() {
                p.push((format!("ode.{n}"), t));
            }
        }
        for (n, t) in self.fc.params() {
            p.push((format!("fc.{n}"), t));
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = Vec::new();
        for conv in &mut self.convs {
            p.extend(conv.params_mut());
        }
        p.extend(self.lstm.params_mut());
        if let Some(ode) = &mut self.ode {
            p.extend(ode.params_mut());
        }
        p.extend(self.fc.params_mut());
        p
    }
}

/// Recurrent state carried between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub last_stage_time_s: Option<f64>,
    pub last_candidate_set: CandidateSet,
}

impl PredictorState {
    pub fn new(model: &OdeLstmModel, codebook_size: usize) -> Self {
        Self {
            h: vec![0.0; model.config.hidden_size],
            c: vec![0.0; model.config.hidden_size],
            last_stage_time_s: None,
            last_candidate_set: CandidateSet::full(codebook_size),
        }
    }
}

/// Pilots as a `[2, width]` (re, im) tensor, rotated and scaled so the
/// strongest pilot becomes `1 + 0j`. An all-zero input stays zero.
pub fn pack_pilots(pilots: &[PilotObservation]) -> Tensor {
    let width = pilots.len();
    let strongest = pilots
        .iter()
        .map(|p| p.value)
        .fold(Complex64::new(0.0, 0.0), |best, v| if v.norm_sqr() > best.norm_sqr() { v } else { best });
    let scale = if strongest.norm_sqr() > 0.0 {
        strongest.conj() / strongest.norm_sqr()
    } else {
        Complex64::new(0.0, 0.0)
    };
    let mut t = Tensor::zeros(&[2, width.max(1)]);
    for (k, p) in pilots.iter().enumerate() {
        let v = p.value * scale;
        t.data_mut()[k] = v.re;
        t.data_mut()[width + k] = v.im;
    }
    t
}

/// Runs the conv stack and the LSTM cell on one stage of pilots.
pub fn odelstm_ingest(
    model: &OdeLstmModel,
    state: &PredictorState,
    pilots: &[PilotObservation],
    cs: &CandidateSet,
) -> Result<PredictorState> {
    if pilots.len() != model.config.width {
        return Err(Error::DimensionMismatch {
            expected: model.config.width,
            found: pilots.len(),
        });
    }
    let (h, c, _) = model.ingest_cached(&pack_pilots(pilots), &state.h, &state.c)?;
    Ok(PredictorState {
        h,
        c,
        last_stage_time_s: Some(pilots[0].time_s),
        last_candidate_set: cs.clone(),
    })
}

fn output(time_s: f64, probabilities: Vec<f64>, cs: &CandidateSet) -> Result<PredictionOutput> {
    let local_index = argmax_local(&probabilities);
    let global_index = cs.to_global(local_index)?;
    Ok(PredictionOutput {
        time_s,
        probabilities,
        local_index,
        global_index,
    })
}

/// Evolves the hidden state to `query_time_s` and classifies.
pub fn odelstm_query(
    model: &OdeLstmModel,
    state: &PredictorState,
    query_time_s: f64,
    cs: &CandidateSet,
) -> Result<PredictionOutput> {
    let elapsed = check_query_time(query_time_s, state.last_stage_time_s)?;
    if cs.len() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            found: cs.len(),
        });
    }
    let s = model.evolve(&state.h, elapsed);
    output(query_time_s, model.head(&s), cs)
}

/// One-step baseline: a single output for the period midpoint, read from `h`.
pub fn onestep_query(
    model: &OdeLstmModel,
    state: &PredictorState,
    stage_start_s: f64,
    period_s: f64,
    cs: &CandidateSet,
) -> Result<PredictionOutput> {
    if cs.len() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            found: cs.len(),
        });
    }
    output(stage_start_s + period_s / 2.0, model.head(&state.h), cs)
}

/// How the tracking variant picks its input window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackingLayout {
    pub strategy: Strategy,
    pub size: usize,
    pub j0: usize,
}

/// Candidate set and pilots the tracking variant reads for a stage.
///
/// Track stages pass through. On a scan stage the model reads the window a
/// track stage would have probed (around the previous optimum) when the scan
/// optimum falls inside it, and otherwise a window re-centred on the scan
/// optimum. Either way the input looks like a tracking stage.
pub fn tracking_view(
    stage: &StageInput<'_>,
    layout: &TrackingLayout,
    q: usize,
) -> Result<(CandidateSet, Vec<PilotObservation>)> {
    if stage.mode == StageMode::Track || stage.candidate_set.len() != q {
        return Ok((stage.candidate_set.clone(), stage.pilots.to_vec()));
    }
    let optima = stage.optima;
    let current = stage.stage_optimum();
    let mut cs = None;
    if optima.len() >= 2 {
        let before = &optima[..optima.len() - 1];
        let dir = estimate_direction(before, q);
        let cand = build_candidate_set(layout.strategy, before[before.len() - 1], layout.size, q, layout.j0, dir)?;
        if cand.contains(current) {
            cs = Some(cand);
        }
    }
    let cs = match cs {
        Some(cs) => cs,
        None => build_candidate_set(
            layout.strategy,
            current,
            layout.size,
            q,
            layout.j0,
            estimate_direction(optima, q),
        )?,
    };
    let pilots = cs
        .global_indices()
        .iter()
        .map(|&g| stage.pilots[g - 1])
        .collect();
    Ok((cs, pilots))
}

/// Scanning-variant input: every codeword slot, zero where nothing was probed.
fn scanning_view(stage: &StageInput<'_>, q: usize) -> Vec<PilotObservation> {
    let mut out: Vec<PilotObservation> = (1..=q)
        .map(|b| PilotObservation {
            beam_index: b,
            value: Complex64::new(0.0, 0.0),
            noise_variance: 0.0,
            time_s: stage.time_s,
        })
        .collect();
    for p in stage.pilots {
        out[p.beam_index - 1] = *p;
    }
    out
}

/// Model input for one stage, for either variant.
pub(crate) fn stage_view(
    model: &OdeLstmModel,
    layout: &TrackingLayout,
    stage: &StageInput<'_>,
    q: usize,
) -> Result<(CandidateSet, Vec<PilotObservation>)> {
    match model.config.variant {
        Variant::Tracking => tracking_view(stage, layout, q),
        Variant::Scanning => Ok((CandidateSet::full(q), scanning_view(stage, q))),
    }
}

/// ODE-LSTM behind the [`BeamPredictor`] interface.
#[derive(Debug, Clone)]
pub struct OdeLstmPredictor {
    model: Arc<OdeLstmModel>,
    layout: TrackingLayout,
    state: Option<PredictorState>,
}

impl OdeLstmPredictor {
    pub fn new(model: Arc<OdeLstmModel>, layout: TrackingLayout) -> Self {
        Self {
            model,
            layout,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&PredictorState> {
        self.state.as_ref()
    }
}

impl BeamPredictor for OdeLstmPredictor {
    fn name(&self) -> &'static str {
        "odelstm"
    }

    fn reset(&mut self) {
        self.state = None;
    }

    fn ingest(&mut self, stage: &StageInput<'_>, codebook: &Codebook) -> Result<()> {
        let q = codebook.size();
        let (cs, pilots) = stage_view(&self.model, &self.layout, stage, q)?;
        let prev = self.state.take().unwrap_or_else(|| PredictorState::new(&self.model, q));
        let mut next = odelstm_ingest(&self.model, &prev, &pilots, &cs)?;
        next.last_stage_time_s = Some(stage.time_s);
        self.state = Some(next);
        Ok(())
    }

    fn query(&mut self, time_s: f64, _codebook: &Codebook) -> Result<PredictionOutput> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("query before the first alignment stage".into()))?;
        odelstm_query(&self.model, state, time_s, &state.last_candidate_set)
    }
}

/// One-step LSTM baseline: one beam per period, held for every instant.
#[derive(Debug, Clone)]
pub struct LstmPredictor {
    model: Arc<OdeLstmModel>,
    layout: TrackingLayout,
    state: Option<PredictorState>,
    held: Option<PredictionOutput>,
}

impl LstmPredictor {
    pub fn new(model: Arc<OdeLstmModel>, layout: TrackingLayout) -> Self {
        Self {
            model,
            layout,
            state: None,
            held: None,
        }
    }

    /// Time the held output was evaluated for.
    pub fn evaluation_time(&self) -> Option<f64> {
        self.held.as_ref().map(|o| o.time_s)
    }
}

impl BeamPredictor for LstmPredictor {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn reset(&mut self) {
        self.state = None;
        self.held = None;
    }

    fn ingest(&mut self, stage: &StageInput<'_>, codebook: &Codebook) -> Result<()> {
        let q = codebook.size();
        let (cs, pilots) = stage_view(&self.model, &self.layout, stage, q)?;
        let prev = self.state.take().unwrap_or_else(|| PredictorState::new(&self.model, q));
        let mut next = odelstm_ingest(&self.model, &prev, &pilots, &cs)?;
        next.last_stage_time_s = Some(stage.time_s);
        self.held = Some(onestep_query(&self.model, &next, stage.time_s, stage.period_s, &cs)?);
        self.state = Some(next);
        Ok(())
    }

    fn query(&mut self, time_s: f64, _codebook: &Codebook) -> Result<PredictionOutput> {
        let stage_time = self.state.as_ref().and_then(|s| s.last_stage_time_s);
        check_query_time(time_s, stage_time)?;
        let mut out = self.held.clone().expect("held output exists once a stage was ingested");
        out.time_s = time_s;
        Ok(out)
    }
}
