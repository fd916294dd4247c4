use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::{check_query_time, BeamPredictor, PredictionOutput, StageInput};
use crate::channel::{Codebook, PilotObservation};
use crate::error::{Error, Result};

/// Smallest measurement variance used in the information-form update.
const MIN_MEASUREMENT_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfConfig {
    /// Spectral density of the white angular acceleration, rad^2/s^3.
    pub process_noise: f64,
    /// Per real component; `None` uses half the pilot noise variance.
    pub measurement_noise: Option<f64>,
    pub initial_angle_std: f64,
    pub initial_rate_std: f64,
    /// Extrapolated angles are clamped to `[-limit, limit]`.
    pub sector_limit_radians: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            process_noise: 1.0,
            measurement_noise: None,
            initial_angle_std: 0.05,
            initial_rate_std: 2.0,
            sector_limit_radians: FRAC_PI_2,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.process_noise >= 0.0)
            || self.measurement_noise.is_some_and(|r| !(r >= 0.0))
            || !(self.initial_angle_std > 0.0)
            || !(self.initial_rate_std > 0.0)
        {
            return Err(Error::Config("EKF noise levels must be >= 0 and initial spreads > 0".into()));
        }
        if !(self.sector_limit_radians > 0.0 && self.sector_limit_radians <= FRAC_PI_2) {
            return Err(Error::Config("ekf.sector_limit_rad must be in (0, pi/2]".into()));
        }
        Ok(())
    }
}

/// Constant-rate angle tracker: state `[aod, aod rate]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub process_noise: f64,
    pub measurement_noise: Option<f64>,
    pub time_s: f64,
    pub sector_limit_radians: f64,
}

impl EkfState {
    pub fn new(aod_radians: f64, rate: f64, time_s: f64, cfg: &EkfConfig) -> Self {
        Self {
            mean: [aod_radians, rate],
            covariance: [
                [cfg.initial_angle_std.powi(2), 0.0],
                [0.0, cfg.initial_rate_std.powi(2)],
            ],
            process_noise: cfg.process_noise,
            measurement_noise: cfg.measurement_noise,
            time_s,
            sector_limit_radians: cfg.sector_limit_radians,
        }
    }

    pub fn trace(&self) -> f64 {
        self.covariance[0][0] + self.covariance[1][1]
    }

    fn check(&self) -> Result<()> {
        let p = self.covariance;
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        if !(p[0][0] > 0.0 && det > 0.0) || !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "EKF covariance lost positive definiteness: {p:?}"
            )));
        }
        Ok(())
    }
}

/// Time update over `dt` seconds.
pub fn ekf_predict(state: &EkfState, dt: f64) -> EkfState {
    let p = state.covariance;
    let q = state.process_noise;
    let p00 = p[0][0] + dt * (p[0][1] + p[1][0]) + dt * dt * p[1][1] + q * dt.powi(3) / 3.0;
    let p01 = p[0][1] + dt * p[1][1] + q * dt * dt / 2.0;
    let p11 = p[1][1] + q * dt;
    EkfState {
        mean: [state.mean[0] + dt * state.mean[1], state.mean[1]],
        covariance: [[p00, p01], [p01, p11]],
        time_s: state.time_s + dt,
        ..*state
    }
}

/// Noise-free single-path responses `a(phi)^T f_q` and their derivatives.
fn responses(aod: f64, beams: &[usize], codebook: &Codebook) -> (Vec<Complex64>, Vec<Complex64>) {
    let array = codebook.array();
    let m_count = array.num_antennas;
    let q = codebook.size() as f64;
    let s = array.spacing * aod.sin();
    let ds = array.spacing * aod.cos();
    let mut m = Vec::with_capacity(beams.len());
    let mut dm = Vec::with_capacity(beams.len());
    for &b in beams {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut dacc = Complex64::new(0.0, 0.0);
        for k in 0..m_count {
            let phase = 2.0 * PI * k as f64 * (s + b as f64 / q);
            let e = Complex64::from_polar(1.0, phase);
            acc += e;
            dacc += e * Complex64::new(0.0, 2.0 * PI * k as f64 * ds);
        }
        m.push(acc / m_count as f64);
        dm.push(dacc / m_count as f64);
    }
    (m, dm)
}

/// Predicts to the pilots' time, then updates with them. The unknown complex
/// path gain is profiled out by least squares at the predicted angle.
pub fn ekf_update(state: &EkfState, pilots: &[PilotObservation], codebook: &Codebook) -> Result<EkfState> {
    let Some(first) = pilots.first() else {
        return Err(Error::InvalidParameter("EKF update needs at least one pilot".into()));
    };
    let dt = first.time_s - state.time_s;
    if dt < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "pilots at {} precede the filter time {}",
            first.time_s, state.time_s
        )));
    }
    let mut next = ekf_predict(state, dt);
    let r = next
        .measurement_noise
        .unwrap_or(first.noise_variance / 2.0)
        .max(MIN_MEASUREMENT_NOISE);
    let beams: Vec<usize> = pilots.iter().map(|p| p.beam_index).collect();
    let (m, dm) = responses(next.mean[0], &beams, codebook);
    let energy: f64 = m.iter().map(|v| v.norm_sqr()).sum();
    if energy > 1e-15 {
        let alpha = m.iter().zip(pilots).map(|(mk, p)| mk.conj() * p.value).sum::<Complex64>() / energy;
        let mut hh = 0.0;
        let mut hr = 0.0;
        for ((mk, dmk), p) in m.iter().zip(&dm).zip(pilots) {
            let jac = alpha * dmk;
            let resid = p.value - alpha * mk;
            hh += jac.norm_sqr();
            hr += (jac.conj() * resid).re;
        }
        let p = next.covariance;
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        if !(det > 0.0) {
            return Err(Error::Numeric("EKF prior covariance is singular".into()));
        }
        // Information form: P+ = (P^-1 + H^T H / r)^-1.
        let mut info = [[p[1][1] / det, -p[0][1] / det], [-p[1][0] / det, p[0][0] / det]];
        info[0][0] += hh / r;
        let idet = info[0][0] * info[1][1] - info[0][1] * info[1][0];
        if !(idet > 0.0) {
            return Err(Error::Numeric("EKF information matrix is singular".into()));
        }
        let post = [
            [info[1][1] / idet, -info[0][1] / idet],
            [-info[1][0] / idet, info[0][0] / idet],
        ];
        let g = hr / r;
        next.mean[0] += post[0][0] * g;
        next.mean[1] += post[1][0] * g;
        let off = 0.5 * (post[0][1] + post[1][0]);
        next.covariance = [[post[0][0], off], [off, post[1][1]]];
    }
    next.check()?;
    Ok(next)
}

/// Beam whose phase step is nearest to the extrapolated angle's.
pub fn ekf_query(state: &EkfState, query_time_s: f64, codebook: &Codebook) -> Result<PredictionOutput> {
    let elapsed = check_query_time(query_time_s, Some(state.time_s))?;
    let limit = state.sector_limit_radians;
    let aod = (state.mean[0] + state.mean[1] * elapsed).clamp(-limit, limit);
    let beam = codebook.nearest_beam(aod);
    Ok(PredictionOutput::one_hot(query_time_s, beam, codebook.size()))
}

/// Angle whose matching phase step is the centre of beam `beam`.
pub fn beam_to_aod(beam: usize, codebook: &Codebook) -> f64 {
    let theta = beam as f64 / codebook.size() as f64;
    let centred = theta - theta.round();
    (-centred / codebook.array().spacing).clamp(-1.0, 1.0).asin()
}

#[derive(Debug, Clone)]
pub struct EkfPredictor {
    config: EkfConfig,
    state: Option<EkfState>,
}

impl EkfPredictor {
    pub fn new(config: EkfConfig) -> Self {
        Self { config, state: None }
    }

    pub fn state(&self) -> Option<&EkfState> {
        self.state.as_ref()
    }
}

impl BeamPredictor for EkfPredictor {
    fn name(&self) -> &'static str {
        "ekf"
    }

    fn reset(&mut self) {
        self.state = None;
    }

    fn ingest(&mut self, stage: &StageInput<'_>, codebook: &Codebook) -> Result<()> {
        self.state = Some(match &self.state {
            None => EkfState::new(
                beam_to_aod(stage.stage_optimum(), codebook),
                0.0,
                stage.time_s,
                &self.config,
            ),
            Some(s) => ekf_update(s, stage.pilots, codebook)?,
        });
        Ok(())
    }

    fn query(&mut self, time_s: f64, codebook: &Codebook) -> Result<PredictionOutput> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("query before the first alignment stage".into()))?;
        ekf_query(state, time_s, codebook)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{best_beam, build_codebook, channel_vector, synth_pilot, ArrayConfig, ChannelSnapshot, Path};
    use crate::seeded_rng;

    fn los_pilots(aod: f64, gain: Complex64, t: f64, beams: &[usize], cb: &Codebook) -> Vec<PilotObservation> {
        let snap = ChannelSnapshot {
            time_s: t,
            paths: vec![Path { gain, aod_radians: aod }],
        };
        let h = channel_vector(&snap, cb.array()).unwrap();
        beams
            .iter()
            .map(|&b| synth_pilot(&h, b, cb, 0.0, t, &mut seeded_rng(0)).unwrap())
            .collect()
    }

    #[test]
    fn noiseless_fixed_point() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        let cfg = EkfConfig {
            process_noise: 0.0,
            measurement_noise: Some(0.0),
            ..EkfConfig::default()
        };
        let aod = 0.3;
        let mut s = EkfState::new(aod, 0.0, 0.0, &cfg);
        let beams: Vec<usize> = (1..=64).collect();
        for n in 1..5 {
            let t = n as f64 * 0.1;
            s = ekf_update(&s, &los_pilots(aod, Complex64::new(0.7, -0.2), t, &beams, &cb), &cb).unwrap();
            assert!((s.mean[0] - aod).abs() < 1e-12, "{:?}", s.mean);
            assert!(s.mean[1].abs() < 1e-9);
        }
    }

    #[test]
    fn predict_only_trace_grows() {
        let cfg = EkfConfig::default();
        let mut s = EkfState::new(0.1, 0.5, 0.0, &cfg);
        s.covariance = [[1e-4, 3e-4], [3e-4, 0.04]];
        let mut last = s.trace();
        for _ in 0..50 {
            s = ekf_predict(&s, 0.1);
            assert!(s.trace() >= last);
            s.check().unwrap();
            last = s.trace();
        }
    }

    #[test]
    fn tracks_a_linear_ramp() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        let cfg = EkfConfig::default();
        let (phi0, rate) = (-0.4, 0.35);
        let beams: Vec<usize> = (1..=64).collect();
        let mut s = EkfState::new(beam_to_aod(cb.nearest_beam(phi0), &cb), 0.0, 0.0, &cfg);
        for n in 1..=20 {
            let t = n as f64 * 0.1;
            let p = los_pilots(phi0 + rate * t, Complex64::new(0.0, 1.3), t, &beams, &cb);
            s = ekf_update(&s, &p, &cb).unwrap();
        }
        assert!(((s.mean[1] - rate) / rate).abs() < 0.05, "{:?}", s.mean);
    }

    #[test]
    fn query_matches_brute_force_for_known_state() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        let cfg = EkfConfig::default();
        for aod in [-0.9, -0.3, 0.0, 0.02, 0.6, 1.0] {
            let s = EkfState::new(aod, 0.0, 1.0, &cfg);
            let snap = ChannelSnapshot {
                time_s: 1.0,
                paths: vec![Path {
                    gain: Complex64::new(1.0, 0.0),
                    aod_radians: aod,
                }],
            };
            let best = best_beam(&channel_vector(&snap, cb.array()).unwrap(), &cb).unwrap();
            let a = ekf_query(&s, 1.0, &cb).unwrap();
            let b = ekf_query(&s, 1.07, &cb).unwrap();
            assert_eq!(a.global_index, best);
            assert_eq!(b.global_index, best);
            assert_eq!(a.probabilities.iter().sum::<f64>(), 1.0);
            assert!(ekf_query(&s, 0.9, &cb).is_err());
        }
    }

    #[test]
    fn beam_angle_round_trip() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        for b in 1..=64 {
            let aod = beam_to_aod(b, &cb);
            if aod.abs() < FRAC_PI_2 - 1e-9 {
                assert_eq!(cb.nearest_beam(aod), b);
            }
        }
    }

    #[test]
    fn extrapolation_is_clamped() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        let cfg = EkfConfig {
            sector_limit_radians: 1.0,
            ..EkfConfig::default()
        };
        let s = EkfState::new(0.9, 10.0, 0.0, &cfg);
        let out = ekf_query(&s, 0.1, &cb).unwrap();
        assert_eq!(out.global_index, cb.nearest_beam(1.0));
    }
}
