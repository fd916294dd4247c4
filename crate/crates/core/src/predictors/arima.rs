use super::{check_query_time, BeamPredictor, PredictionOutput, StageInput};
use crate::channel::Codebook;
use crate::error::{Error, Result};
use crate::selection::{circular_offset, wrap_index};

/// Floor on `RSS / n` inside the AIC logarithm.
const MIN_MEAN_SQUARE: f64 = 1e-12;
/// MA coefficients are kept inside this bound so residual recursions stay stable.
const MA_BOUND: f64 = 0.98;
const REFINE_ITERATIONS: usize = 3;
pub const MIN_SERIES_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaConfig {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
    /// Periods of past predictions kept as history.
    pub history_periods: usize,
    /// Fit on stage optima instead of per-instant predictions.
    pub per_stage: bool,
    /// History length of the per-stage series.
    pub stage_history: usize,
    pub prediction_count: usize,
}

impl Default for ArimaConfig {
    fn default() -> Self {
        Self {
            max_p: 3,
            max_d: 1,
            max_q: 2,
            history_periods: 4,
            per_stage: false,
            stage_history: 16,
            prediction_count: 99,
        }
    }
}

impl ArimaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_p > 3 || self.max_d > 1 || self.max_q > 2 {
            return Err(Error::Config("ARIMA grid is limited to p <= 3, d <= 1, q <= 2".into()));
        }
        if self.prediction_count == 0 {
            return Err(Error::Config("arima prediction count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub aic: f64,
}

impl ArimaModel {
    pub fn num_params(&self) -> usize {
        self.p + self.q + 1
    }
}

fn difference(x: &[f64], d: usize) -> Vec<f64> {
    let mut w = x.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    w
}

/// Least squares via normal equations with a tiny ridge and partial pivoting.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows.first().map_or(0, Vec::len);
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, &yv) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += r[i] * r[j];
            }
            a[i][k] += r[i] * yv;
        }
    }
    let scale = (0..k).map(|i| a[i][i]).fold(0.0, f64::max).max(1.0);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-10 * scale;
    }
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        let diag = a[col][col];
        if diag.abs() < 1e-300 {
            continue;
        }
        for row in 0..k {
            if row != col {
                let factor = a[row][col] / diag;
                if factor != 0.0 {
                    for j in col..=k {
                        a[row][j] -= factor * a[col][j];
                    }
                }
            }
        }
    }
    (0..k)
        .map(|i| if a[i][i].abs() < 1e-300 { 0.0 } else { a[i][k] / a[i][i] })
        .collect()
}

/// Conditional residuals of an ARMA model on `w`; zero before `start`.
fn arma_residuals(w: &[f64], start: usize, c: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; w.len()];
    for t in start..w.len() {
        let mut pred = c;
        for (i, phi) in ar.iter().enumerate() {
            pred += phi * w[t - 1 - i];
        }
        for (j, theta) in ma.iter().enumerate() {
            if t > j {
                pred += theta * e[t - 1 - j];
            }
        }
        e[t] = w[t] - pred;
    }
    e
}

/// Regresses `w_t` on `[1, w_{t-1..p}, e_{t-1..q}]` for `t >= start`.
fn regress(w: &[f64], e: &[f64], start: usize, p: usize, q: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let mut rows = Vec::with_capacity(w.len() - start);
    let mut y = Vec::with_capacity(w.len() - start);
    for t in start..w.len() {
        let mut r = Vec::with_capacity(1 + p + q);
        r.push(1.0);
        r.extend((1..=p).map(|i| w[t - i]));
        r.extend((1..=q).map(|j| if t >= j { e[t - j] } else { 0.0 }));
        rows.push(r);
        y.push(w[t]);
    }
    let beta = least_squares(&rows, &y);
    let ma = beta[1 + p..].iter().map(|v| v.clamp(-MA_BOUND, MA_BOUND)).collect();
    (beta[0], beta[1..1 + p].to_vec(), ma)
}

/// Conditional-sum-of-squares fit of one order. Residuals are scored from
/// `start` so every order of a grid is judged on the same samples.
fn fit_order(x: &[f64], p: usize, d: usize, q: usize, start_x: usize) -> ArimaModel {
    let w = difference(x, d);
    let start = start_x - d;
    let mut e = vec![0.0; w.len()];
    if q > 0 {
        // Long autoregression for initial innovation estimates.
        let m = (p + q + 3).min(w.len() / 3).max(1);
        let (c, ar, _) = regress(&w, &e, m, m, 0);
        e = arma_residuals(&w, m, c, &ar, &[]);
    }
    let (mut c, mut ar, mut ma) = regress(&w, &e, start, p, q);
    let mut resid = arma_residuals(&w, start, c, &ar, &ma);
    let mut rss: f64 = resid[start..].iter().map(|v| v * v).sum();
    if q > 0 {
        for _ in 0..REFINE_ITERATIONS {
            let (c2, ar2, ma2) = regress(&w, &resid, start, p, q);
            let r2 = arma_residuals(&w, start, c2, &ar2, &ma2);
            let rss2: f64 = r2[start..].iter().map(|v| v * v).sum();
            if !(rss2.is_finite() && rss2 <= rss) {
                break;
            }
            (c, ar, ma, resid, rss) = (c2, ar2, ma2, r2, rss2);
        }
    }
    let n = (w.len() - start) as f64;
    let k = (p + q + 1) as f64;
    let aic = 2.0 * k + n * (rss / n).max(MIN_MEAN_SQUARE).ln();
    ArimaModel {
        p,
        d,
        q,
        ar,
        ma,
        intercept: c,
        residuals: resid,
        rss,
        aic,
    }
}

/// Every order of the grid, fitted.
pub fn arima_candidates(series: &[f64], cfg: &ArimaConfig) -> Result<Vec<ArimaModel>> {
    cfg.validate()?;
    if series.len() < MIN_SERIES_LEN {
        return Err(Error::InvalidParameter(format!(
            "ARIMA needs at least {MIN_SERIES_LEN} samples, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ARIMA series contains non-finite values".into()));
    }
    let start_x = cfg.max_p + cfg.max_d;
    let mut out = Vec::new();
    for d in 0..=cfg.max_d {
        for p in 0..=cfg.max_p {
            for q in 0..=cfg.max_q {
                out.push(fit_order(series, p, d, q, start_x));
            }
        }
    }
    Ok(out)
}

/// Grid search by AIC; ties go to fewer parameters, then to less differencing.
pub fn arima_fit(series: &[f64], cfg: &ArimaConfig) -> Result<ArimaModel> {
    let candidates = arima_candidates(series, cfg)?;
    let best = candidates
        .into_iter()
        .filter(|m| m.aic.is_finite())
        .min_by(|a, b| {
            a.aic
                .total_cmp(&b.aic)
                .then(a.num_params().cmp(&b.num_params()))
                .then(a.d.cmp(&b.d))
        })
        .ok_or_else(|| Error::Numeric("no ARIMA order produced a finite fit".into()))?;
    Ok(best)
}

/// Recursive `steps`-ahead forecast continuing `history`.
pub fn arima_forecast(model: &ArimaModel, history: &[f64], steps: usize) -> Vec<f64> {
    if steps == 0 || history.len() <= model.d {
        return Vec::new();
    }
    let mut w = difference(history, model.d);
    let start = model.p.min(w.len());
    let mut e = arma_residuals(&w, start, model.intercept, &model.ar, &model.ma);
    let mut level = *history.last().expect("non-empty");
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let t = w.len();
        let mut next = model.intercept;
        for (i, phi) in model.ar.iter().enumerate() {
            if t > i {
                next += phi * w[t - 1 - i];
            }
        }
        for (j, theta) in model.ma.iter().enumerate() {
            if t > j {
                next += theta * e[t - 1 - j];
            }
        }
        w.push(next);
        e.push(0.0);
        level = if model.d == 1 { level + next } else { next };
        out.push(level);
    }
    out
}

/// Beam indices as a continuous series: steps across the Q/1 seam are
/// taken the short way round the ring.
pub fn unwrap_beam_series(beams: &[usize], q: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(beams.len());
    let mut acc = 0i64;
    for (k, &b) in beams.iter().enumerate() {
        if k == 0 {
            acc = b as i64;
        } else {
            acc += circular_offset(beams[k - 1], b, q);
        }
        out.push(acc as f64);
    }
    out
}

/// Rounds a forecast value and wraps it back onto `[1, Q]`.
pub fn beam_from_forecast(value: f64, q: usize) -> usize {
    let v = if value.is_finite() { value.round() } else { 1.0 };
    let v = v.clamp(-1e15, 1e15) as i64;
    wrap_index(1, v - 1, q)
}

/// Online ARIMA over the predicted-beam history, refitted every stage.
#[derive(Debug, Clone)]
pub struct ArimaPredictor {
    config: ArimaConfig,
    history: Vec<usize>,
    stage_optima: Vec<usize>,
    stage_time_s: Option<f64>,
    period_s: f64,
    forecast: Vec<usize>,
}

impl ArimaPredictor {
    pub fn new(config: ArimaConfig) -> Self {
        Self {
            config,
            history: Vec::new(),
            stage_optima: Vec::new(),
            stage_time_s: None,
            period_s: 0.0,
            forecast: Vec::new(),
        }
    }

    fn plan(&self, optimum: usize, q: usize) -> Result<Vec<usize>> {
        let count = self.config.prediction_count;
        let hold = || vec![optimum; count];
        if self.config.per_stage {
            let keep = self.config.stage_history.max(MIN_SERIES_LEN);
            let from = self.stage_optima.len().saturating_sub(keep);
            let series = unwrap_beam_series(&self.stage_optima[from..], q);
            if series.len() < MIN_SERIES_LEN {
                return Ok(hold());
            }
            let model = arima_fit(&series, &self.config)?;
            let next = arima_forecast(&model, &series, 1)[0];
            let now = *series.last().expect("non-empty");
            return Ok((1..=count)
                .map(|i| {
                    let tau = i as f64 / (count + 1) as f64;
                    beam_from_forecast(now + tau * (next - now), q)
                })
                .collect());
        }
        let mut beams = self.history.clone();
        beams.push(optimum);
        let series = unwrap_beam_series(&beams, q);
        if series.len() < MIN_SERIES_LEN {
            return Ok(hold());
        }
        let model = arima_fit(&series, &self.config)?;
        Ok(arima_forecast(&model, &series, count)
            .into_iter()
            .map(|v| beam_from_forecast(v, q))
            .collect())
    }
}

impl BeamPredictor for ArimaPredictor {
    fn name(&self) -> &'static str {
        "arima"
    }

    fn reset(&mut self) {
        self.history.clear();
        self.stage_optima.clear();
        self.stage_time_s = None;
        self.forecast.clear();
    }

    fn ingest(&mut self, stage: &StageInput<'_>, codebook: &Codebook) -> Result<()> {
        // Last period's predictions become history.
        self.history.append(&mut self.forecast);
        let keep = self.config.history_periods * self.config.prediction_count;
        if self.history.len() > keep {
            self.history.drain(..self.history.len() - keep);
        }
        let optimum = stage.stage_optimum();
        self.stage_optima.push(optimum);
        self.stage_time_s = Some(stage.time_s);
        self.period_s = stage.period_s;
        self.forecast = self.plan(optimum, codebook.size())?;
        Ok(())
    }

    fn query(&mut self, time_s: f64, codebook: &Codebook) -> Result<PredictionOutput> {
        let elapsed = check_query_time(time_s, self.stage_time_s)?;
        let count = self.forecast.len();
        let step = self.period_s / (count + 1) as f64;
        let slot = ((elapsed / step).round() as usize).clamp(1, count);
        Ok(PredictionOutput::one_hot(time_s, self.forecast[slot - 1], codebook.size()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_series() {
        let s = vec![17.0; 40];
        let m = arima_fit(&s, &ArimaConfig::default()).unwrap();
        assert_eq!(m.d, 0);
        for v in arima_forecast(&m, &s, 10) {
            assert!((v - 17.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn ramp_is_continued_exactly() {
        let s: Vec<f64> = (0..30).map(|i| 3.0 + 0.5 * i as f64).collect();
        let m = arima_fit(&s, &ArimaConfig::default()).unwrap();
        assert_eq!(m.d, 1);
        assert!(m.rss < 1e-12);
        let f = arima_forecast(&m, &s, 5);
        for (k, v) in f.iter().enumerate() {
            assert!((v - (3.0 + 0.5 * (30 + k) as f64)).abs() < 1e-6);
        }
    }

    #[test]
    fn white_noise_prefers_the_null_model() {
        let mut rng = crate::seeded_rng(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let s: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let cands = arima_candidates(&s, &ArimaConfig::default()).unwrap();
        let get = |p, d, q| cands.iter().find(|m| (m.p, m.d, m.q) == (p, d, q)).unwrap().aic;
        assert!(get(0, 0, 0) < get(3, 1, 2));
        let best = arima_fit(&s, &ArimaConfig::default()).unwrap();
        assert!(cands.iter().all(|m| best.aic <= m.aic));
    }

    #[test]
    fn ar1_recursion() {
        let m = ArimaModel {
            p: 1,
            d: 0,
            q: 0,
            ar: vec![0.5],
            ma: vec![],
            intercept: 0.0,
            residuals: vec![],
            rss: 0.0,
            aic: 0.0,
        };
        assert_eq!(arima_forecast(&m, &[1.0, 8.0], 2), vec![4.0, 2.0]);
        assert!(arima_forecast(&m, &[1.0, 8.0], 0).is_empty());
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(arima_fit(&[1.0; 7], &ArimaConfig::default()).is_err());
    }

    #[test]
    fn beam_series_unwraps_across_the_seam() {
        let s = unwrap_beam_series(&[62, 63, 64, 1, 2], 64);
        assert_eq!(s, vec![62.0, 63.0, 64.0, 65.0, 66.0]);
        assert_eq!(beam_from_forecast(65.4, 64), 1);
        assert_eq!(beam_from_forecast(0.0, 64), 64);
        assert_eq!(beam_from_forecast(-1.0, 64), 63);
    }
}
