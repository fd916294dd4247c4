//! Geometric ULA channel, DFT codebook and beamforming gain.
//!
//! Sign convention: gains are `|h^T f|^2` with a plain transpose, never the
//! conjugate transpose. A single path at angle `phi` is therefore matched by
//! the codeword whose phase step `theta_q = q / Q` satisfies
//! `theta_q = (-(d/lambda) * sin(phi)) mod 1`. Swapping in `h^H f` silently
//! mirrors every beam index, so [`matching_theta`] is the one place that
//! encodes the relation.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Uniform linear array at the base station plus its codebook size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    pub num_antennas: usize,
    /// Element spacing divided by the carrier wavelength.
    pub spacing: f64,
    pub codebook_size: usize,
}

impl ArrayConfig {
    pub fn new(num_antennas: usize, spacing: f64, codebook_size: usize) -> Result<Self> {
        let cfg = Self {
            num_antennas,
            spacing,
            codebook_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas == 0 {
            return Err(Error::Config("array.num_antennas must be >= 1".into()));
        }
        if self.codebook_size == 0 {
            return Err(Error::Config("array.codebook_size must be >= 1".into()));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::Config("array.spacing must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            num_antennas: 16,
            spacing: 0.5,
            codebook_size: 64,
        }
    }
}

/// One propagation path: complex gain and angle of departure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub aod_radians: f64,
}

/// Multipath state of the channel at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    pub time_s: f64,
    pub paths: Vec<Path>,
}

/// Received pilot for one probed beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotObservation {
    /// 1-based global codebook index.
    pub beam_index: usize,
    pub value: Complex64,
    pub noise_variance: f64,
    pub time_s: f64,
}

/// The Q DFT beamformers.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    array: ArrayConfig,
    codewords: Vec<Vec<Complex64>>,
}

impl Codebook {
    pub fn array(&self) -> &ArrayConfig {
        &self.array
    }

    pub fn size(&self) -> usize {
        self.codewords.len()
    }

    /// Codeword for a 1-based global index.
    pub fn codeword(&self, index: usize) -> Result<&[Complex64]> {
        self.check_index(index)?;
        Ok(&self.codewords[index - 1])
    }

    pub fn codewords(&self) -> impl Iterator<Item = &[Complex64]> {
        self.codewords.iter().map(Vec::as_slice)
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index == 0 || index > self.codewords.len() {
            return Err(Error::InvalidBeamIndex {
                index,
                codebook_size: self.codewords.len(),
            });
        }
        Ok(())
    }

    /// Index of the codeword whose phase step is closest on the unit ring to
    /// the one matching a single path at `aod_radians`.
    pub fn nearest_beam(&self, aod_radians: f64) -> usize {
        let q = self.codewords.len();
        let theta = matching_theta(aod_radians, self.array.spacing);
        let idx = (theta * q as f64).round() as usize % q;
        if idx == 0 {
            q
        } else {
            idx
        }
    }
}

/// Phase step `theta in [0, 1)` of the ideal codeword for a single path.
pub fn matching_theta(aod_radians: f64, spacing: f64) -> f64 {
    (-spacing * aod_radians.sin()).rem_euclid(1.0)
}

pub fn check_aod(aod_radians: f64) -> Result<()> {
    // Tolerate rounding at the sector edge.
    if !aod_radians.is_finite() || aod_radians.abs() > FRAC_PI_2 + 1e-12 {
        return Err(Error::AngleOutOfSector(aod_radians));
    }
    Ok(())
}

/// ULA response `a(phi)`, element `m` equal to `exp(j 2 pi m (d/lambda) sin phi) / sqrt(M)`.
pub fn steering_vector(aod_radians: f64, array: &ArrayConfig) -> Result<Vec<Complex64>> {
    check_aod(aod_radians)?;
    Ok(steering_unchecked(aod_radians, array))
}

fn steering_unchecked(aod_radians: f64, array: &ArrayConfig) -> Vec<Complex64> {
    let m = array.num_antennas;
    let scale = 1.0 / (m as f64).sqrt();
    let step = 2.0 * PI * array.spacing * aod_radians.sin();
    (0..m)
        .map(|k| Complex64::from_polar(scale, step * k as f64))
        .collect()
}

/// DFT codebook; codeword `q` (1-based) has element `m` equal to
/// `exp(j 2 pi m q / Q) / sqrt(M)`.
pub fn build_codebook(array: &ArrayConfig) -> Result<Codebook> {
    array.validate()?;
    let m = array.num_antennas;
    let q_total = array.codebook_size;
    let scale = 1.0 / (m as f64).sqrt();
    let codewords = (1..=q_total)
        .map(|q| {
            (0..m)
                .map(|k| {
                    // Reduce the product modulo Q first so large m*q keeps full precision.
                    let frac = ((k * q) % q_total) as f64 / q_total as f64;
                    Complex64::from_polar(scale, 2.0 * PI * frac)
                })
                .collect()
        })
        .collect();
    Ok(Codebook {
        array: *array,
        codewords,
    })
}

/// `h_t = sum_l alpha_l a(phi_l)`.
pub fn channel_vector(snapshot: &ChannelSnapshot, array: &ArrayConfig) -> Result<Vec<Complex64>> {
    let mut h = vec![Complex64::new(0.0, 0.0); array.num_antennas];
    for path in &snapshot.paths {
        check_aod(path.aod_radians)?;
        let a = steering_unchecked(path.aod_radians, array);
        for (hm, am) in h.iter_mut().zip(&a) {
            *hm += path.gain * am;
        }
    }
    Ok(h)
}

/// `h^T f` (no conjugation).
pub fn response(h: &[Complex64], f: &[Complex64]) -> Result<Complex64> {
    if h.len() != f.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            found: f.len(),
        });
    }
    Ok(h.iter().zip(f).map(|(a, b)| a * b).sum())
}

/// `|h^T f|^2`.
pub fn beamforming_gain(h: &[Complex64], f: &[Complex64]) -> Result<f64> {
    Ok(response(h, f)?.norm_sqr())
}

/// Gains of every codeword, in codebook order.
pub fn all_gains(h: &[Complex64], codebook: &Codebook) -> Result<Vec<f64>> {
    codebook.codewords().map(|f| beamforming_gain(h, f)).collect()
}

/// Optimal beam (1-based); ties go to the smallest index.
pub fn best_beam(h: &[Complex64], codebook: &Codebook) -> Result<usize> {
    let gains = all_gains(h, codebook)?;
    Ok(argmax_first(&gains) + 1)
}

/// Position of the first maximum. Empty input returns 0.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Received pilot `y = h^T f_q * 1 + z`, with circularly-symmetric complex
/// Gaussian noise of total variance `noise_variance`.
pub fn synth_pilot<R: Rng + ?Sized>(
    h: &[Complex64],
    beam_index: usize,
    codebook: &Codebook,
    noise_variance: f64,
    time_s: f64,
    rng: &mut R,
) -> Result<PilotObservation> {
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be >= 0, got {noise_variance}"
        )));
    }
    let f = codebook.codeword(beam_index)?;
    let mut value = response(h, f)?;
    if noise_variance > 0.0 {
        let normal = Normal::new(0.0, (noise_variance / 2.0).sqrt())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        value += Complex64::new(normal.sample(rng), normal.sample(rng));
    }
    Ok(PilotObservation {
        beam_index,
        value,
        noise_variance,
        time_s,
    })
}

/// Gain of the predicted beam over the gain of the optimal beam. A zero
/// channel makes every beam optimal and yields 1.
pub fn normalized_gain(h: &[Complex64], predicted_index: usize, codebook: &Codebook) -> Result<f64> {
    codebook.check_index(predicted_index)?;
    let gains = all_gains(h, codebook)?;
    Ok(normalized_from_gains(&gains, predicted_index))
}

/// Same as [`normalized_gain`] when the per-beam gains are already known.
pub fn normalized_from_gains(gains: &[f64], predicted_index: usize) -> f64 {
    let best = gains[argmax_first(gains)];
    if best <= 0.0 {
        return 1.0;
    }
    (gains[predicted_index - 1] / best).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_vec_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn steering_broadside_is_flat() {
        let array = ArrayConfig::new(4, 0.5, 4).unwrap();
        let a = steering_vector(0.0, &array).unwrap();
        assert_vec_close(&a, &[c(0.5, 0.0); 4], 1e-15);
    }

    #[test]
    fn steering_single_element() {
        let array = ArrayConfig::new(1, 0.5, 4).unwrap();
        for aod in [-1.2, 0.0, 0.7] {
            assert_vec_close(&steering_vector(aod, &array).unwrap(), &[c(1.0, 0.0)], 1e-15);
        }
    }

    #[test]
    fn steering_thirty_degrees() {
        let array = ArrayConfig::new(4, 0.5, 4).unwrap();
        let a = steering_vector(PI / 6.0, &array).unwrap();
        let expect = [c(0.5, 0.0), c(0.0, 0.5), c(-0.5, 0.0), c(0.0, -0.5)];
        assert_vec_close(&a, &expect, 1e-12);
    }

    #[test]
    fn steering_rejects_out_of_sector() {
        let array = ArrayConfig::default();
        assert!(matches!(
            steering_vector(2.0, &array),
            Err(Error::AngleOutOfSector(_))
        ));
    }

    #[test]
    fn codebook_last_codeword_is_flat() {
        let array = ArrayConfig::new(8, 0.5, 16).unwrap();
        let cb = build_codebook(&array).unwrap();
        let f = cb.codeword(16).unwrap();
        let s = 1.0 / 8f64.sqrt();
        assert_vec_close(f, &[c(s, 0.0); 8], 1e-15);
    }

    #[test]
    fn codebook_two_by_two() {
        let array = ArrayConfig::new(2, 0.5, 2).unwrap();
        let cb = build_codebook(&array).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_vec_close(cb.codeword(1).unwrap(), &[c(s, 0.0), c(-s, 0.0)], 1e-15);
        assert_vec_close(cb.codeword(2).unwrap(), &[c(s, 0.0), c(s, 0.0)], 1e-15);
        let ip: Complex64 = cb
            .codeword(1)
            .unwrap()
            .iter()
            .zip(cb.codeword(2).unwrap())
            .map(|(a, b)| a.conj() * b)
            .sum();
        assert!(ip.norm() < 1e-15);
    }

    #[test]
    fn codebook_index_bounds() {
        let cb = build_codebook(&ArrayConfig::default()).unwrap();
        assert!(cb.codeword(0).is_err());
        assert!(cb.codeword(65).is_err());
        assert!(cb.codeword(64).is_ok());
    }

    #[test]
    fn channel_vector_cases() {
        let array = ArrayConfig::new(4, 0.5, 8).unwrap();
        let one = ChannelSnapshot {
            time_s: 0.0,
            paths: vec![Path {
                gain: c(1.0, 0.0),
                aod_radians: 0.0,
            }],
        };
        assert_vec_close(&channel_vector(&one, &array).unwrap(), &[c(0.5, 0.0); 4], 1e-15);

        let empty = ChannelSnapshot {
            time_s: 0.0,
            paths: vec![],
        };
        assert_vec_close(&channel_vector(&empty, &array).unwrap(), &[c(0.0, 0.0); 4], 0.0);

        let cancel = ChannelSnapshot {
            time_s: 0.0,
            paths: vec![
                Path {
                    gain: c(1.0, 0.0),
                    aod_radians: 0.4,
                },
                Path {
                    gain: c(-1.0, 0.0),
                    aod_radians: 0.4,
                },
            ],
        };
        assert_vec_close(&channel_vector(&cancel, &array).unwrap(), &[c(0.0, 0.0); 4], 1e-15);
    }

    #[test]
    fn gain_of_conjugate_is_one() {
        let array = ArrayConfig::new(8, 0.5, 8).unwrap();
        let h = steering_vector(0.3, &array).unwrap();
        let f: Vec<_> = h.iter().map(|x| x.conj()).collect();
        assert!((beamforming_gain(&h, &f).unwrap() - 1.0).abs() < 1e-12);
        let zero = vec![c(0.0, 0.0); 8];
        assert_eq!(beamforming_gain(&zero, &f).unwrap(), 0.0);
        assert!(matches!(
            beamforming_gain(&zero, &f[..4]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matched_codeword_has_unit_gain() {
        // Pick the angle so that -(d/lambda) sin(phi) mod 1 lands exactly on q0/Q.
        let array = ArrayConfig::new(16, 0.5, 64).unwrap();
        let cb = build_codebook(&array).unwrap();
        for q0 in [1usize, 5, 17, 40, 63, 64] {
            let theta = q0 as f64 / 64.0;
            let s = if theta > 0.5 { 2.0 * (1.0 - theta) } else { -2.0 * theta };
            if s.abs() > 1.0 {
                continue;
            }
            let phi = s.asin();
            let h = steering_vector(phi, &array).unwrap();
            let g = beamforming_gain(&h, cb.codeword(q0).unwrap()).unwrap();
            assert!((g - 1.0).abs() < 1e-12, "q0={q0} g={g}");
            assert_eq!(best_beam(&h, &cb).unwrap(), q0);
            assert_eq!(cb.nearest_beam(phi), q0);
        }
    }

    #[test]
    fn single_beam_codebook() {
        let array = ArrayConfig::new(4, 0.5, 1).unwrap();
        let cb = build_codebook(&array).unwrap();
        let h = steering_vector(0.9, &array).unwrap();
        assert_eq!(best_beam(&h, &cb).unwrap(), 1);
        assert_eq!(normalized_gain(&h, 1, &cb).unwrap(), 1.0);
    }

    #[test]
    fn best_beam_tie_goes_to_smallest() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn normalized_gain_zero_channel_is_one() {
        let array = ArrayConfig::new(4, 0.5, 8).unwrap();
        let cb = build_codebook(&array).unwrap();
        let zero = vec![c(0.0, 0.0); 4];
        assert_eq!(normalized_gain(&zero, 3, &cb).unwrap(), 1.0);
        assert!(normalized_gain(&zero, 9, &cb).is_err());
    }

    #[test]
    fn pilot_noiseless_is_exact() {
        let array = ArrayConfig::new(8, 0.5, 16).unwrap();
        let cb = build_codebook(&array).unwrap();
        let h = steering_vector(-0.4, &array).unwrap();
        let mut rng = seeded_rng(1);
        let p = synth_pilot(&h, 3, &cb, 0.0, 0.25, &mut rng).unwrap();
        assert_eq!(p.value, response(&h, cb.codeword(3).unwrap()).unwrap());
        assert_eq!(p.beam_index, 3);
        assert_eq!(p.time_s, 0.25);
        assert!(synth_pilot(&h, 17, &cb, 0.0, 0.0, &mut rng).is_err());
        assert!(synth_pilot(&h, 1, &cb, -1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn pilot_deterministic_per_seed() {
        let array = ArrayConfig::new(8, 0.5, 16).unwrap();
        let cb = build_codebook(&array).unwrap();
        let h = steering_vector(0.2, &array).unwrap();
        let a = synth_pilot(&h, 5, &cb, 0.3, 0.0, &mut seeded_rng(9)).unwrap();
        let b = synth_pilot(&h, 5, &cb, 0.3, 0.0, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pilot_noise_variance() {
        let array = ArrayConfig::new(4, 0.5, 8).unwrap();
        let cb = build_codebook(&array).unwrap();
        let h = vec![c(0.0, 0.0); 4];
        let mut rng = seeded_rng(2024);
        let n = 10_000;
        let samples: Vec<Complex64> = (0..n)
            .map(|_| synth_pilot(&h, 1, &cb, 1.0, 0.0, &mut rng).unwrap().value)
            .collect();
        let mean: Complex64 = samples.iter().sum::<Complex64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.1, "sample variance {var}");
    }
}
