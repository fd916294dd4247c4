//! A small, dependency-free neural kernel.
//!
//! Layers own their parameters as [`Tensor`]s and expose explicit
//! forward/backward passes; there is no autodiff graph. A gradient
//! accumulator for a layer is simply another instance of the same layer type
//! with zeroed parameters (see [`Parameters::zeroed`]).

mod adam;
mod checkpoint;
mod conv;
mod gradcheck;
mod linear;
mod loss;
mod lstm;
mod ode;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_named_tensors, write_named_tensors};
pub use conv::{conv1d_backward, conv1d_forward, Conv1d};
pub use gradcheck::{grad_check, relative_error};
pub use linear::Linear;
pub use loss::{cross_entropy, fc_softmax, softmax, softmax_cross_entropy_backward, LOSS_FLOOR};
pub use lstm::{lstm_cell_step, LstmCache, LstmCellParams};
pub use ode::{ode_evolve, ode_evolve_backward, OdeCache, OdeDerivativeNet};
pub use tensor::Tensor;

use rand::Rng;

/// Anything that owns a fixed, ordered list of named parameter tensors.
pub trait Parameters {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Same architecture, every parameter zero. Used as a gradient accumulator.
    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.params_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.params() {
            out.extend_from_slice(t.data());
        }
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += other`, parameter by parameter.
    fn accumulate(&mut self, other: &Self) {
        let src: Vec<Vec<f64>> = other.params().iter().map(|(_, t)| t.data().to_vec()).collect();
        for (dst, s) in self.params_mut().into_iter().zip(src) {
            for (d, v) in dst.data_mut().iter_mut().zip(s) {
                *d += v;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.params_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Uniform(-bound, bound) fill.
pub(crate) fn uniform_fill<R: Rng + ?Sized>(t: &mut Tensor, bound: f64, rng: &mut R) {
    for v in t.data_mut() {
        *v = if bound > 0.0 {
            rng.random_range(-bound..bound)
        } else {
            0.0
        };
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
