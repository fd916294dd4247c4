use rand::Rng;

use super::{axpy, Linear, Parameters, Tensor};
use crate::error::{Error, Result};

/// Autonomous derivative `ds/dt = W2 tanh(W1 s + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeDerivativeNet {
    pub inner: Linear,
    pub outer: Linear,
}

/// Intermediate states of an Euler integration, for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct OdeCache {
    dt: f64,
    states: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
}

impl OdeDerivativeNet {
    pub fn zeros(state_size: usize, hidden_width: usize) -> Self {
        Self {
            inner: Linear::zeros(state_size, hidden_width),
            outer: Linear::zeros(hidden_width, state_size),
        }
    }

    pub fn init<R: Rng + ?Sized>(state_size: usize, hidden_width: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::init(state_size, hidden_width, rng),
            outer: Linear::init(hidden_width, state_size, rng),
        }
    }

    pub fn state_size(&self) -> usize {
        self.inner.input_size()
    }

    pub fn hidden_width(&self) -> usize {
        self.inner.output_size()
    }

    fn activation(&self, s: &[f64], a: &mut [f64]) {
        self.inner.forward_into(s, a);
        a.iter_mut().for_each(|v| *v = v.tanh());
    }

    pub fn derivative(&self, s: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.hidden_width()];
        self.activation(s, &mut a);
        self.outer.forward(&a)
    }

    fn integrate(&self, s0: &[f64], elapsed: f64, steps: usize, mut cache: Option<&mut OdeCache>) -> Vec<f64> {
        let mut s = s0.to_vec();
        if elapsed == 0.0 {
            return s;
        }
        let dt = elapsed / steps as f64;
        let mut a = vec![0.0; self.hidden_width()];
        let mut ds = vec![0.0; self.state_size()];
        if let Some(c) = cache.as_deref_mut() {
            c.dt = dt;
            c.states.clear();
            c.activations.clear();
        }
        for _ in 0..steps {
            self.activation(&s, &mut a);
            self.outer.forward_into(&a, &mut ds);
            if let Some(c) = cache.as_deref_mut() {
                c.states.push(s.clone());
                c.activations.push(a.clone());
            }
            axpy(dt, &ds, &mut s);
        }
        s
    }

    /// Euler integration without keeping intermediate states.
    pub fn evolve(&self, s0: &[f64], elapsed: f64, steps: usize) -> Vec<f64> {
        self.integrate(s0, elapsed, steps, None)
    }
}

impl Parameters for OdeDerivativeNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p: Vec<(String, &Tensor)> = Vec::new();
        for (n, t) in self.inner.params() {
            p.push((format!("inner.{n}"), t));
        }
        for (n, t) in self.outer.params() {
            p.push((format!("outer.{n}"), t));
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.inner.params_mut();
        p.extend(self.outer.params_mut());
        p
    }
}

/// Explicit Euler: `s <- s + (elapsed/steps) * net(s)`, `steps` times.
/// Zero elapsed time returns `s0` unchanged.
pub fn ode_evolve(net: &OdeDerivativeNet, s0: &[f64], elapsed: f64, steps: usize) -> Result<(Vec<f64>, OdeCache)> {
    if steps == 0 {
        return Err(Error::InvalidParameter("ODE step count must be >= 1".into()));
    }
    if !(elapsed >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "elapsed time must be >= 0, got {elapsed}"
        )));
    }
    if s0.len() != net.state_size() {
        return Err(Error::DimensionMismatch {
            expected: net.state_size(),
            found: s0.len(),
        });
    }
    let mut cache = OdeCache::default();
    let s = net.integrate(s0, elapsed, steps, Some(&mut cache));
    Ok((s, cache))
}

/// Backpropagates `grad_s` (gradient at the final state) through every Euler
/// step. Returns the gradient at `s0`; parameter gradients go into `grads`.
pub fn ode_evolve_backward(
    net: &OdeDerivativeNet,
    cache: &OdeCache,
    grad_s: &[f64],
    grads: &mut OdeDerivativeNet,
) -> Vec<f64> {
    let mut g = grad_s.to_vec();
    let mut scaled = vec![0.0; g.len()];
    for (s, a) in cache.states.iter().zip(&cache.activations).rev() {
        for (sv, gv) in scaled.iter_mut().zip(&g) {
            *sv = cache.dt * gv;
        }
        let mut da = net.outer.backward(a, &scaled, &mut grads.outer);
        for (d, av) in da.iter_mut().zip(a) {
            *d *= 1.0 - av * av;
        }
        net.inner.backward_into(s, &da, &mut grads.inner, &mut g);
    }
    g
}
