use rand::Rng;

use super::{axpy, dot, uniform_fill, Parameters, Tensor};

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(input, output);
        let bound = 1.0 / (input as f64).sqrt();
        uniform_fill(&mut l.weight, bound, rng);
        uniform_fill(&mut l.bias, bound, rng);
        l
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_size());
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.bias.data()[i] + dot(self.weight.row(i), x);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_size()];
        self.forward_into(x, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Linear) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.input_size()];
        self.backward_into(x, grad_out, grads, &mut grad_in);
        grad_in
    }

    /// Like [`Linear::backward`] but adds `dL/dx` into `grad_in`.
    pub fn backward_into(&self, x: &[f64], grad_out: &[f64], grads: &mut Linear, grad_in: &mut [f64]) {
        for (i, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias.data_mut()[i] += g;
            axpy(g, x, grads.weight.row_mut(i));
            axpy(g, self.weight.row(i), grad_in);
        }
    }
}

impl Parameters for Linear {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}
