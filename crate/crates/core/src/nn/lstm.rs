use rand::Rng;

use super::{axpy, dot, sigmoid, uniform_fill, Parameters, Tensor};
use crate::error::{Error, Result};

/// Standard LSTM cell. The four gate blocks are stacked row-wise in the
/// order input, forget, candidate, output: rows `[0, H)` hold the input gate,
/// `[H, 2H)` the forget gate and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    /// Activated gates, stacked like the parameters.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden_size, input_size]),
            w_hh: Tensor::zeros(&[4 * hidden_size, hidden_size]),
            bias: Tensor::zeros(&[4 * hidden_size]),
        }
    }

    /// Uniform(+-1/sqrt(fan_in)) weights, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        let bound = 1.0 / ((input_size + hidden_size) as f64).sqrt();
        uniform_fill(&mut p.w_ih, bound, rng);
        uniform_fill(&mut p.w_hh, bound, rng);
        uniform_fill(&mut p.bias, bound, rng);
        p.bias.data_mut()[hidden_size..2 * hidden_size].fill(1.0);
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[1]
    }

    /// Backward through one step. `dh_next`/`dc_next` are the gradients
    /// arriving at the step outputs; returns `(dx, dh, dc)` for its inputs.
    pub fn backward(
        &self,
        cache: &LstmCache,
        dh_next: &[f64],
        dc_next: &[f64],
        grads: &mut LstmCellParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let (i, rest) = cache.gates.split_at(hs);
        let (f, rest) = rest.split_at(hs);
        let (g, o) = rest.split_at(hs);
        let mut dz = vec![0.0; 4 * hs];
        let mut dc = vec![0.0; hs];
        for k in 0..hs {
            let tc = cache.tanh_c[k];
            let dct = dc_next[k] + dh_next[k] * o[k] * (1.0 - tc * tc);
            dz[k] = dct * g[k] * i[k] * (1.0 - i[k]);
            dz[hs + k] = dct * cache.c[k] * f[k] * (1.0 - f[k]);
            dz[2 * hs + k] = dct * i[k] * (1.0 - g[k] * g[k]);
            dz[3 * hs + k] = dh_next[k] * tc * o[k] * (1.0 - o[k]);
            dc[k] = dct * f[k];
        }
        let mut dx = vec![0.0; self.input_size()];
        let mut dh = vec![0.0; hs];
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads.bias.data_mut()[r] += d;
            axpy(d, &cache.x, grads.w_ih.row_mut(r));
            axpy(d, &cache.h, grads.w_hh.row_mut(r));
            axpy(d, self.w_ih.row(r), &mut dx);
            axpy(d, self.w_hh.row(r), &mut dh);
        }
        (dx, dh, dc)
    }
}

impl Parameters for LstmCellParams {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_ih".into(), &self.w_ih),
            ("w_hh".into(), &self.w_hh),
            ("bias".into(), &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

/// One LSTM step: returns `(h', c')` and the cache for backpropagation.
pub fn lstm_cell_step(
    params: &LstmCellParams,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
    let hs = params.hidden_size();
    if x.len() != params.input_size() {
        return Err(Error::DimensionMismatch {
            expected: params.input_size(),
            found: x.len(),
        });
    }
    if h.len() != hs || c.len() != hs {
        return Err(Error::DimensionMismatch {
            expected: hs,
            found: if h.len() != hs { h.len() } else { c.len() },
        });
    }
    let mut gates = vec![0.0; 4 * hs];
    for (r, z) in gates.iter_mut().enumerate() {
        let pre = params.bias.data()[r] + dot(params.w_ih.row(r), x) + dot(params.w_hh.row(r), h);
        *z = if (2 * hs..3 * hs).contains(&r) {
            pre.tanh()
        } else {
            sigmoid(pre)
        };
    }
    let mut c_new = vec![0.0; hs];
    let mut h_new = vec![0.0; hs];
    let mut tanh_c = vec![0.0; hs];
    for k in 0..hs {
        c_new[k] = gates[hs + k] * c[k] + gates[k] * gates[2 * hs + k];
        tanh_c[k] = c_new[k].tanh();
        h_new[k] = gates[3 * hs + k] * tanh_c[k];
    }
    let cache = LstmCache {
        x: x.to_vec(),
        h: h.to_vec(),
        c: c.to_vec(),
        gates,
        tanh_c,
    };
    Ok((h_new, c_new, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::seeded_rng;

    #[test]
    fn zero_parameters_closed_form() {
        let p = LstmCellParams::zeros(3, 4);
        let c = [0.2, -1.0, 3.0, 0.0];
        let (h, c2, _) = lstm_cell_step(&p, &[1.0, 2.0, 3.0], &[0.5; 4], &c).unwrap();
        for k in 0..4 {
            assert!((c2[k] - 0.5 * c[k]).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * c[k]).tanh()).abs() < 1e-15);
        }
        let (h, c2, _) = lstm_cell_step(&p, &[0.0; 3], &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(h.iter().chain(&c2).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let p = LstmCellParams::zeros(3, 4);
        assert!(lstm_cell_step(&p, &[0.0; 2], &[0.0; 4], &[0.0; 4]).is_err());
        assert!(lstm_cell_step(&p, &[0.0; 3], &[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn forget_bias_initialised_to_one() {
        let p = LstmCellParams::init(3, 4, &mut seeded_rng(0));
        assert!(p.bias.data()[4..8].iter().all(|&b| b == 1.0));
    }

    /// Loss = sum_t <probe_t, h_t> over a 3-step sequence, differentiated
    /// with respect to all parameters, the inputs and the initial state.
    fn bptt_loss(p: &LstmCellParams, xs: &[Vec<f64>], h0: &[f64], c0: &[f64], probes: &[Vec<f64>]) -> (f64, LstmCellParams, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut h = h0.to_vec();
        let mut c = c0.to_vec();
        let mut caches = Vec::new();
        let mut loss = 0.0;
        for (x, probe) in xs.iter().zip(probes) {
            let (hn, cn, cache) = lstm_cell_step(p, x, &h, &c).unwrap();
            loss += crate::nn::dot(&hn, probe);
            caches.push(cache);
            h = hn;
            c = cn;
        }
        let hs = p.hidden_size();
        let mut grads = p.zeroed();
        let mut dh = vec![0.0; hs];
        let mut dc = vec![0.0; hs];
        let mut dxs = vec![Vec::new(); xs.len()];
        for t in (0..xs.len()).rev() {
            let dh_total: Vec<f64> = dh.iter().zip(&probes[t]).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) = p.backward(&caches[t], &dh_total, &dc, &mut grads);
            dxs[t] = dx;
            dh = dh_prev;
            dc = dc_prev;
        }
        (loss, grads, dxs, dh, dc)
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let (input, hidden, steps) = (3, 4, 3);
        for seed in 0..5 {
            let mut rng = seeded_rng(100 + seed);
            let p = LstmCellParams::init(input, hidden, &mut rng);
            let mut flat_inputs = Tensor::zeros(&[steps * input + 2 * hidden]);
            crate::nn::uniform_fill(&mut flat_inputs, 1.0, &mut rng);
            let mut probe = Tensor::zeros(&[steps * hidden]);
            crate::nn::uniform_fill(&mut probe, 1.0, &mut rng);
            let probes: Vec<Vec<f64>> = probe.data().chunks(hidden).map(<[f64]>::to_vec).collect();
            let n = p.num_params();
            let mut theta = p.flatten();
            theta.extend_from_slice(flat_inputs.data());
            let err = grad_check(
                |t| {
                    let mut q = p.clone();
                    q.load_flat(&t[..n]);
                    let rest = &t[n..];
                    let xs: Vec<Vec<f64>> = rest[..steps * input].chunks(input).map(<[f64]>::to_vec).collect();
                    let h0 = &rest[steps * input..steps * input + hidden];
                    let c0 = &rest[steps * input + hidden..];
                    let (loss, g, dxs, dh, dc) = bptt_loss(&q, &xs, h0, c0, &probes);
                    let mut grad = g.flatten();
                    for dx in dxs {
                        grad.extend(dx);
                    }
                    grad.extend(dh);
                    grad.extend(dc);
                    (loss, grad)
                },
                &theta,
                1e-5,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }
}
