use rand::Rng;

use super::{uniform_fill, Parameters, Tensor};
use crate::error::{Error, Result};

/// 1-D cross-correlation over the width axis with zero "same" padding.
/// Weight shape `[out, in, kernel]`, input and output `[channels, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_channels, in_channels, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(in_channels, out_channels, kernel);
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        uniform_fill(&mut c.weight, bound, rng);
        uniform_fill(&mut c.bias, bound, rng);
        c
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn check(&self, input: &Tensor) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != 2 || shape[0] != self.in_channels() {
            return Err(Error::DimensionMismatch {
                expected: self.in_channels(),
                found: shape.first().copied().unwrap_or(0),
            });
        }
        if shape[1] < self.kernel() {
            return Err(Error::InvalidParameter(format!(
                "input width {} is smaller than the kernel ({})",
                shape[1],
                self.kernel()
            )));
        }
        Ok(shape[1])
    }
}

impl Parameters for Conv1d {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn conv1d_forward(params: &Conv1d, input: &Tensor) -> Result<Tensor> {
    let width = params.check(input)?;
    let (cout, cin, k) = (params.out_channels(), params.in_channels(), params.kernel());
    let pad = (k / 2) as isize;
    let w = params.weight.data();
    let x = input.data();
    let mut out = Tensor::zeros(&[cout, width]);
    let y = out.data_mut();
    for o in 0..cout {
        let row = &mut y[o * width..(o + 1) * width];
        row.fill(params.bias.data()[o]);
        for i in 0..cin {
            let xi = &x[i * width..(i + 1) * width];
            for (kk, &wv) in w[(o * cin + i) * k..(o * cin + i + 1) * k].iter().enumerate() {
                let shift = kk as isize - pad;
                let lo = (-shift).max(0) as usize;
                let hi = (width as isize - shift).min(width as isize) as usize;
                for pos in lo..hi {
                    row[pos] += wv * xi[(pos as isize + shift) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Returns `dL/dinput`; parameter gradients are added into `grads`.
pub fn conv1d_backward(params: &Conv1d, input: &Tensor, grad_out: &Tensor, grads: &mut Conv1d) -> Result<Tensor> {
    let width = params.check(input)?;
    let (cout, cin, k) = (params.out_channels(), params.in_channels(), params.kernel());
    if grad_out.shape() != [cout, width] {
        return Err(Error::DimensionMismatch {
            expected: cout * width,
            found: grad_out.len(),
        });
    }
    let pad = (k / 2) as isize;
    let w = params.weight.data();
    let x = input.data();
    let g = grad_out.data();
    let mut grad_in = Tensor::zeros(&[cin, width]);
    let gi = grad_in.data_mut();
    for o in 0..cout {
        let go = &g[o * width..(o + 1) * width];
        grads.bias.data_mut()[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &x[i * width..(i + 1) * width];
            for kk in 0..k {
                let widx = (o * cin + i) * k + kk;
                let shift = kk as isize - pad;
                let lo = (-shift).max(0) as usize;
                let hi = (width as isize - shift).min(width as isize) as usize;
                let mut dw = 0.0;
                for pos in lo..hi {
                    let src = (pos as isize + shift) as usize;
                    dw += go[pos] * xi[src];
                    gi[i * width + src] += go[pos] * w[widx];
                }
                grads.weight.data_mut()[widx] += dw;
            }
        }
    }
    Ok(grad_in)
}
