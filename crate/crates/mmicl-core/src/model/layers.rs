//! Linear, layer-norm and feed-forward building blocks with explicit
//! backward passes. Buffers are [T, features] row-major.

use super::Param;
use crate::math::{gelu, gelu_grad, matmul_nn, matmul_nt, matmul_tn};
use crate::rng::Rng;

/// Weight stored [in, out] so forward is a plain row-major matmul.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub w: Param,
    pub b: Option<Param>,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearParams {
    pub fn randn(d_in: usize, d_out: usize, bias: bool, std: f64, rng: &mut Rng) -> Self {
        Self {
            w: Param::randn(&[d_in, d_out], std, rng),
            b: bias.then(|| Param::zeros(&[d_out])),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut y = match &self.b {
            Some(b) => b.w.repeat(t),
            None => vec![0.0; t * self.d_out],
        };
        matmul_nn(&mut y, x, &self.w.w, t, self.d_in, self.d_out);
        y
    }

    /// Accumulates weight gradients and adds the input gradient into dx.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], dx: &mut [f64], t: usize) {
        matmul_tn(&mut self.w.g, x, dy, t, self.d_in, self.d_out);
        if let Some(b) = &mut self.b {
            for row in 0..t {
                for (g, &d) in b.g.iter_mut().zip(&dy[row * self.d_out..(row + 1) * self.d_out]) {
                    *g += d;
                }
            }
        }
        matmul_nt(dx, dy, &self.w.w, t, self.d_out, self.d_in);
    }

    /// Single-row forward for incremental decoding.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: Param::ones(&[d]),
            beta: Param::zeros(&[d]),
        }
    }
}

/// Cached normalization state: x_hat and the inverse stddev per row.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm_forward(
    ln: &LayerNormParams,
    x: &[f64],
    t: usize,
    d: usize,
    eps: f64,
) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; t * d];
    let mut x_hat = vec![0.0; t * d];
    let mut inv_std = vec![0.0; t];
    for row in 0..t {
        let xr = &x[row * d..(row + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[row] = istd;
        for i in 0..d {
            let h = (xr[i] - mean) * istd;
            x_hat[row * d + i] = h;
            y[row * d + i] = h * ln.gamma.w[i] + ln.beta.w[i];
        }
    }
    (y, LnCache { x_hat, inv_std })
}

/// Adds the input gradient into dx and accumulates gamma/beta gradients.
pub fn layer_norm_backward(
    ln: &mut LayerNormParams,
    cache: &LnCache,
    dy: &[f64],
    dx: &mut [f64],
    t: usize,
    d: usize,
) {
    for row in 0..t {
        let dyr = &dy[row * d..(row + 1) * d];
        let hr = &cache.x_hat[row * d..(row + 1) * d];
        let istd = cache.inv_std[row];
        let mut sum_dh = 0.0;
        let mut sum_dh_h = 0.0;
        for i in 0..d {
            ln.gamma.g[i] += dyr[i] * hr[i];
            ln.beta.g[i] += dyr[i];
            let dh = dyr[i] * ln.gamma.w[i];
            sum_dh += dh;
            sum_dh_h += dh * hr[i];
        }
        let inv_d = 1.0 / d as f64;
        for i in 0..d {
            let dh = dyr[i] * ln.gamma.w[i];
            dx[row * d + i] += istd * (dh - inv_d * sum_dh - hr[i] * inv_d * sum_dh_h);
        }
    }
}

/// Two-layer GELU feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

impl FfnParams {
    pub fn randn(d: usize, hidden: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            fc1: LinearParams::randn(d, hidden, true, std, rng),
            fc2: LinearParams::randn(hidden, d, true, std, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    pub h1: Vec<f64>,
    pub act: Vec<f64>,
}

pub fn ffn_forward(ffn: &FfnParams, x: &[f64], t: usize) -> (Vec<f64>, FfnCache) {
    let h1 = ffn.fc1.forward(x, t);
    let act: Vec<f64> = h1.iter().map(|&v| gelu(v)).collect();
    let y = ffn.fc2.forward(&act, t);
    (y, FfnCache { h1, act })
}

pub fn ffn_backward(
    ffn: &mut FfnParams,
    cache: &FfnCache,
    x: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    t: usize,
) {
    let hidden = ffn.fc1.d_out;
    let mut dact = vec![0.0; t * hidden];
    ffn.fc2.backward(&cache.act, dy, &mut dact, t);
    let dh1: Vec<f64> = dact
        .iter()
        .zip(&cache.h1)
        .map(|(&da, &h)| da * gelu_grad(h))
        .collect();
    ffn.fc1.backward(x, &dh1, dx, t);
}
