//! AdamW with global-norm gradient clipping and decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::Model;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One-parameter update with bias correction; weight decay is applied
/// directly to the weight (decoupled from the moment estimates).
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    w: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    step: usize,
    lr: f64,
    weight_decay: f64,
) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let m_hat = *m / (1.0 - BETA1.powi(step as i32));
    let v_hat = *v / (1.0 - BETA2.powi(step as i32));
    *w -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * *w);
}

pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    step: usize,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, grad_clip_norm: f64) -> Self {
        Self {
            lr,
            weight_decay,
            grad_clip_norm,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Clips the global gradient norm, then updates every parameter.
    /// Returns the pre-clip gradient norm. Layer norms and embeddings decay
    /// like everything else; the model is small enough not to special-case.
    pub fn step(&mut self, model: &mut Model) -> Result<f64> {
        if self.moments.is_empty() {
            model.visit_params(|_, p| {
                self.moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            });
        }
        // global norm and finiteness check
        let mut sq = 0.0;
        let mut bad: Option<String> = None;
        model.visit_params(|name, p| {
            if bad.is_some() {
                return;
            }
            for &g in &p.g {
                if !g.is_finite() {
                    bad = Some(name.to_string());
                    return;
                }
                sq += g * g;
            }
        });
        if let Some(param) = bad {
            return Err(Error::NonFiniteGradient { param });
        }
        let norm = sq.sqrt();
        let scale = if norm > self.grad_clip_norm && norm > 0.0 {
            self.grad_clip_norm / norm
        } else {
            1.0
        };

        self.step += 1;
        let step = self.step;
        let (lr, wd) = (self.lr, self.weight_decay);
        let mut idx = 0;
        let moments = &mut self.moments;
        model.visit_params_mut(|_, p| {
            let (m, v) = &mut moments[idx];
            idx += 1;
            for i in 0..p.w.len() {
                adamw_update(
                    &mut p.w[i],
                    p.g[i] * scale,
                    &mut m[i],
                    &mut v[i],
                    step,
                    lr,
                    wd,
                );
            }
        });
        Ok(norm)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}
