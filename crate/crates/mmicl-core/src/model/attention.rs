//! Causal multi-head self-attention with a full backward pass.
//!
//! Heads occupy contiguous column ranges of the [T, D] buffers. Probability
//! rows above the diagonal stay zero, so the stored [H, T, T] tensor is
//! effectively lower-triangular.

use super::layers::LinearParams;
use crate::math::{dot, softmax_backward, softmax_inplace};

pub struct AttnCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// [H, T, T] attention probabilities.
    pub probs: Vec<f64>,
    /// Concatenated head outputs before the output projection, [T, D].
    pub ctx: Vec<f64>,
}

pub struct AttnWeights<'a> {
    pub wq: &'a LinearParams,
    pub wk: &'a LinearParams,
    pub wv: &'a LinearParams,
    pub wo: &'a LinearParams,
}

pub struct AttnWeightsMut<'a> {
    pub wq: &'a mut LinearParams,
    pub wk: &'a mut LinearParams,
    pub wv: &'a mut LinearParams,
    pub wo: &'a mut LinearParams,
}

/// Forward over a whole sequence; `xn` is the layer-normed input [T, D].
pub fn attention_forward(
    w: &AttnWeights,
    xn: &[f64],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, AttnCache) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = w.wq.forward(xn, t);
    let k = w.wk.forward(xn, t);
    let v = w.wv.forward(xn, t);

    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let col = h * hd;
        for i in 0..t {
            let qi = &q[i * d + col..i * d + col + hd];
            let row = &mut probs[h * t * t + i * t..h * t * t + i * t + i + 1];
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = dot(qi, &k[j * d + col..j * d + col + hd]) * scale;
            }
            softmax_inplace(row);
            let out = &mut ctx[i * d + col..i * d + col + hd];
            for j in 0..=i {
                let p = probs[h * t * t + i * t + j];
                let vj = &v[j * d + col..j * d + col + hd];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += p * vv;
                }
            }
        }
    }
    let y = w.wo.forward(&ctx, t);
    (y, AttnCache { q, k, v, probs, ctx })
}

/// Backward: accumulates weight gradients, adds the input gradient into dxn.
pub fn attention_backward(
    w: &mut AttnWeightsMut,
    cache: &AttnCache,
    xn: &[f64],
    dy: &[f64],
    dxn: &mut [f64],
    t: usize,
    d: usize,
    heads: usize,
) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    let mut dctx = vec![0.0; t * d];
    w.wo.backward(&cache.ctx, dy, &mut dctx, t);

    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut drow = vec![0.0; t];
    let mut dscores = vec![0.0; t];
    for h in 0..heads {
        let col = h * hd;
        for i in 0..t {
            let dout = &dctx[i * d + col..i * d + col + hd];
            let prow = &cache.probs[h * t * t + i * t..h * t * t + i * t + i + 1];
            // gradient into probabilities and values
            for j in 0..=i {
                drow[j] = dot(dout, &cache.v[j * d + col..j * d + col + hd]);
                let p = prow[j];
                let dvj = &mut dv[j * d + col..j * d + col + hd];
                for (dvv, &g) in dvj.iter_mut().zip(dout) {
                    *dvv += p * g;
                }
            }
            softmax_backward(&mut dscores[..=i], prow, &drow[..=i]);
            // scores = q_i . k_j * scale
            let qi = &cache.q[i * d + col..i * d + col + hd];
            for j in 0..=i {
                let ds = dscores[j] * scale;
                let kj = &cache.k[j * d + col..j * d + col + hd];
                let dqi = &mut dq[i * d + col..i * d + col + hd];
                for (a, &b) in dqi.iter_mut().zip(kj) {
                    *a += ds * b;
                }
                let dkj = &mut dk[j * d + col..j * d + col + hd];
                for (a, &b) in dkj.iter_mut().zip(qi) {
                    *a += ds * b;
                }
            }
        }
    }
    w.wq.backward(xn, &dq, dxn, t);
    w.wk.backward(xn, &dk, dxn, t);
    w.wv.backward(xn, &dv, dxn, t);
}

/// One-position forward against accumulated keys/values (incremental
/// decoding). Appends this position's K/V to the caches and returns the
/// attention output row.
pub fn attention_forward_one(
    w: &AttnWeights,
    xn_row: &[f64],
    k_cache: &mut Vec<f64>,
    v_cache: &mut Vec<f64>,
    d: usize,
    heads: usize,
) -> Vec<f64> {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = w.wq.forward_one(xn_row);
    k_cache.extend(w.wk.forward_one(xn_row));
    v_cache.extend(w.wv.forward_one(xn_row));
    let t = k_cache.len() / d;

    let mut ctx = vec![0.0; d];
    let mut scores = vec![0.0; t];
    for h in 0..heads {
        let col = h * hd;
        let qh = &q[col..col + hd];
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(qh, &k_cache[j * d + col..j * d + col + hd]) * scale;
        }
        softmax_inplace(&mut scores);
        let out = &mut ctx[col..col + hd];
        for (j, &p) in scores.iter().enumerate() {
            let vj = &v_cache[j * d + col..j * d + col + hd];
            for (o, &vv) in out.iter_mut().zip(vj) {
                *o += p * vv;
            }
        }
    }
    w.wo.forward_one(&ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn weights(d: usize, rng: &mut Rng) -> (LinearParams, LinearParams, LinearParams, LinearParams) {
        (
            LinearParams::randn(d, d, true, 0.3, rng),
            LinearParams::randn(d, d, true, 0.3, rng),
            LinearParams::randn(d, d, true, 0.3, rng),
            LinearParams::randn(d, d, true, 0.3, rng),
        )
    }

    #[test]
    fn causality_future_inputs_do_not_change_past_outputs() {
        let mut rng = Rng::new(3);
        let (t, d, heads) = (6, 8, 2);
        let (wq, wk, wv, wo) = weights(d, &mut rng);
        let w = AttnWeights {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            wo: &wo,
        };
        let mut x: Vec<f64> = (0..t * d).map(|_| rng.gauss()).collect();
        let (y1, _) = attention_forward(&w, &x, t, d, heads);
        // perturb the last two positions
        for v in x[(t - 2) * d..].iter_mut() {
            *v += 1.5;
        }
        let (y2, _) = attention_forward(&w, &x, t, d, heads);
        assert_eq!(y1[..(t - 2) * d], y2[..(t - 2) * d]);
    }

    #[test]
    fn incremental_matches_full_forward() {
        let mut rng = Rng::new(5);
        let (t, d, heads) = (5, 8, 2);
        let (wq, wk, wv, wo) = weights(d, &mut rng);
        let w = AttnWeights {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            wo: &wo,
        };
        let x: Vec<f64> = (0..t * d).map(|_| rng.gauss()).collect();
        let (y_full, _) = attention_forward(&w, &x, t, d, heads);
        let mut kc = Vec::new();
        let mut vc = Vec::new();
        for i in 0..t {
            let row = attention_forward_one(&w, &x[i * d..(i + 1) * d], &mut kc, &mut vc, d, heads);
            for j in 0..d {
                assert!(
                    (row[j] - y_full[i * d + j]).abs() < 1e-12,
                    "pos {i} dim {j}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        let (t, d, heads) = (4, 8, 2);
        let (mut wq, mut wk, mut wv, mut wo) = weights(d, &mut rng);
        let x: Vec<f64> = (0..t * d).map(|_| rng.gauss()).collect();
        let up: Vec<f64> = (0..t * d).map(|_| rng.gauss()).collect();

        let loss = |wq: &LinearParams, wk: &LinearParams, wv: &LinearParams, wo: &LinearParams, x: &[f64]| -> f64 {
            let w = AttnWeights { wq, wk, wv, wo };
            let (y, _) = attention_forward(&w, x, t, d, heads);
            y.iter().zip(&up).map(|(a, b)| a * b).sum()
        };

        let (_, cache) = attention_forward(
            &AttnWeights {
                wq: &wq,
                wk: &wk,
                wv: &wv,
                wo: &wo,
            },
            &x,
            t,
            d,
            heads,
        );
        let mut dx = vec![0.0; t * d];
        {
            let mut wm = AttnWeightsMut {
                wq: &mut wq,
                wk: &mut wk,
                wv: &mut wv,
                wo: &mut wo,
            };
            attention_backward(&mut wm, &cache, &x, &up, &mut dx, t, d, heads);
        }

        let eps = 1e-6;
        for idx in [0usize, 13, 37] {
            let orig = wq.w.w[idx];
            wq.w.w[idx] = orig + eps;
            let lp = loss(&wq, &wk, &wv, &wo, &x);
            wq.w.w[idx] = orig - eps;
            let lm = loss(&wq, &wk, &wv, &wo, &x);
            wq.w.w[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((wq.w.g[idx] - fd).abs() < 1e-6, "wq[{idx}]");
        }
        for idx in [2usize, 19] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let lp = loss(&wq, &wk, &wv, &wo, &xp);
            xp[idx] -= 2.0 * eps;
            let lm = loss(&wq, &wk, &wv, &wo, &xp);
            let fd = (lp - lm) / (2.0 * eps);
            assert!((dx[idx] - fd).abs() < 1e-6, "x[{idx}]: {} vs {fd}", dx[idx]);
        }
    }
}
