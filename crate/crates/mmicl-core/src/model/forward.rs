//! Full-sequence forward/backward through the decoder stack, plus an
//! incremental KV-cached path for generation.
//!
//! Pre-norm blocks: x + attn(ln1(x)), then x + mlp(ln2(x)); final layer norm
//! and vocabulary projection. Causality comes from the attention mask alone,
//! so logits at position t depend only on ids[0..=t].

use super::attention::{
    attention_backward, attention_forward, attention_forward_one, AttnCache, AttnWeights,
    AttnWeightsMut,
};
use super::layers::{layer_norm_backward, layer_norm_forward, ffn_backward, ffn_forward, FfnCache, LnCache};
use super::moe::{moe_backward, moe_forward, moe_forward_one, MoeCache, MoeStats};
use super::{MlpParams, Model};
use crate::error::{Error, Result};
use crate::math::{matmul_nn, matmul_nt, matmul_tn};
use crate::vocab::TokenId;

pub enum MlpCache {
    Dense(FfnCache),
    Moe(MoeCache),
}

pub struct BlockCache {
    ln1: LnCache,
    xn1: Vec<f64>,
    attn: AttnCache,
    ln2: LnCache,
    xn2: Vec<f64>,
    mlp: MlpCache,
}

pub struct ForwardCache {
    pub ids: Vec<TokenId>,
    pub segments: Option<Vec<usize>>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    /// Final hidden states after the last layer norm, [T, D].
    pub hidden: Vec<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Batch routing statistics of each MoE layer, in layer order.
    pub fn moe_stats(&self) -> Vec<&MoeStats> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.mlp {
                MlpCache::Moe(m) => Some(&m.stats),
                MlpCache::Dense(_) => None,
            })
            .collect()
    }

    /// Per-token gate decisions of each MoE layer.
    pub fn gate_decisions(&self) -> Vec<Vec<super::moe::GateDecision>> {
        self.blocks
            .iter()
            .filter_map(|b| match &b.mlp {
                MlpCache::Moe(m) => Some(m.decisions()),
                MlpCache::Dense(_) => None,
            })
            .collect()
    }
}

/// Upstream logit gradients at a subset of positions.
pub struct LogitGrads {
    pub positions: Vec<usize>,
    /// [positions.len(), vocab] gradient rows.
    pub dlogits: Vec<f64>,
}

impl Model {
    /// Token embedding plus learned absolute position embedding.
    pub fn embed(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        let d = self.config.hidden_size;
        if ids.len() > self.config.max_positions {
            return Err(Error::Model(format!(
                "sequence length {} exceeds max positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        let mut x = vec![0.0; ids.len() * d];
        for (pos, &id) in ids.iter().enumerate() {
            if id >= self.config.vocab_size {
                return Err(Error::Model(format!(
                    "token id {id} outside vocabulary of size {}",
                    self.config.vocab_size
                )));
            }
            let te = &self.params.tok_emb.w[id * d..(id + 1) * d];
            let pe = &self.params.pos_emb.w[pos * d..(pos + 1) * d];
            for i in 0..d {
                x[pos * d + i] = te[i] + pe[i];
            }
        }
        Ok(x)
    }

    /// Full forward pass retaining every activation needed for backward.
    /// `segments` carries per-token segment kinds; required only when the
    /// router consumes them.
    pub fn forward(&self, ids: &[TokenId], segments: Option<&[usize]>) -> Result<ForwardCache> {
        if self.config.router_segment_input && segments.is_none() {
            return Err(Error::Model(
                "router_segment_input requires per-token segment kinds".into(),
            ));
        }
        if let Some(seg) = segments {
            if seg.len() != ids.len() {
                return Err(Error::Model("segments length mismatch".into()));
            }
        }
        let d = self.config.hidden_size;
        let t = ids.len();
        let eps = self.config.layer_norm_epsilon;
        let mut x = self.embed(ids)?;
        let mut blocks = Vec::with_capacity(self.config.num_layers);
        for block in &self.params.blocks {
            let (xn1, ln1) = layer_norm_forward(&block.ln1, &x, t, d, eps);
            let (attn_out, attn) = attention_forward(
                &AttnWeights {
                    wq: &block.wq,
                    wk: &block.wk,
                    wv: &block.wv,
                    wo: &block.wo,
                },
                &xn1,
                t,
                d,
                self.config.num_heads,
            );
            for (xv, &a) in x.iter_mut().zip(&attn_out) {
                *xv += a;
            }
            let (xn2, ln2) = layer_norm_forward(&block.ln2, &x, t, d, eps);
            let (mlp_out, mlp) = match &block.mlp {
                MlpParams::Dense(ffn) => {
                    let (y, cache) = ffn_forward(ffn, &xn2, t);
                    (y, MlpCache::Dense(cache))
                }
                MlpParams::Moe(moe) => {
                    let (y, cache) = moe_forward(
                        moe,
                        &xn2,
                        segments,
                        t,
                        d,
                        self.config.top_k,
                        self.config.renormalize_gates,
                    );
                    (y, MlpCache::Moe(cache))
                }
            };
            for (xv, &m) in x.iter_mut().zip(&mlp_out) {
                *xv += m;
            }
            blocks.push(BlockCache {
                ln1,
                xn1,
                attn,
                ln2,
                xn2,
                mlp,
            });
        }
        let (hidden, lnf) = layer_norm_forward(&self.params.ln_f, &x, t, d, eps);
        Ok(ForwardCache {
            ids: ids.to_vec(),
            segments: segments.map(|s| s.to_vec()),
            blocks,
            lnf,
            hidden,
        })
    }

    /// Vocabulary logits at the given positions, [positions.len(), vocab].
    pub fn logits_at(&self, cache: &ForwardCache, positions: &[usize]) -> Vec<f64> {
        let d = self.config.hidden_size;
        let v = self.config.vocab_size;
        let q = positions.len();
        let mut rows = vec![0.0; q * d];
        for (r, &pos) in positions.iter().enumerate() {
            rows[r * d..(r + 1) * d].copy_from_slice(&cache.hidden[pos * d..(pos + 1) * d]);
        }
        let mut logits = vec![0.0; q * v];
        matmul_nn(&mut logits, &rows, &self.params.lm_head.w, q, d, v);
        logits
    }

    /// Logits at every position, [T, vocab].
    pub fn logits_all(&self, cache: &ForwardCache) -> Vec<f64> {
        let positions: Vec<usize> = (0..cache.len()).collect();
        self.logits_at(cache, &positions)
    }

    /// Accumulates gradients for the upstream logit gradients plus
    /// `aux_weight` times the load-balancing auxiliary loss (mean over MoE
    /// layers of N * sum_e f_e * P_e).
    pub fn backward(&mut self, cache: &ForwardCache, grads: &LogitGrads, aux_weight: f64) {
        let d = self.config.hidden_size;
        let v = self.config.vocab_size;
        let t = cache.len();
        let q = grads.positions.len();
        debug_assert_eq!(grads.dlogits.len(), q * v);

        // vocabulary projection
        let mut dxf = vec![0.0; t * d];
        if q > 0 {
            let mut rows = vec![0.0; q * d];
            for (r, &pos) in grads.positions.iter().enumerate() {
                rows[r * d..(r + 1) * d].copy_from_slice(&cache.hidden[pos * d..(pos + 1) * d]);
            }
            matmul_tn(&mut self.params.lm_head.g, &rows, &grads.dlogits, q, d, v);
            let mut drows = vec![0.0; q * d];
            matmul_nt(&mut drows, &grads.dlogits, &self.params.lm_head.w, q, v, d);
            for (r, &pos) in grads.positions.iter().enumerate() {
                for i in 0..d {
                    dxf[pos * d + i] += drows[r * d + i];
                }
            }
        }

        // final layer norm
        let mut dx = vec![0.0; t * d];
        layer_norm_backward(&mut self.params.ln_f, &cache.lnf, &dxf, &mut dx, t, d);

        let moe_layers = cache.moe_stats().len().max(1);
        let aux_coeff = aux_weight / moe_layers as f64;
        let segments = cache.segments.as_deref();

        for (block, bc) in self.params.blocks.iter_mut().zip(&cache.blocks).rev() {
            // mlp residual: dx flows both straight through and into the mlp
            let mut dxn2 = vec![0.0; t * d];
            match (&mut block.mlp, &bc.mlp) {
                (MlpParams::Dense(ffn), MlpCache::Dense(fc)) => {
                    ffn_backward(ffn, fc, &bc.xn2, &dx, &mut dxn2, t);
                }
                (MlpParams::Moe(moe), MlpCache::Moe(mc)) => {
                    moe_backward(
                        moe,
                        mc,
                        &bc.xn2,
                        &dx,
                        &mut dxn2,
                        t,
                        d,
                        self.config.renormalize_gates,
                        aux_coeff,
                    );
                    let _ = segments;
                }
                _ => unreachable!("cache and parameters disagree on layer kind"),
            }
            layer_norm_backward(&mut block.ln2, &bc.ln2, &dxn2, &mut dx, t, d);

            // attention residual
            let mut dxn1 = vec![0.0; t * d];
            let mut wm = AttnWeightsMut {
                wq: &mut block.wq,
                wk: &mut block.wk,
                wv: &mut block.wv,
                wo: &mut block.wo,
            };
            attention_backward(
                &mut wm,
                &bc.attn,
                &bc.xn1,
                &dx,
                &mut dxn1,
                t,
                d,
                self.config.num_heads,
            );
            layer_norm_backward(&mut block.ln1, &bc.ln1, &dxn1, &mut dx, t, d);
        }

        // embeddings
        for (pos, &id) in cache.ids.iter().enumerate() {
            let row = &dx[pos * d..(pos + 1) * d];
            for (g, &r) in self.params.tok_emb.g[id * d..(id + 1) * d]
                .iter_mut()
                .zip(row)
            {
                *g += r;
            }
            for (g, &r) in self.params.pos_emb.g[pos * d..(pos + 1) * d]
                .iter_mut()
                .zip(row)
            {
                *g += r;
            }
        }
    }
}

/// Incremental decoding state: per-layer key/value caches.
pub struct DecodeState {
    pos: usize,
    k_caches: Vec<Vec<f64>>,
    v_caches: Vec<Vec<f64>>,
}

impl Model {
    pub fn begin_decode(&self) -> DecodeState {
        DecodeState {
            pos: 0,
            k_caches: vec![Vec::new(); self.config.num_layers],
            v_caches: vec![Vec::new(); self.config.num_layers],
        }
    }

    /// Feeds a whole prefix through the batch forward path and seeds the
    /// decode state with its keys and values. Returns the logits row at the
    /// last prefix position. Much faster than token-by-token feeding.
    pub fn prefill(
        &self,
        state: &mut DecodeState,
        ids: &[TokenId],
        segments: Option<&[usize]>,
    ) -> Result<Vec<f64>> {
        if state.pos != 0 {
            return Err(Error::Model("prefill needs a fresh decode state".into()));
        }
        if ids.is_empty() {
            return Err(Error::Model("prefill needs a nonempty prefix".into()));
        }
        let cache = self.forward(ids, segments)?;
        for (layer, bc) in cache.blocks.iter().enumerate() {
            state.k_caches[layer] = bc.attn.k.clone();
            state.v_caches[layer] = bc.attn.v.clone();
        }
        state.pos = ids.len();
        Ok(self.logits_at(&cache, &[ids.len() - 1]))
    }

    /// Feeds one token and returns the next-token logits row.
    pub fn decode_step(
        &self,
        state: &mut DecodeState,
        id: TokenId,
        segment: Option<usize>,
    ) -> Result<Vec<f64>> {
        let d = self.config.hidden_size;
        let v = self.config.vocab_size;
        let eps = self.config.layer_norm_epsilon;
        if state.pos >= self.config.max_positions {
            return Err(Error::Model(format!(
                "decode position {} exceeds max positions {}",
                state.pos, self.config.max_positions
            )));
        }
        if id >= v {
            return Err(Error::Model(format!("token id {id} outside vocabulary")));
        }
        if self.config.router_segment_input && segment.is_none() {
            return Err(Error::Model(
                "router_segment_input requires the token's segment kind".into(),
            ));
        }
        let te = &self.params.tok_emb.w[id * d..(id + 1) * d];
        let pe = &self.params.pos_emb.w[state.pos * d..(state.pos + 1) * d];
        let mut x: Vec<f64> = te.iter().zip(pe).map(|(a, b)| a + b).collect();

        for (layer, block) in self.params.blocks.iter().enumerate() {
            let (xn1, _) = layer_norm_forward(&block.ln1, &x, 1, d, eps);
            let attn_out = attention_forward_one(
                &AttnWeights {
                    wq: &block.wq,
                    wk: &block.wk,
                    wv: &block.wv,
                    wo: &block.wo,
                },
                &xn1,
                &mut state.k_caches[layer],
                &mut state.v_caches[layer],
                d,
                self.config.num_heads,
            );
            for (xv, &a) in x.iter_mut().zip(&attn_out) {
                *xv += a;
            }
            let (xn2, _) = layer_norm_forward(&block.ln2, &x, 1, d, eps);
            let mlp_out = match &block.mlp {
                MlpParams::Dense(ffn) => ffn_forward(ffn, &xn2, 1).0,
                MlpParams::Moe(moe) => moe_forward_one(
                    moe,
                    &xn2,
                    segment,
                    d,
                    self.config.top_k,
                    self.config.renormalize_gates,
                ),
            };
            for (xv, &m) in x.iter_mut().zip(&mlp_out) {
                *xv += m;
            }
        }
        let (hidden, _) = layer_norm_forward(&self.params.ln_f, &x, 1, d, eps);
        let mut logits = vec![0.0; v];
        matmul_nn(&mut logits, &hidden, &self.params.lm_head.w, 1, d, v);
        state.pos += 1;
        Ok(logits)
    }

    /// Autoregressive generation: feeds the prefix, then samples until the
    /// stop token or the budget. Returns only the new tokens, stop excluded.
    /// The budget is checked before any compute.
    pub fn generate(
        &self,
        prefix: &[TokenId],
        max_new: usize,
        stop: TokenId,
        strategy: &super::sample::SamplingStrategy,
        rng: &mut crate::rng::Rng,
        segmenter: Option<&dyn Fn(TokenId) -> usize>,
    ) -> Result<Vec<TokenId>> {
        if prefix.len() + max_new > self.config.max_positions {
            return Err(Error::Model(format!(
                "prefix {} + max_new {max_new} exceeds max positions {}",
                prefix.len(),
                self.config.max_positions
            )));
        }
        if prefix.is_empty() {
            return Err(Error::Model("generation needs a nonempty prefix".into()));
        }
        if max_new == 0 {
            return Ok(Vec::new());
        }
        let mut state = self.begin_decode();
        let segments: Option<Vec<usize>> =
            segmenter.map(|f| prefix.iter().map(|&id| f(id)).collect());
        let mut logits = self.prefill(&mut state, prefix, segments.as_deref())?;
        let mut out = Vec::new();
        loop {
            let next = super::sample::sample_next(&logits, strategy, rng)?;
            if next == stop {
                break;
            }
            out.push(next);
            if out.len() == max_new {
                break;
            }
            logits = self.decode_step(&mut state, next, segmenter.map(|f| f(next)))?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Model, ModelConfig};
    use super::*;
    use crate::model::sample::SamplingStrategy;
    use crate::rng::Rng;

    fn tiny() -> Model {
        Model::new(
            ModelConfig {
                num_layers: 2,
                hidden_size: 16,
                num_heads: 2,
                max_positions: 24,
                vocab_size: 40,
                moe_layer_indices: vec![1],
                num_experts: 3,
                top_k: 2,
                ffn_multiplier: 2,
                ..ModelConfig::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn embed_adds_position_information() {
        let m = tiny();
        let x = m.embed(&[7, 7]).unwrap();
        let d = m.config.hidden_size;
        assert_ne!(x[..d], x[d..2 * d]);
    }

    #[test]
    fn embed_rejects_overlong_and_oov() {
        let m = tiny();
        assert!(m.embed(&vec![0; 25]).is_err());
        assert!(m.embed(&[40]).is_err());
    }

    #[test]
    fn single_token_logits_shape() {
        let m = tiny();
        let cache = m.forward(&[3], None).unwrap();
        let logits = m.logits_all(&cache);
        assert_eq!(logits.len(), 40);
    }

    #[test]
    fn causality_prefix_logits_bit_identical() {
        let m = tiny();
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let t = 8;
            let ids: Vec<usize> = (0..t).map(|_| rng.below(40)).collect();
            let cache_a = m.forward(&ids, None).unwrap();
            let cut = 1 + rng.below(t - 1);
            let mut perturbed = ids.clone();
            for v in perturbed[cut..].iter_mut() {
                *v = rng.below(40);
            }
            let cache_b = m.forward(&perturbed, None).unwrap();
            let la = m.logits_at(&cache_a, &(0..cut).collect::<Vec<_>>());
            let lb = m.logits_at(&cache_b, &(0..cut).collect::<Vec<_>>());
            assert_eq!(la, lb, "prefix logits changed at cut {cut}");
        }
    }

    #[test]
    fn prefill_matches_token_by_token_feeding() {
        let m = tiny();
        let ids = [3usize, 8, 1, 22, 17];
        let mut fast = m.begin_decode();
        let logits_fast = m.prefill(&mut fast, &ids, None).unwrap();
        let mut slow = m.begin_decode();
        let mut logits_slow = Vec::new();
        for &id in &ids {
            logits_slow = m.decode_step(&mut slow, id, None).unwrap();
        }
        for (a, b) in logits_fast.iter().zip(&logits_slow) {
            assert!((a - b).abs() < 1e-10);
        }
        // continuing from both states produces the same next logits
        let na = m.decode_step(&mut fast, 5, None).unwrap();
        let nb = m.decode_step(&mut slow, 5, None).unwrap();
        for (a, b) in na.iter().zip(&nb) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn incremental_decode_matches_full_forward() {
        let m = tiny();
        let ids = [1usize, 5, 9, 2, 30, 14];
        let cache = m.forward(&ids, None).unwrap();
        let full = m.logits_all(&cache);
        let mut state = m.begin_decode();
        for (pos, &id) in ids.iter().enumerate() {
            let row = m.decode_step(&mut state, id, None).unwrap();
            for j in 0..40 {
                let a = row[j];
                let b = full[pos * 40 + j];
                assert!((a - b).abs() < 1e-10, "pos {pos} vocab {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn degenerate_moe_equals_plain_ffn_logits() {
        // two configs identical except layer 1 is MoE with a single expert
        let cfg_dense = ModelConfig {
            num_layers: 2,
            hidden_size: 16,
            num_heads: 2,
            max_positions: 16,
            vocab_size: 30,
            moe_layer_indices: vec![],
            num_experts: 1,
            top_k: 1,
            ffn_multiplier: 2,
            ..ModelConfig::default()
        };
        let cfg_moe = ModelConfig {
            moe_layer_indices: vec![1],
            ..cfg_dense.clone()
        };
        let dense = Model::new(cfg_dense, 3).unwrap();
        let mut moe = Model::new(cfg_moe, 3).unwrap();
        // copy the dense model's ffn weights into the single expert
        let MlpParams::Dense(src) = &dense.params.blocks[1].mlp else {
            panic!()
        };
        let MlpParams::Moe(dst) = &mut moe.params.blocks[1].mlp else {
            panic!()
        };
        dst.experts[0] = src.clone();
        // align every other parameter
        moe.params.tok_emb = dense.params.tok_emb.clone();
        moe.params.pos_emb = dense.params.pos_emb.clone();
        moe.params.lm_head = dense.params.lm_head.clone();
        moe.params.ln_f = dense.params.ln_f.clone();
        for i in 0..2 {
            moe.params.blocks[i].ln1 = dense.params.blocks[i].ln1.clone();
            moe.params.blocks[i].ln2 = dense.params.blocks[i].ln2.clone();
            moe.params.blocks[i].wq = dense.params.blocks[i].wq.clone();
            moe.params.blocks[i].wk = dense.params.blocks[i].wk.clone();
            moe.params.blocks[i].wv = dense.params.blocks[i].wv.clone();
            moe.params.blocks[i].wo = dense.params.blocks[i].wo.clone();
        }
        if let (MlpParams::Dense(a), MlpParams::Dense(b)) = (
            &mut moe.params.blocks[0].mlp,
            &dense.params.blocks[0].mlp,
        ) {
            *a = b.clone();
        }
        let ids = [4usize, 9, 21, 0, 17];
        let ca = dense.forward(&ids, None).unwrap();
        let cb = moe.forward(&ids, None).unwrap();
        assert_eq!(dense.logits_all(&ca), moe.logits_all(&cb));
    }

    #[test]
    fn generate_respects_budget_and_stop() {
        let m = tiny();
        let mut rng = Rng::new(0);
        // max_new = 0
        let out = m
            .generate(&[1, 2], 0, 39, &SamplingStrategy::Greedy, &mut rng, None)
            .unwrap();
        assert!(out.is_empty());
        // budget violation detected before compute
        assert!(m
            .generate(&vec![1; 20], 10, 39, &SamplingStrategy::Greedy, &mut rng, None)
            .is_err());
        // greedy generation is deterministic
        let a = m
            .generate(&[1, 2, 3], 8, 39, &SamplingStrategy::Greedy, &mut rng, None)
            .unwrap();
        let b = m
            .generate(&[1, 2, 3], 8, 39, &SamplingStrategy::Greedy, &mut rng, None)
            .unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 8);
    }

    #[test]
    fn generate_stop_first_returns_empty() {
        let mut m = tiny();
        // pin the final hidden state to the beta vector and wire one lm_head
        // entry so token 13 dominates every context
        let v = m.config.vocab_size;
        m.params.ln_f.gamma.w.iter_mut().for_each(|w| *w = 0.0);
        m.params.ln_f.beta.w.iter_mut().for_each(|w| *w = 0.0);
        m.params.ln_f.beta.w[0] = 1.0;
        m.params.lm_head.w.iter_mut().for_each(|w| *w = 0.0);
        m.params.lm_head.w[13] = 5.0; // row 0 (hidden dim 0), column 13
        let _ = v;
        let mut rng = Rng::new(0);
        let out = m
            .generate(&[1, 2], 5, 13, &SamplingStrategy::Greedy, &mut rng, None)
            .unwrap();
        assert!(out.is_empty());
    }
}
