//! Decoder-only autoregressive transformer with sparse mixture-of-experts
//! layers in place of the feed-forward block at configured depths.
//!
//! Forward and backward passes are written out by hand in f64; gradients are
//! exact for the computed function (the top-k expert selection is treated as
//! constant, gradients flow through the selected softmax weights and the
//! shared softmax denominator).

mod attention;
mod forward;
mod layers;
mod moe;
mod sample;

pub use forward::{DecodeState, ForwardCache, LogitGrads};
pub use layers::{ffn_forward, FfnParams, LayerNormParams, LinearParams};
pub use moe::{moe_backward, moe_forward, GateDecision, MoeCache, MoeParams, MoeStats};
pub use sample::{sample_next, SamplingStrategy};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    /// Layers whose feed-forward block is a sparse MoE.
    pub moe_layer_indices: Vec<usize>,
    pub num_experts: usize,
    pub top_k: usize,
    pub ffn_multiplier: usize,
    pub layer_norm_epsilon: f64,
    /// Renormalize the selected gate weights to sum to one. Off by default:
    /// the gating formula is taken literally.
    pub renormalize_gates: bool,
    /// Append a segment-kind one-hot to the router input.
    pub router_segment_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden_size: 128,
            num_heads: 4,
            max_positions: 1024,
            vocab_size: 1024,
            moe_layer_indices: vec![1, 3],
            num_experts: 4,
            top_k: 2,
            ffn_multiplier: 4,
            layer_norm_epsilon: 1e-12,
            renormalize_gates: false,
            router_segment_input: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Model(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::Model(format!(
                "top_k {} outside [1, {}]",
                self.top_k, self.num_experts
            )));
        }
        if let Some(&bad) = self
            .moe_layer_indices
            .iter()
            .find(|&&i| i >= self.num_layers)
        {
            return Err(Error::Model(format!(
                "MoE layer index {bad} outside [0, {})",
                self.num_layers
            )));
        }
        if self.layer_norm_epsilon <= 0.0 {
            return Err(Error::Model("layer norm epsilon must be positive".into()));
        }
        if self.num_layers == 0 || self.vocab_size == 0 || self.max_positions == 0 {
            return Err(Error::Model("degenerate model shape".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn ffn_hidden(&self) -> usize {
        self.hidden_size * self.ffn_multiplier
    }

    pub fn is_moe_layer(&self, layer: usize) -> bool {
        self.moe_layer_indices.contains(&layer)
    }

    /// Router input width: hidden state, optionally + segment one-hot.
    pub fn router_in(&self) -> usize {
        self.hidden_size
            + if self.router_segment_input {
                crate::vocab::SEGMENT_KIND_COUNT
            } else {
                0
            }
    }
}

/// One weight tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            w: vec![0.0; n],
            g: vec![0.0; n],
            shape: shape.to_vec(),
        }
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(shape);
        for w in p.w.iter_mut() {
            *w = rng.gauss() * std;
        }
        p
    }

    pub fn ones(shape: &[usize]) -> Self {
        let mut p = Self::zeros(shape);
        p.w.iter_mut().for_each(|w| *w = 1.0);
        p
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MlpParams {
    Dense(FfnParams),
    Moe(MoeParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub wq: LinearParams,
    pub wk: LinearParams,
    pub wv: LinearParams,
    pub wo: LinearParams,
    pub ln2: LayerNormParams,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub tok_emb: Param,
    pub pos_emb: Param,
    pub blocks: Vec<BlockParams>,
    pub ln_f: LayerNormParams,
    pub lm_head: Param,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

const INIT_STD: f64 = 0.02;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed).derive(0x6d6f64656c); // "model"
        let d = config.hidden_size;
        let h = config.ffn_hidden();
        let mut blocks = Vec::with_capacity(config.num_layers);
        for layer in 0..config.num_layers {
            // residual-entering projections (wo, fc2) start at zero so the
            // stack begins as the identity
            let mlp = if config.is_moe_layer(layer) {
                MlpParams::Moe(MoeParams {
                    router: LinearParams::randn(config.router_in(), config.num_experts, false, INIT_STD, &mut rng),
                    experts: (0..config.num_experts)
                        .map(|_| {
                            let mut e = FfnParams::randn(d, h, INIT_STD, &mut rng);
                            e.fc2.w.w.iter_mut().for_each(|w| *w = 0.0);
                            e
                        })
                        .collect(),
                })
            } else {
                let mut ffn = FfnParams::randn(d, h, INIT_STD, &mut rng);
                ffn.fc2.w.w.iter_mut().for_each(|w| *w = 0.0);
                MlpParams::Dense(ffn)
            };
            let mut wo = LinearParams::randn(d, d, true, INIT_STD, &mut rng);
            wo.w.w.iter_mut().for_each(|w| *w = 0.0);
            blocks.push(BlockParams {
                ln1: LayerNormParams::identity(d),
                wq: LinearParams::randn(d, d, true, INIT_STD, &mut rng),
                wk: LinearParams::randn(d, d, true, INIT_STD, &mut rng),
                wv: LinearParams::randn(d, d, true, INIT_STD, &mut rng),
                wo,
                ln2: LayerNormParams::identity(d),
                mlp,
            });
        }
        let params = Parameters {
            tok_emb: Param::randn(&[config.vocab_size, d], INIT_STD, &mut rng),
            pos_emb: Param::randn(&[config.max_positions, d], INIT_STD, &mut rng),
            blocks,
            ln_f: LayerNormParams::identity(d),
            lm_head: Param::randn(&[d, config.vocab_size], INIT_STD, &mut rng),
        };
        Ok(Self { config, params })
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(|_, p| p.g.iter_mut().for_each(|g| *g = 0.0));
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, p| n += p.len());
        n
    }

    /// Walks every parameter in a fixed, deterministic order.
    pub fn visit_params<F: FnMut(&str, &Param)>(&self, mut f: F) {
        self.params.visit(&mut |name, p| f(name, p));
    }

    pub fn visit_params_mut<F: FnMut(&str, &mut Param)>(&mut self, mut f: F) {
        self.params.visit_mut(&mut |name, p| f(name, p));
    }

    /// Checkpoint: text manifest (version, config, parameter table) followed
    /// by the flat little-endian f64 payload. Reloads bit-exactly.
    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let mut header = String::from("mmicl-checkpoint v1\n");
        let c = &self.config;
        header.push_str(&format!("num_layers {}\n", c.num_layers));
        header.push_str(&format!("hidden_size {}\n", c.hidden_size));
        header.push_str(&format!("num_heads {}\n", c.num_heads));
        header.push_str(&format!("max_positions {}\n", c.max_positions));
        header.push_str(&format!("vocab_size {}\n", c.vocab_size));
        let moe: Vec<String> = c.moe_layer_indices.iter().map(|i| i.to_string()).collect();
        header.push_str(&format!("moe_layer_indices {}\n", moe.join(",")));
        header.push_str(&format!("num_experts {}\n", c.num_experts));
        header.push_str(&format!("top_k {}\n", c.top_k));
        header.push_str(&format!("ffn_multiplier {}\n", c.ffn_multiplier));
        header.push_str(&format!("layer_norm_epsilon {:?}\n", c.layer_norm_epsilon));
        header.push_str(&format!("renormalize_gates {}\n", c.renormalize_gates));
        header.push_str(&format!("router_segment_input {}\n", c.router_segment_input));

        let mut table = String::new();
        let mut total = 0usize;
        self.visit_params(|name, p| {
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            table.push_str(&format!("param {name} {}\n", dims.join(" ")));
            total += p.len();
        });
        header.push_str(&table);
        header.push_str(&format!("payload {total}\n"));

        let mut bytes = header.into_bytes();
        self.visit_params(|_, p| {
            for v in &p.w {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        });
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        // split the text header from the binary payload
        let mut offset = 0usize;
        let mut lines: Vec<String> = Vec::new();
        let mut payload_count: Option<usize> = None;
        while offset < bytes.len() {
            let end = bytes[offset..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|i| offset + i)
                .ok_or_else(|| Error::Model("checkpoint header unterminated".into()))?;
            let line = std::str::from_utf8(&bytes[offset..end])
                .map_err(|e| Error::Model(format!("bad header: {e}")))?
                .to_string();
            offset = end + 1;
            if let Some(rest) = line.strip_prefix("payload ") {
                payload_count = Some(
                    rest.parse()
                        .map_err(|e| Error::Model(format!("bad payload count: {e}")))?,
                );
                break;
            }
            lines.push(line);
        }
        let payload_count =
            payload_count.ok_or_else(|| Error::Model("checkpoint missing payload line".into()))?;
        if lines.first().map(|s| s.as_str()) != Some("mmicl-checkpoint v1") {
            return Err(Error::Model(format!(
                "unsupported checkpoint version: {:?}",
                lines.first()
            )));
        }

        let mut kv = std::collections::BTreeMap::new();
        for line in &lines[1..] {
            if line.starts_with("param ") {
                continue;
            }
            if let Some((k, v)) = line.split_once(' ') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<String> {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Model(format!("checkpoint missing field '{k}'")))
        };
        let parse_usize =
            |s: String| s.parse::<usize>().map_err(|e| Error::Model(format!("{e}")));
        let config = ModelConfig {
            num_layers: parse_usize(get("num_layers")?)?,
            hidden_size: parse_usize(get("hidden_size")?)?,
            num_heads: parse_usize(get("num_heads")?)?,
            max_positions: parse_usize(get("max_positions")?)?,
            vocab_size: parse_usize(get("vocab_size")?)?,
            moe_layer_indices: {
                let s = get("moe_layer_indices")?;
                if s.is_empty() {
                    Vec::new()
                } else {
                    s.split(',')
                        .map(|x| x.parse::<usize>().map_err(|e| Error::Model(format!("{e}"))))
                        .collect::<Result<Vec<_>>>()?
                }
            },
            num_experts: parse_usize(get("num_experts")?)?,
            top_k: parse_usize(get("top_k")?)?,
            ffn_multiplier: parse_usize(get("ffn_multiplier")?)?,
            layer_norm_epsilon: get("layer_norm_epsilon")?
                .parse()
                .map_err(|e| Error::Model(format!("{e}")))?,
            renormalize_gates: get("renormalize_gates")? == "true",
            router_segment_input: get("router_segment_input")? == "true",
        };
        let mut model = Model::new(config, 0)?;
        let payload = &bytes[offset..];
        if payload.len() != payload_count * 8 {
            return Err(Error::Model(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                payload_count * 8
            )));
        }
        let mut cursor = 0usize;
        let mut fail: Option<String> = None;
        model.visit_params_mut(|name, p| {
            if fail.is_some() {
                return;
            }
            for w in p.w.iter_mut() {
                if cursor + 8 > payload.len() {
                    fail = Some(format!("payload exhausted at parameter '{name}'"));
                    return;
                }
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&payload[cursor..cursor + 8]);
                *w = f64::from_le_bytes(buf);
                cursor += 8;
            }
        });
        if let Some(msg) = fail {
            return Err(Error::Model(msg));
        }
        if cursor != payload.len() {
            return Err(Error::Model("payload larger than parameter table".into()));
        }
        Ok(model)
    }
}

impl Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("tok_emb", &self.tok_emb);
        f("pos_emb", &self.pos_emb);
        for (i, b) in self.blocks.iter().enumerate() {
            let pre = format!("block{i}");
            f(&format!("{pre}.ln1.gamma"), &b.ln1.gamma);
            f(&format!("{pre}.ln1.beta"), &b.ln1.beta);
            for (tag, lin) in [("wq", &b.wq), ("wk", &b.wk), ("wv", &b.wv), ("wo", &b.wo)] {
                f(&format!("{pre}.attn.{tag}.w"), &lin.w);
                if let Some(bias) = &lin.b {
                    f(&format!("{pre}.attn.{tag}.b"), bias);
                }
            }
            f(&format!("{pre}.ln2.gamma"), &b.ln2.gamma);
            f(&format!("{pre}.ln2.beta"), &b.ln2.beta);
            match &b.mlp {
                MlpParams::Dense(ffn) => visit_ffn(&format!("{pre}.ffn"), ffn, f),
                MlpParams::Moe(moe) => {
                    f(&format!("{pre}.moe.router.w"), &moe.router.w);
                    for (e, expert) in moe.experts.iter().enumerate() {
                        visit_ffn(&format!("{pre}.moe.expert{e}"), expert, f);
                    }
                }
            }
        }
        f("ln_f.gamma", &self.ln_f.gamma);
        f("ln_f.beta", &self.ln_f.beta);
        f("lm_head", &self.lm_head);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("tok_emb", &mut self.tok_emb);
        f("pos_emb", &mut self.pos_emb);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let pre = format!("block{i}");
            f(&format!("{pre}.ln1.gamma"), &mut b.ln1.gamma);
            f(&format!("{pre}.ln1.beta"), &mut b.ln1.beta);
            for (tag, lin) in [
                ("wq", &mut b.wq),
                ("wk", &mut b.wk),
                ("wv", &mut b.wv),
                ("wo", &mut b.wo),
            ] {
                f(&format!("{pre}.attn.{tag}.w"), &mut lin.w);
                if let Some(bias) = &mut lin.b {
                    f(&format!("{pre}.attn.{tag}.b"), bias);
                }
            }
            f(&format!("{pre}.ln2.gamma"), &mut b.ln2.gamma);
            f(&format!("{pre}.ln2.beta"), &mut b.ln2.beta);
            match &mut b.mlp {
                MlpParams::Dense(ffn) => visit_ffn_mut(&format!("{pre}.ffn"), ffn, f),
                MlpParams::Moe(moe) => {
                    f(&format!("{pre}.moe.router.w"), &mut moe.router.w);
                    for (e, expert) in moe.experts.iter_mut().enumerate() {
                        visit_ffn_mut(&format!("{pre}.moe.expert{e}"), expert, f);
                    }
                }
            }
        }
        f("ln_f.gamma", &mut self.ln_f.gamma);
        f("ln_f.beta", &mut self.ln_f.beta);
        f("lm_head", &mut self.lm_head);
    }
}

fn visit_ffn(pre: &str, ffn: &FfnParams, f: &mut dyn FnMut(&str, &Param)) {
    f(&format!("{pre}.fc1.w"), &ffn.fc1.w);
    if let Some(b) = &ffn.fc1.b {
        f(&format!("{pre}.fc1.b"), b);
    }
    f(&format!("{pre}.fc2.w"), &ffn.fc2.w);
    if let Some(b) = &ffn.fc2.b {
        f(&format!("{pre}.fc2.b"), b);
    }
}

fn visit_ffn_mut(pre: &str, ffn: &mut FfnParams, f: &mut dyn FnMut(&str, &mut Param)) {
    f(&format!("{pre}.fc1.w"), &mut ffn.fc1.w);
    if let Some(b) = &mut ffn.fc1.b {
        f(&format!("{pre}.fc1.b"), b);
    }
    f(&format!("{pre}.fc2.w"), &mut ffn.fc2.w);
    if let Some(b) = &mut ffn.fc2.b {
        f(&format!("{pre}.fc2.b"), b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_size: 16,
            num_heads: 2,
            max_positions: 32,
            vocab_size: 40,
            moe_layer_indices: vec![1],
            num_experts: 3,
            top_k: 2,
            ffn_multiplier: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.hidden_size = 17;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.top_k = 5;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.moe_layer_indices = vec![7];
        assert!(c.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::new(tiny_config(), 9).unwrap();
        let b = Model::new(tiny_config(), 9).unwrap();
        assert_eq!(a.params, b.params);
        let c = Model::new(tiny_config(), 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let model = Model::new(tiny_config(), 3).unwrap();
        let path = std::env::temp_dir().join("mmicl_ckpt_test.bin");
        model.save_checkpoint(&path).unwrap();
        let loaded = Model::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.params, model.params);
        // byte-identical re-save
        let path2 = std::env::temp_dir().join("mmicl_ckpt_test2.bin");
        loaded.save_checkpoint(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        let _ = std::fs::remove_file(&path);
        let _ = std::fs::remove_file(&path2);
    }

    #[test]
    fn visitor_orders_match() {
        let mut model = Model::new(tiny_config(), 3).unwrap();
        let mut names_a = Vec::new();
        model.visit_params(|n, _| names_a.push(n.to_string()));
        let mut names_b = Vec::new();
        model.visit_params_mut(|n, _| names_b.push(n.to_string()));
        assert_eq!(names_a, names_b);
        assert!(names_a.contains(&"block1.moe.router.w".to_string()));
        assert!(names_a.contains(&"block0.ffn.fc1.w".to_string()));
    }
}
