//! Flat key=value run configuration. Every model, training and data field is
//! addressable by name; CLI flags override file values; every run writes the
//! effective configuration back out as a snapshot.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthdata::DataConfig;
use crate::training::{LrSchedule, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Caption token budget for prompt assembly.
    pub caption_budget: usize,
    pub patch_size: usize,
    pub codebook_size: usize,
    pub codebook_iters: usize,
    pub bpe_merges: usize,
    /// In-context sizes evaluated by `eval`.
    pub eval_k: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            caption_budget: 32,
            patch_size: 4,
            codebook_size: 64,
            codebook_iters: 25,
            bpe_merges: 48,
            eval_k: vec![1, 2, 3],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("bad value '{value}' for '{key}': {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

impl RunConfig {
    /// Applies one key=value assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            // model
            "num_layers" => self.model.num_layers = parse_num(key, value)?,
            "hidden_size" => self.model.hidden_size = parse_num(key, value)?,
            "num_heads" => self.model.num_heads = parse_num(key, value)?,
            "max_positions" => self.model.max_positions = parse_num(key, value)?,
            "vocab_size" => self.model.vocab_size = parse_num(key, value)?,
            "moe_layer_indices" => self.model.moe_layer_indices = parse_list(key, value)?,
            "num_experts" => self.model.num_experts = parse_num(key, value)?,
            "top_k" => self.model.top_k = parse_num(key, value)?,
            "ffn_multiplier" => self.model.ffn_multiplier = parse_num(key, value)?,
            "layer_norm_epsilon" => self.model.layer_norm_epsilon = parse_num(key, value)?,
            "renormalize_gates" => self.model.renormalize_gates = parse_bool(key, value)?,
            "router_segment_input" => self.model.router_segment_input = parse_bool(key, value)?,
            // training
            "learning_rate" => self.train.learning_rate = parse_num(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_num(key, value)?,
            "grad_clip_norm" => self.train.grad_clip_norm = parse_num(key, value)?,
            "lambda_aux" => self.train.lambda_aux = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "in_context_k" => self.train.in_context_k = parse_num(key, value)?,
            "l_in_weight" => self.train.l_in_weight = parse_num(key, value)?,
            "seed" => self.train.seed = parse_num(key, value)?,
            "task_weights" => self.train.task_weights = parse_list(key, value)?,
            "steps_per_epoch" => {
                self.train.steps_per_epoch = if value.is_empty() || value == "auto" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            "lr_schedule" => {
                self.train.lr_schedule = match value {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine,
                    other => {
                        return Err(Error::Config(format!(
                            "lr_schedule must be constant or cosine, got '{other}'"
                        )))
                    }
                }
            }
            // data
            "train_scenes" => self.data.train_scenes = parse_num(key, value)?,
            "val_scenes" => self.data.val_scenes = parse_num(key, value)?,
            "width" => self.data.width = parse_num(key, value)?,
            "height" => self.data.height = parse_num(key, value)?,
            "data_seed" => self.data.seed = parse_num(key, value)?,
            // artifacts
            "caption_budget" => self.caption_budget = parse_num(key, value)?,
            "patch_size" => self.patch_size = parse_num(key, value)?,
            "codebook_size" => self.codebook_size = parse_num(key, value)?,
            "codebook_iters" => self.codebook_iters = parse_num(key, value)?,
            "bpe_merges" => self.bpe_merges = parse_num(key, value)?,
            "eval_k" => self.eval_k = parse_list(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a config file body: one key=value per line, '#' comments.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Effective-config snapshot: every field, stable order.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        let list = |v: &[usize]| -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let flist = |v: &[f64]| -> String {
            v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
        };
        format!(
            "num_layers={}\nhidden_size={}\nnum_heads={}\nmax_positions={}\nvocab_size={}\n\
             moe_layer_indices={}\nnum_experts={}\ntop_k={}\nffn_multiplier={}\n\
             layer_norm_epsilon={:?}\nrenormalize_gates={}\nrouter_segment_input={}\n\
             learning_rate={:?}\nweight_decay={:?}\ngrad_clip_norm={:?}\nlambda_aux={:?}\n\
             epochs={}\nbatch_size={}\nin_context_k={}\nl_in_weight={:?}\nseed={}\n\
             task_weights={}\nsteps_per_epoch={}\nlr_schedule={}\n\
             train_scenes={}\nval_scenes={}\nwidth={}\nheight={}\ndata_seed={}\n\
             caption_budget={}\npatch_size={}\ncodebook_size={}\ncodebook_iters={}\n\
             bpe_merges={}\neval_k={}\n",
            m.num_layers,
            m.hidden_size,
            m.num_heads,
            m.max_positions,
            m.vocab_size,
            list(&m.moe_layer_indices),
            m.num_experts,
            m.top_k,
            m.ffn_multiplier,
            m.layer_norm_epsilon,
            m.renormalize_gates,
            m.router_segment_input,
            t.learning_rate,
            t.weight_decay,
            t.grad_clip_norm,
            t.lambda_aux,
            t.epochs,
            t.batch_size,
            t.in_context_k,
            t.l_in_weight,
            t.seed,
            flist(&t.task_weights),
            t.steps_per_epoch.map(|s| s.to_string()).unwrap_or_else(|| "auto".into()),
            match t.lr_schedule {
                LrSchedule::Constant => "constant",
                LrSchedule::Cosine => "cosine",
            },
            d.train_scenes,
            d.val_scenes,
            d.width,
            d.height,
            d.seed,
            self.caption_budget,
            self.patch_size,
            self.codebook_size,
            self.codebook_iters,
            self.bpe_merges,
            list(&self.eval_k),
        )
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Config(format!(
            "bad boolean '{other}' for '{key}'"
        ))),
    }
}
