//! Training: losses, optimizer, multi-task sampling and the step loop.

pub mod adamw;
pub mod losses;
pub mod sampler;

pub use adamw::AdamW;
pub use losses::{aux_loss, masked_cross_entropy_with_grads, output_loss, total_loss};
pub use sampler::{sample_task, task_probabilities};

use crate::error::{Error, Result};
use crate::model::{LogitGrads, Model};
use crate::rng::Rng;
use crate::tasks::{Task, TaskContext};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    /// Weight of the load-balancing auxiliary loss.
    pub lambda_aux: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub in_context_k: usize,
    /// Weight on the input-token prediction loss; 0 disables it.
    pub l_in_weight: f64,
    pub seed: u64,
    /// Per-task scaling factors for sampling; uniform 1 by default.
    pub task_weights: Vec<f64>,
    /// Steps per epoch; derived from the pool sizes when absent.
    pub steps_per_epoch: Option<usize>,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.05,
            grad_clip_norm: 0.5,
            lambda_aux: 0.02,
            epochs: 1,
            batch_size: 8,
            in_context_k: 3,
            l_in_weight: 0.0,
            seed: 0,
            task_weights: Vec::new(),
            steps_per_epoch: None,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

/// One step of the training log.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub task: String,
    pub l_out: f64,
    pub l_aux: f64,
    pub grad_norm: f64,
    pub tokens_per_s: f64,
    /// Batch-aggregated per-expert load fractions, one row per MoE layer.
    pub expert_load: Vec<Vec<f64>>,
}

pub struct TrainOutcome {
    pub steps: Vec<StepLog>,
    pub checkpoint: Option<PathBuf>,
}

/// Forward/backward for one sequence; returns (l_out, l_in, per-layer aux
/// stats) with gradients accumulated at weight 1/batch.
fn train_step_sequence(
    model: &mut Model,
    ctx: &TaskContext,
    seq: &crate::prompts::PromptSequence,
    cfg: &TrainConfig,
    inv_batch: f64,
) -> Result<(f64, f64, f64, Vec<Vec<f64>>, usize)> {
    let segments = if model.config.router_segment_input {
        Some(ctx.segment_kinds(&seq.ids)?)
    } else {
        None
    };
    let cache = model.forward(&seq.ids, segments.as_deref())?;
    let v = model.config.vocab_size;

    // positions whose next token is supervised
    let mut out_positions = Vec::new();
    let mut out_targets = Vec::new();
    for t in 0..seq.len() - 1 {
        if seq.loss_mask[t + 1] {
            out_positions.push(t);
            out_targets.push(seq.ids[t + 1]);
        }
    }
    let logits = model.logits_at(&cache, &out_positions);
    let (l_out, mut dlogits) =
        masked_cross_entropy_with_grads(&logits, &out_targets, v, inv_batch)?;
    let mut positions = out_positions;

    // optional input-token loss over image-input positions
    let mut l_in = 0.0;
    if cfg.l_in_weight > 0.0 {
        let mut in_positions = Vec::new();
        let mut in_targets = Vec::new();
        for t in 0..seq.len() - 1 {
            let next = seq.ids[t + 1];
            if !seq.loss_mask[t + 1] && ctx.codec.vocab.is_image(next) {
                in_positions.push(t);
                in_targets.push(next);
            }
        }
        if !in_targets.is_empty() {
            let in_logits = model.logits_at(&cache, &in_positions);
            let (li, din) = masked_cross_entropy_with_grads(
                &in_logits,
                &in_targets,
                v,
                cfg.l_in_weight * inv_batch,
            )?;
            l_in = li;
            positions.extend(in_positions);
            dlogits.extend(din);
        }
    }

    let stats = cache.moe_stats();
    let l_aux = aux_loss(&stats, model.config.num_experts);
    let loads: Vec<Vec<f64>> = stats.iter().map(|s| s.load_fraction.clone()).collect();
    let tokens = seq.len();

    model.backward(
        &cache,
        &LogitGrads {
            positions,
            dlogits,
        },
        cfg.lambda_aux * inv_batch,
    );
    Ok((l_out, l_in, l_aux, loads, tokens))
}

/// The training loop: sample a task, assemble an unmixed batch, accumulate
/// gradients sequence by sequence, clip, step. Checkpoints are written at
/// epoch boundaries; a non-finite loss aborts with the last good checkpoint
/// left in place.
pub fn train(
    model: &mut Model,
    tasks: &[Box<dyn Task>],
    ctx: &TaskContext,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Train("batch size must be positive".into()));
    }
    let sizes: Vec<usize> = tasks.iter().map(|t| t.pool_size(ctx)).collect();
    let weights = if cfg.task_weights.is_empty() {
        vec![1.0; tasks.len()]
    } else {
        if cfg.task_weights.len() != tasks.len() {
            return Err(Error::Train(format!(
                "{} task weights for {} tasks",
                cfg.task_weights.len(),
                tasks.len()
            )));
        }
        cfg.task_weights.clone()
    };
    let steps_per_epoch = cfg
        .steps_per_epoch
        .unwrap_or_else(|| (sizes.iter().sum::<usize>() / cfg.batch_size).max(1));

    let base = Rng::new(cfg.seed);
    let mut task_rng = base.derive(0x7461736b); // "task"
    let mut data_rng = base.derive(0x64617461); // "data"

    let checkpoint_path = out_dir.map(|d| d.join("checkpoint.bin"));
    if let (Some(dir), Some(path)) = (out_dir, &checkpoint_path) {
        std::fs::create_dir_all(dir)?;
        model.save_checkpoint(path)?;
    }

    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay, cfg.grad_clip_norm);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut steps: Vec<StepLog> = Vec::with_capacity(total_steps);
    let mut metrics_lines = String::from("step\ttask\tl_out\tl_aux\tgrad_norm\ttokens_per_s\n");
    let mut load_lines = String::from("step\tlayer\tload_fractions\n");

    for epoch in 0..cfg.epochs {
        for step_in_epoch in 0..steps_per_epoch {
            let step = epoch * steps_per_epoch + step_in_epoch;
            opt.lr = match cfg.lr_schedule {
                LrSchedule::Constant => cfg.learning_rate,
                LrSchedule::Cosine => {
                    let progress = step as f64 / total_steps.max(1) as f64;
                    cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            };
            let task_id = sample_task(&mut task_rng, &sizes, &weights)?;
            let task = &tasks[task_id];

            model.zero_grad();
            let started = Instant::now();
            let inv_batch = 1.0 / cfg.batch_size as f64;
            let mut l_out_mean = 0.0;
            let mut l_in_mean = 0.0;
            let mut l_aux_mean = 0.0;
            let mut tokens_total = 0usize;
            let mut load_sums: Vec<Vec<f64>> = Vec::new();
            for _ in 0..cfg.batch_size {
                let seq = task.train_sequence(ctx, &mut data_rng)?;
                let (l_out, l_in, l_aux, loads, tokens) =
                    train_step_sequence(model, ctx, &seq, cfg, inv_batch)?;
                l_out_mean += l_out * inv_batch;
                l_in_mean += l_in * inv_batch;
                l_aux_mean += l_aux * inv_batch;
                tokens_total += tokens;
                if load_sums.is_empty() {
                    load_sums = loads;
                } else {
                    for (acc, l) in load_sums.iter_mut().zip(&loads) {
                        for (a, &x) in acc.iter_mut().zip(l) {
                            *a += x;
                        }
                    }
                }
            }
            for layer in load_sums.iter_mut() {
                for x in layer.iter_mut() {
                    *x *= inv_batch;
                }
            }

            let loss = total_loss(l_out_mean, l_aux_mean, l_in_mean, cfg.lambda_aux, cfg.l_in_weight);
            if !loss.is_finite() {
                if let Some(dir) = out_dir {
                    std::fs::write(dir.join("metrics.tsv"), &metrics_lines)?;
                    std::fs::write(dir.join("expert_load.tsv"), &load_lines)?;
                }
                return Err(Error::Train(format!(
                    "non-finite loss {loss} at step {step}; last checkpoint retained"
                )));
            }
            let grad_norm = opt.step(model)?;
            let elapsed = started.elapsed().as_secs_f64().max(1e-9);
            let tokens_per_s = tokens_total as f64 / elapsed;

            metrics_lines.push_str(&format!(
                "{step}\t{}\t{:.9}\t{:.9}\t{:.9}\t{:.1}\n",
                task.name(),
                l_out_mean,
                l_aux_mean,
                grad_norm,
                tokens_per_s
            ));
            for (layer, loads) in load_sums.iter().enumerate() {
                let cells: Vec<String> = loads.iter().map(|l| format!("{l:.6}")).collect();
                load_lines.push_str(&format!("{step}\t{layer}\t{}\n", cells.join(",")));
            }
            steps.push(StepLog {
                step,
                task: task.name().to_string(),
                l_out: l_out_mean,
                l_aux: l_aux_mean,
                grad_norm,
                tokens_per_s,
                expert_load: load_sums,
            });
        }
        if let Some(path) = &checkpoint_path {
            model.save_checkpoint(path)?;
            let epoch_path = out_dir.unwrap().join(format!("checkpoint_epoch{epoch}.bin"));
            model.save_checkpoint(&epoch_path)?;
        }
    }

    if let Some(dir) = out_dir {
        std::fs::write(dir.join("metrics.tsv"), &metrics_lines)?;
        std::fs::write(dir.join("expert_load.tsv"), &load_lines)?;
    }
    Ok(TrainOutcome {
        steps,
        checkpoint: checkpoint_path,
    })
}
