//! Training losses: masked cross-entropy over supervised positions, the
//! GShard-style load-balancing auxiliary term, and their weighted sum.
//!
//! Cross-entropy reduces by the mean over supervised positions, so the loss
//! scale is independent of the in-context count and caption length.

use crate::error::{Error, Result};
use crate::model::MoeStats;
use crate::vocab::TokenId;

/// Mean cross-entropy over masked positions. `logits` is [T, vocab];
/// logits at position t score `targets[t]` (the caller shifts by one).
pub fn output_loss(
    logits: &[f64],
    targets: &[TokenId],
    loss_mask: &[bool],
    vocab_size: usize,
) -> Result<f64> {
    if targets.len() != loss_mask.len() || logits.len() != targets.len() * vocab_size {
        return Err(Error::Train(format!(
            "misaligned loss inputs: {} logits, {} targets, {} mask bits",
            logits.len(),
            targets.len(),
            loss_mask.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, (&target, &on)) in targets.iter().zip(loss_mask).enumerate() {
        if !on {
            continue;
        }
        let row = &logits[t * vocab_size..(t + 1) * vocab_size];
        total += cross_entropy_row(row, target);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Train("empty supervision set".into()));
    }
    Ok(total / count as f64)
}

/// -log softmax(row)[target], numerically stabilized.
pub fn cross_entropy_row(row: &[f64], target: TokenId) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logsum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    logsum - row[target]
}

/// Mean cross-entropy over pre-gathered logit rows, plus d(loss)/d(logits)
/// scaled by `grad_scale / rows`. Returns (loss, dlogits).
pub fn masked_cross_entropy_with_grads(
    logit_rows: &[f64],
    targets: &[TokenId],
    vocab_size: usize,
    grad_scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::Train("empty supervision set".into()));
    }
    debug_assert_eq!(logit_rows.len(), n * vocab_size);
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; n * vocab_size];
    let inv = grad_scale / n as f64;
    for (r, &target) in targets.iter().enumerate() {
        let row = &logit_rows[r * vocab_size..(r + 1) * vocab_size];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let drow = &mut dlogits[r * vocab_size..(r + 1) * vocab_size];
        for (d, &v) in drow.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        loss += sum.ln() + max - row[target];
        let inv_sum = 1.0 / sum;
        for d in drow.iter_mut() {
            *d *= inv_sum * inv;
        }
        drow[target] -= inv;
    }
    Ok((loss / n as f64, dlogits))
}

/// Load-balancing loss: per layer N * sum_e f_e * P_e, averaged over MoE
/// layers. Equals 1 at perfectly uniform routing and N at total collapse.
pub fn aux_loss(stats: &[&MoeStats], num_experts: usize) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for s in stats {
        debug_assert_eq!(s.num_experts(), num_experts);
        let layer: f64 = s
            .load_fraction
            .iter()
            .zip(&s.mean_prob)
            .map(|(&f, &p)| f * p)
            .sum();
        total += num_experts as f64 * layer;
    }
    total / stats.len() as f64
}

/// L = L_out + lambda * L_aux + l_in_weight * L_in.
pub fn total_loss(l_out: f64, l_aux: f64, l_in: f64, lambda: f64, l_in_weight: f64) -> f64 {
    l_out + lambda * l_aux + l_in_weight * l_in
}
