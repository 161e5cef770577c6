//! Multi-task unmixed-batch sampling: every batch holds exactly one task,
//! with tasks drawn in proportion to w_k * sqrt(dataset size).

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Normalized sampling probabilities from dataset sizes and scaling factors.
pub fn task_probabilities(dataset_sizes: &[usize], task_weights: &[f64]) -> Result<Vec<f64>> {
    if dataset_sizes.is_empty() || dataset_sizes.len() != task_weights.len() {
        return Err(Error::Train(format!(
            "{} dataset sizes vs {} task weights",
            dataset_sizes.len(),
            task_weights.len()
        )));
    }
    if dataset_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Train("dataset sizes must be positive".into()));
    }
    let raw: Vec<f64> = dataset_sizes
        .iter()
        .zip(task_weights)
        .map(|(&s, &w)| w * (s as f64).sqrt())
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::Train("task weights sum to zero".into()));
    }
    Ok(raw.into_iter().map(|r| r / total).collect())
}

pub fn sample_task(rng: &mut Rng, dataset_sizes: &[usize], task_weights: &[f64]) -> Result<usize> {
    let probs = task_probabilities(dataset_sizes, task_weights)?;
    Ok(rng.categorical(&probs))
}
