//! Token sampling: greedy argmax or temperature-scaled categorical draws.

use crate::error::{Error, Result};
use crate::math::softmax_inplace;
use crate::rng::Rng;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingStrategy {
    /// Argmax with ties to the lowest index; the tau -> 0 limit.
    Greedy,
    Temperature { tau: f64 },
}

pub fn sample_next(logits: &[f64], strategy: &SamplingStrategy, rng: &mut Rng) -> Result<TokenId> {
    if logits.is_empty() {
        return Err(Error::Model("empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("non-finite logit".into()));
    }
    match strategy {
        SamplingStrategy::Greedy => {
            let mut best = 0;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        SamplingStrategy::Temperature { tau } => {
            if *tau <= 0.0 {
                return Err(Error::Model(format!("temperature {tau} must be positive")));
            }
            let mut p: Vec<f64> = logits.iter().map(|&v| v / tau).collect();
            softmax_inplace(&mut p);
            Ok(rng.categorical(&p))
        }
    }
}
