//! Metrics for the two class-aware tasks: MIoU and MAE over binary masks,
//! BLEU4 over captions, and a thresholded matching score (mAP-lite) that
//! couples localization and description accuracy.
//!
//! Malformed generations score zero on every metric column and are tallied
//! separately in the reported malformed rate.

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::quantizers::boxes::BBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub miou: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapMetrics {
    pub bleu4: f64,
    pub map_lite: f64,
}

/// Runs the segmentation task over the validation split with k in-context
/// samples per query and folds the rows into typed metrics. Returns the
/// metrics, the malformed rate and the item count.
pub fn evaluate_segmentation(
    ctx: &crate::tasks::TaskContext,
    model: &crate::model::Model,
    k: usize,
    seed: u64,
) -> Result<(SegMetrics, f64, usize)> {
    let task = crate::tasks::lookup("segmentation")?;
    let rows = crate::tasks::evaluate(task.as_ref(), ctx, model, k, seed)?;
    let get = |m: &str| rows.iter().find(|r| r.metric == m).map(|r| r.value).unwrap_or(0.0);
    Ok((
        SegMetrics {
            miou: get("miou"),
            mae: get("mae"),
        },
        rows[0].malformed_rate,
        rows[0].n_items,
    ))
}

/// Captioning analog of [`evaluate_segmentation`].
pub fn evaluate_captioning(
    ctx: &crate::tasks::TaskContext,
    model: &crate::model::Model,
    k: usize,
    seed: u64,
) -> Result<(CapMetrics, f64, usize)> {
    let task = crate::tasks::lookup("captioning")?;
    let rows = crate::tasks::evaluate(task.as_ref(), ctx, model, k, seed)?;
    let get = |m: &str| rows.iter().find(|r| r.metric == m).map(|r| r.value).unwrap_or(0.0);
    Ok((
        CapMetrics {
            bleu4: get("bleu4"),
            map_lite: get("map_lite"),
        },
        rows[0].malformed_rate,
        rows[0].n_items,
    ))
}

/// IoU of one mask pair; an empty union counts as a perfect match.
pub fn mask_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Eval(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in pred.pixels().iter().zip(gt.pixels()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean IoU over aligned mask pairs.
pub fn miou(preds: &[Mask], gts: &[Mask]) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Eval("mask list length mismatch or empty".into()));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        total += mask_iou(p, g)?;
    }
    Ok(total / preds.len() as f64)
}

/// Mean absolute pixel difference over aligned mask pairs.
pub fn mae(preds: &[Mask], gts: &[Mask]) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Eval("mask list length mismatch or empty".into()));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        if p.width() != g.width() || p.height() != g.height() {
            return Err(Error::Eval("mask shape mismatch".into()));
        }
        let diff = p
            .pixels()
            .iter()
            .zip(g.pixels())
            .filter(|(a, b)| a != b)
            .count();
        total += diff as f64 / p.pixels().len() as f64;
    }
    Ok(total / preds.len() as f64)
}

fn ngrams(tokens: &[String], n: usize) -> std::collections::BTreeMap<Vec<&str>, usize> {
    let mut counts = std::collections::BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(|s| s.as_str()).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU4: geometric mean of clipped 1-4-gram precisions times the brevity
/// penalty. Lowercased, whitespace-tokenized. Precisions for n >= 2 are
/// add-one smoothed: (clipped + 1) / (total + 1).
pub fn bleu4(pred: &str, refs: &[&str]) -> f64 {
    let pred_tokens: Vec<String> = pred.to_lowercase().split_whitespace().map(String::from).collect();
    if pred_tokens.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let ref_token_lists: Vec<Vec<String>> = refs
        .iter()
        .map(|r| r.to_lowercase().split_whitespace().map(String::from).collect())
        .collect();

    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngrams(&pred_tokens, n);
        let total: usize = cand.values().sum();
        let mut clipped = 0usize;
        for (gram, &count) in &cand {
            let max_ref = ref_token_lists
                .iter()
                .map(|r| *ngrams(r, n).get(gram).unwrap_or(&0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        let p = if n == 1 {
            if total == 0 {
                return 0.0;
            }
            clipped as f64 / total as f64
        } else {
            (clipped as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }

    // brevity penalty against the closest reference length
    let c = pred_tokens.len() as f64;
    let r = ref_token_lists
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| {
            let diff = (len as isize - pred_tokens.len() as isize).abs();
            (diff, len)
        })
        .unwrap() as f64;
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / 4.0).exp()
}

/// Thresholded matching score over a grid of IoU x BLEU4 thresholds.
///
/// Predictions and ground truths are greedily matched one-to-one by
/// descending box IoU; per grid cell a matched pair counts when its IoU and
/// BLEU4 both clear the cell's thresholds, and the cell scores
/// matched / |gts|. The final score is the mean over the 25 cells. With one
/// region per query this collapses precision-recall to recall at the full
/// prediction set, so values are not comparable to ranked-AP protocols.
pub fn map_lite(preds: &[(BBox, String)], gts: &[(BBox, String)]) -> f64 {
    const IOU_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
    const BLEU_THRESHOLDS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
    if gts.is_empty() {
        return 0.0;
    }
    if preds.is_empty() {
        return 0.0;
    }
    // all candidate pairs by descending IoU, deterministic tie-break
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, (pb, _)) in preds.iter().enumerate() {
        for (gi, (gb, _)) in gts.iter().enumerate() {
            pairs.push((pb.iou(gb), pi, gi));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut matches: Vec<(f64, f64)> = Vec::new(); // (iou, bleu)
    for (iou, pi, gi) in pairs {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        let b = bleu4(&preds[pi].1, &[gts[gi].1.as_str()]);
        matches.push((iou, b));
    }
    let mut total = 0.0;
    for &iou_thr in &IOU_THRESHOLDS {
        for &bleu_thr in &BLEU_THRESHOLDS {
            let matched = matches
                .iter()
                .filter(|&&(i, b)| i >= iou_thr && b >= bleu_thr)
                .count();
            total += matched as f64 / gts.len() as f64;
        }
    }
    total / 25.0
}
