//! The class-aware in-context task family behind one trait.
//!
//! Each task knows how to draw a teacher-forced training sequence from the
//! per-class pools, how to run one evaluation query (assemble, generate,
//! parse, score) and how to aggregate item outcomes into report rows. Tasks
//! register by name; training and the CLI select them at runtime.

use crate::error::{Error, Result};
use crate::eval::{bleu4, map_lite, mask_iou};
use crate::model::{Model, SamplingStrategy};
use crate::prompts::{CapSample, PromptCodec, PromptSequence, SegSample};
use crate::quantizers::codebook::{quantize_image, Codebook};
use crate::rng::Rng;
use crate::synthdata::{ClassPool, Dataset};
use crate::vocab::{TokenId, Vocabulary};

/// Scene images and per-object masks pre-quantized against one codebook.
pub struct TokenizedData {
    pub image_tokens: Vec<Vec<TokenId>>,
    /// mask_tokens[scene][object]
    pub mask_tokens: Vec<Vec<Vec<TokenId>>>,
}

impl TokenizedData {
    pub fn build(dataset: &Dataset, codebook: &Codebook, vocab: &Vocabulary) -> Result<Self> {
        let mut image_tokens = Vec::with_capacity(dataset.scenes.len());
        let mut mask_tokens = Vec::with_capacity(dataset.scenes.len());
        for scene in &dataset.scenes {
            image_tokens.push(quantize_image(&scene.image, codebook, vocab)?);
            let mut per_object = Vec::with_capacity(scene.objects.len());
            for obj in &scene.objects {
                per_object.push(quantize_image(&obj.mask.to_image(), codebook, vocab)?);
            }
            mask_tokens.push(per_object);
        }
        Ok(Self {
            image_tokens,
            mask_tokens,
        })
    }
}

/// Everything a task needs to build sequences and evaluate queries.
pub struct TaskContext<'a> {
    pub dataset: &'a Dataset,
    pub tokens: &'a TokenizedData,
    pub train_pool: &'a ClassPool,
    pub codebook: &'a Codebook,
    pub codec: PromptCodec<'a>,
    /// In-context sample count for training sequences.
    pub in_context_k: usize,
}

impl<'a> TaskContext<'a> {
    /// Per-token segment kinds, needed when the router consumes them.
    pub fn segment_kinds(&self, ids: &[TokenId]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| self.codec.vocab.resolve(id).map(|(k, _)| k.index()))
            .collect()
    }
}

/// Outcome of one evaluation query.
#[derive(Debug, Clone)]
pub struct ItemOutcome {
    pub malformed: bool,
    /// (metric name, value); empty when malformed.
    pub values: Vec<(&'static str, f64)>,
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub k: usize,
    pub metric: String,
    pub value: f64,
    pub malformed_rate: f64,
    pub n_items: usize,
}

pub trait Task {
    fn name(&self) -> &'static str;

    /// Dataset size used for sqrt-weighted task sampling.
    fn pool_size(&self, ctx: &TaskContext) -> usize;

    /// One teacher-forced training sequence with fresh class-matched
    /// in-context examples.
    fn train_sequence(&self, ctx: &TaskContext, rng: &mut Rng) -> Result<PromptSequence>;

    /// Number of validation queries.
    fn eval_item_count(&self, ctx: &TaskContext) -> usize;

    /// Assemble, generate greedily, parse and score one validation query.
    fn eval_one(
        &self,
        ctx: &TaskContext,
        model: &Model,
        item: usize,
        k: usize,
        rng: &mut Rng,
    ) -> Result<ItemOutcome>;

    /// Metric names this task reports, in stable order.
    fn metric_names(&self) -> &'static [&'static str];
}

pub struct SegmentationTask;
pub struct CaptioningTask;

/// All registered tasks in fixed order.
pub fn registry() -> Vec<Box<dyn Task>> {
    vec![Box::new(SegmentationTask), Box::new(CaptioningTask)]
}

pub fn lookup(name: &str) -> Result<Box<dyn Task>> {
    registry()
        .into_iter()
        .find(|t| t.name() == name)
        .ok_or_else(|| {
            let known: Vec<&str> = registry().iter().map(|t| t.name()).collect();
            Error::Eval(format!(
                "unknown task '{name}', known tasks: {}",
                known.join(", ")
            ))
        })
}

/// Draws a query reference plus k class-matched context references, never
/// reusing the query scene. Retries with a fresh query when a class pool is
/// too shallow.
fn draw_query_and_context(
    pool: &ClassPool,
    dataset: &Dataset,
    k: usize,
    rng: &mut Rng,
) -> Result<((usize, usize), Vec<(usize, usize)>)> {
    // flat pool across classes, weighted by entry count
    let flat: Vec<(usize, usize)> = (0..dataset.classes.len())
        .flat_map(|c| pool.class_entries(c).iter().copied())
        .collect();
    if flat.is_empty() {
        return Err(Error::Data("empty training pool".into()));
    }
    let mut last_err = None;
    for _ in 0..32 {
        let query = flat[rng.below(flat.len())];
        let class = dataset.scenes[query.0].objects[query.1].class_index;
        match pool.sample_in_context(class, k, rng, Some(query.0), dataset.classes.name(class)) {
            Ok(context) => return Ok((query, context)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Data("context sampling failed".into())))
}

fn seg_samples(ctx: &TaskContext, refs: &[(usize, usize)]) -> Vec<SegSample> {
    refs.iter()
        .map(|&(sid, oi)| SegSample {
            image_tokens: ctx.tokens.image_tokens[sid].clone(),
            mask_tokens: ctx.tokens.mask_tokens[sid][oi].clone(),
        })
        .collect()
}

fn cap_samples(ctx: &TaskContext, refs: &[(usize, usize)]) -> Vec<CapSample> {
    refs.iter()
        .map(|&(sid, oi)| {
            let cap = &ctx.dataset.scenes[sid].captions[oi];
            CapSample {
                image_tokens: ctx.tokens.image_tokens[sid].clone(),
                category: cap.class_index,
                bbox: cap.bbox,
                caption: cap.caption.clone(),
            }
        })
        .collect()
}

/// Validation queries: every (scene, object) of the val split, in order.
fn val_items(ctx: &TaskContext) -> Vec<(usize, usize)> {
    let mut items = Vec::new();
    for sid in ctx.dataset.split_ids(crate::synthdata::Split::Val) {
        for oi in 0..ctx.dataset.scenes[sid].objects.len() {
            items.push((sid, oi));
        }
    }
    items
}

impl Task for SegmentationTask {
    fn name(&self) -> &'static str {
        "segmentation"
    }

    fn pool_size(&self, ctx: &TaskContext) -> usize {
        ctx.train_pool.total()
    }

    fn train_sequence(&self, ctx: &TaskContext, rng: &mut Rng) -> Result<PromptSequence> {
        let (query, context) =
            draw_query_and_context(ctx.train_pool, ctx.dataset, ctx.in_context_k, rng)?;
        let samples = seg_samples(ctx, &context);
        let query_img = &ctx.tokens.image_tokens[query.0];
        let target = &ctx.tokens.mask_tokens[query.0][query.1];
        ctx.codec
            .assemble_segmentation(&samples, query_img, Some(target))
    }

    fn eval_item_count(&self, ctx: &TaskContext) -> usize {
        val_items(ctx).len()
    }

    fn eval_one(
        &self,
        ctx: &TaskContext,
        model: &Model,
        item: usize,
        k: usize,
        rng: &mut Rng,
    ) -> Result<ItemOutcome> {
        let (sid, oi) = val_items(ctx)[item];
        let class = ctx.dataset.scenes[sid].objects[oi].class_index;
        let context = ctx.train_pool.sample_in_context(
            class,
            k,
            rng,
            Some(sid),
            ctx.dataset.classes.name(class),
        )?;
        let samples = seg_samples(ctx, &context);
        let prefix = ctx
            .codec
            .assemble_segmentation(&samples, &ctx.tokens.image_tokens[sid], None)?;
        let segmenter = |id: TokenId| {
            ctx.codec
                .vocab
                .resolve(id)
                .map(|(kind, _)| kind.index())
                .unwrap_or(0)
        };
        let generated = model.generate(
            &prefix.ids,
            ctx.codec.seg_generation_budget(),
            ctx.codec.vocab.special_ids()?.eoc,
            &SamplingStrategy::Greedy,
            rng,
            model.config.router_segment_input.then_some(&segmenter as &dyn Fn(TokenId) -> usize),
        )?;
        let mut full = prefix.ids.clone();
        full.extend(&generated);
        let (h, w) = (ctx.dataset.config.height, ctx.dataset.config.width);
        match ctx.codec.parse_segmentation(&full, ctx.codebook, h, w) {
            Ok(pred) => {
                let gt = &ctx.dataset.scenes[sid].objects[oi].mask;
                let iou = mask_iou(&pred, gt)?;
                let diff = pred
                    .pixels()
                    .iter()
                    .zip(gt.pixels())
                    .filter(|(a, b)| a != b)
                    .count() as f64
                    / pred.pixels().len() as f64;
                Ok(ItemOutcome {
                    malformed: false,
                    values: vec![("miou", iou), ("mae", diff)],
                })
            }
            Err(_) => Ok(ItemOutcome {
                malformed: true,
                values: Vec::new(),
            }),
        }
    }

    fn metric_names(&self) -> &'static [&'static str] {
        &["miou", "mae"]
    }
}

impl Task for CaptioningTask {
    fn name(&self) -> &'static str {
        "captioning"
    }

    fn pool_size(&self, ctx: &TaskContext) -> usize {
        ctx.train_pool.total()
    }

    fn train_sequence(&self, ctx: &TaskContext, rng: &mut Rng) -> Result<PromptSequence> {
        let (query, context) =
            draw_query_and_context(ctx.train_pool, ctx.dataset, ctx.in_context_k, rng)?;
        let samples = cap_samples(ctx, &context);
        let record = &ctx.dataset.scenes[query.0].captions[query.1];
        ctx.codec.assemble_captioning(
            &samples,
            &ctx.tokens.image_tokens[query.0],
            record.class_index,
            Some((&record.bbox, &record.caption)),
        )
    }

    fn eval_item_count(&self, ctx: &TaskContext) -> usize {
        val_items(ctx).len()
    }

    fn eval_one(
        &self,
        ctx: &TaskContext,
        model: &Model,
        item: usize,
        k: usize,
        rng: &mut Rng,
    ) -> Result<ItemOutcome> {
        let (sid, oi) = val_items(ctx)[item];
        let record = &ctx.dataset.scenes[sid].captions[oi];
        let context = ctx.train_pool.sample_in_context(
            record.class_index,
            k,
            rng,
            Some(sid),
            ctx.dataset.classes.name(record.class_index),
        )?;
        let samples = cap_samples(ctx, &context);
        let prefix = ctx.codec.assemble_captioning(
            &samples,
            &ctx.tokens.image_tokens[sid],
            record.class_index,
            None,
        )?;
        let segmenter = |id: TokenId| {
            ctx.codec
                .vocab
                .resolve(id)
                .map(|(kind, _)| kind.index())
                .unwrap_or(0)
        };
        let generated = model.generate(
            &prefix.ids,
            ctx.codec.cap_generation_budget(),
            ctx.codec.vocab.special_ids()?.eoc,
            &SamplingStrategy::Greedy,
            rng,
            model.config.router_segment_input.then_some(&segmenter as &dyn Fn(TokenId) -> usize),
        )?;
        // the query record starts at [BOT]: pair start + [BOI] + image tokens
        let (start, _) = *prefix.pair_spans.last().expect("query pair present");
        let mut record_span = prefix.ids[start + 1 + ctx.codec.tokens_per_image..].to_vec();
        record_span.extend(&generated);
        match ctx.codec.parse_captioning(&record_span) {
            Ok(parsed) => {
                let b = bleu4(&parsed.caption, &[record.caption.as_str()]);
                let iou = parsed.bbox.iou(&record.bbox);
                let ml = map_lite(
                    &[(parsed.bbox, parsed.caption.clone())],
                    &[(record.bbox, record.caption.clone())],
                );
                Ok(ItemOutcome {
                    malformed: false,
                    values: vec![("bleu4", b), ("map_lite", ml), ("box_iou", iou)],
                })
            }
            Err(_) => Ok(ItemOutcome {
                malformed: true,
                values: Vec::new(),
            }),
        }
    }

    fn metric_names(&self) -> &'static [&'static str] {
        &["bleu4", "map_lite", "box_iou"]
    }
}

/// Runs every validation query for one task at context size k and folds the
/// outcomes into report rows. Malformed items contribute zero to every
/// metric and are counted in the malformed rate.
pub fn evaluate(
    task: &dyn Task,
    ctx: &TaskContext,
    model: &Model,
    k: usize,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let n = task.eval_item_count(ctx);
    if n == 0 {
        return Err(Error::Eval("empty evaluation set".into()));
    }
    let base = Rng::new(seed).derive(0x6576616c); // "eval"
    let mut malformed = 0usize;
    let mut sums: Vec<(&'static str, f64)> =
        task.metric_names().iter().map(|&m| (m, 0.0)).collect();
    for item in 0..n {
        let mut rng = base.derive(item as u64);
        let outcome = task.eval_one(ctx, model, item, k, &mut rng)?;
        if outcome.malformed {
            malformed += 1;
            continue;
        }
        for (name, value) in outcome.values {
            if let Some(slot) = sums.iter_mut().find(|(m, _)| *m == name) {
                slot.1 += value;
            }
        }
    }
    let malformed_rate = malformed as f64 / n as f64;
    Ok(sums
        .into_iter()
        .map(|(metric, total)| ReportRow {
            task: task.name().to_string(),
            k,
            metric: metric.to_string(),
            value: total / n as f64,
            malformed_rate,
            n_items: n,
        })
        .collect())
}

/// Tab-separated report with a stable column order.
pub fn write_report(rows: &[ReportRow]) -> String {
    let mut out = String::from("task\tk\tmetric\tvalue\tmalformed_rate\tn_items\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
            r.task, r.k, r.metric, r.value, r.malformed_rate, r.n_items
        ));
    }
    out
}
