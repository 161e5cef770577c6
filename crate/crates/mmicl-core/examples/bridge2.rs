// temporary: does an image-copy warmup transfer to mask prediction?
use mmicl_core::error::Result;
use mmicl_core::model::{Model, ModelConfig};
use mmicl_core::prompts::{PromptCodec, PromptSequence};
use mmicl_core::quantizers::bpe::train_bpe;
use mmicl_core::quantizers::codebook::{image_patches, train_codebook};
use mmicl_core::rng::Rng;
use mmicl_core::synthdata::{DataConfig, Dataset, Split};
use mmicl_core::tasks::{evaluate, registry, ItemOutcome, Task, TaskContext, TokenizedData};
use mmicl_core::training::{train, TrainConfig};
use mmicl_core::vocab::Vocabulary;

struct CopyWarmup;

impl Task for CopyWarmup {
    fn name(&self) -> &'static str {
        "copy-warmup"
    }
    fn pool_size(&self, ctx: &TaskContext) -> usize {
        ctx.dataset.config.train_scenes
    }
    fn train_sequence(&self, ctx: &TaskContext, rng: &mut Rng) -> Result<PromptSequence> {
        let sid = rng.below(ctx.dataset.config.train_scenes);
        let img = &ctx.tokens.image_tokens[sid];
        ctx.codec.assemble_segmentation(&[], img, Some(img))
    }
    fn eval_item_count(&self, _: &TaskContext) -> usize {
        0
    }
    fn eval_one(
        &self,
        _: &TaskContext,
        _: &Model,
        _: usize,
        _: usize,
        _: &mut Rng,
    ) -> Result<ItemOutcome> {
        unreachable!()
    }
    fn metric_names(&self) -> &'static [&'static str] {
        &[]
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let warm_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let seg_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.5e-3);

    let dataset = Dataset::generate(DataConfig {
        train_scenes: 2000,
        val_scenes: 200,
        width: 32,
        height: 32,
        seed: 0,
    });
    let mut patches = Vec::new();
    for sid in dataset.split_ids(Split::Train) {
        patches.extend(image_patches(&dataset.scenes[sid].image, 4).unwrap());
        for obj in &dataset.scenes[sid].objects {
            patches.extend(image_patches(&obj.mask.to_image(), 4).unwrap());
        }
    }
    let codebook = train_codebook(&patches, 4, 64, 20, 13).unwrap();
    let tokenizer = train_bpe(&dataset.caption_corpus(), 48).unwrap();
    let vocab = Vocabulary::standard(tokenizer.vocab_size(), codebook.len()).unwrap();
    let tokens = TokenizedData::build(&dataset, &codebook, &vocab).unwrap();
    let pool = dataset.pools(Split::Train);
    let ctx = TaskContext {
        dataset: &dataset,
        tokens: &tokens,
        train_pool: &pool,
        codebook: &codebook,
        codec: PromptCodec::new(&vocab, &tokenizer, dataset.classes.names(), 64, 24, 4096),
        in_context_k: 0,
    };
    let mut model = Model::new(
        ModelConfig {
            num_layers: 2,
            hidden_size: 64,
            num_heads: 8,
            max_positions: 640,
            vocab_size: vocab.total_size(),
            moe_layer_indices: vec![1],
            num_experts: 4,
            top_k: 2,
            ffn_multiplier: 4,
            ..ModelConfig::default()
        },
        17,
    )
    .unwrap();

    // phase 1: image-copy warmup at k=0
    let warm: Vec<Box<dyn Task>> = vec![Box::new(CopyWarmup)];
    for chunk in 0..warm_steps / 100 {
        let cfg = TrainConfig {
            learning_rate: lr,
            weight_decay: 0.01,
            epochs: 1,
            steps_per_epoch: Some(100),
            batch_size: 8,
            in_context_k: 0,
            seed: 100 + chunk as u64,
            ..TrainConfig::default()
        };
        let out = train(&mut model, &warm, &ctx, &cfg, None).unwrap();
        println!(
            "warmup {}: l_out {:.4}",
            (chunk + 1) * 100,
            out.steps.last().unwrap().l_out
        );
    }

    // phase 2: real segmentation at k=0
    let tasks = registry();
    for chunk in 0..seg_steps / 100 {
        let cfg = TrainConfig {
            learning_rate: lr,
            weight_decay: 0.01,
            epochs: 1,
            steps_per_epoch: Some(100),
            batch_size: 8,
            in_context_k: 0,
            task_weights: vec![1.0, 0.0],
            seed: 500 + chunk as u64,
            ..TrainConfig::default()
        };
        let out = train(&mut model, &tasks, &ctx, &cfg, None).unwrap();
        let done = (chunk + 1) * 100;
        println!("seg {}: l_out {:.4}", done, out.steps.last().unwrap().l_out);
        if done % 300 == 0 {
            let rows = evaluate(tasks[0].as_ref(), &ctx, &model, 0, 100).unwrap();
            let vals: Vec<String> = rows
                .iter()
                .map(|r| format!("{}={:.3}", r.metric, r.value))
                .collect();
            println!("  eval k=0: {}", vals.join(" "));
        }
    }
}
