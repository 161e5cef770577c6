// temporary tuning probe, not part of the deliverable
use mmicl_core::model::{Model, ModelConfig};
use mmicl_core::prompts::PromptCodec;
use mmicl_core::quantizers::bpe::train_bpe;
use mmicl_core::quantizers::codebook::{image_patches, train_codebook};
use mmicl_core::synthdata::{DataConfig, Dataset, Split};
use mmicl_core::tasks::{evaluate, registry, TaskContext, TokenizedData};
use mmicl_core::training::{train, TrainConfig};
use mmicl_core::vocab::Vocabulary;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let hidden: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let scenes: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let l_in: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let mode: String = args.get(6).cloned().unwrap_or_else(|| "both".into());
    let layers: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(4);
    let eval_every: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(300);
    let k_train: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(3);
    let sin_scale: f64 = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let dataset = Dataset::generate(DataConfig { train_scenes: scenes, val_scenes: 200, width: 32, height: 32, seed: 0 });
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
    println!("setup done, vocab {}", vocab.total_size());

    let ctx = TaskContext {
        dataset: &dataset, tokens: &tokens, train_pool: &pool, codebook: &codebook,
        codec: PromptCodec::new(&vocab, &tokenizer, dataset.classes.names(), 64, 24, 4096),
        in_context_k: k_train,
    };
    let moe_at: Vec<usize> = if layers >= 4 { vec![1, 3] } else { vec![layers - 1] };
    let mut model = Model::new(ModelConfig {
        num_layers: layers, hidden_size: hidden, num_heads: 4, max_positions: 640,
        vocab_size: vocab.total_size(), moe_layer_indices: moe_at,
        num_experts: 4, top_k: 2, ffn_multiplier: 4, ..ModelConfig::default()
    }, 17).unwrap();
    if sin_scale > 0.0 {
        let d = hidden;
        model.visit_params_mut(|name, prm| {
            if name == "pos_emb" {
                let max_p = prm.shape[0];
                for pos in 0..max_p {
                    for i in 0..d / 2 {
                        let freq = 1.0f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
                        prm.w[pos * d + 2 * i] = sin_scale * (pos as f64 * freq).sin();
                        prm.w[pos * d + 2 * i + 1] = sin_scale * (pos as f64 * freq).cos();
                    }
                }
            }
        });
        println!("sinusoidal pos init, scale {sin_scale}");
    }
    println!("params: {}", model.param_count());

    let task_weights = match mode.as_str() {
        "seg" => vec![1.0, 0.0],
        "segboost" => vec![2.0, 1.0],
        "cap" => vec![0.0, 1.0],
        _ => vec![1.0, 1.0],
    };
    let tasks = registry();
    let chunk = 100;
    let mut done = 0;
    while done < steps {
        let n = chunk.min(steps - done);
        let t0 = Instant::now();
        let cfg = TrainConfig {
            learning_rate: lr, weight_decay: 0.01, epochs: 1, l_in_weight: l_in,
            task_weights: task_weights.clone(),
            steps_per_epoch: Some(n), batch_size: 8, in_context_k: k_train, seed: 7 + done as u64,
            ..TrainConfig::default()
        };
        let out = train(&mut model, &tasks, &ctx, &cfg, None).unwrap();
        done += n;
        let last = out.steps.last().unwrap();
        println!("step {done}: l_out {:.4} l_aux {:.4} ({:.2}s/step)", last.l_out, last.l_aux, t0.elapsed().as_secs_f64() / n as f64);
        if done % eval_every == 0 || done >= steps {
        let t1 = Instant::now();
            for (ti, task) in tasks.iter().enumerate() {
                if task_weights[ti] == 0.0 { continue; }
                for k in [1usize, 3] { if k > k_train.max(1) { continue; }
                    let rows = evaluate(task.as_ref(), &ctx, &model, k, 100).unwrap();
                    let vals: Vec<String> = rows.iter().map(|r| format!("{}={:.3}", r.metric, r.value)).collect();
                    println!("  eval {} k={k}: {} malformed={:.3} n={}", task.name(), vals.join(" "), rows[0].malformed_rate, rows[0].n_items);
                }
            }
            println!("  eval time {:.1}s", t1.elapsed().as_secs_f64());
        }
    }
}
