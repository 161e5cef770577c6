// temporary: how fast does the architecture learn offset copying?
use mmicl_core::model::{LogitGrads, Model, ModelConfig};
use mmicl_core::rng::Rng;
use mmicl_core::training::{masked_cross_entropy_with_grads, AdamW};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let layers: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let heads: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let steps: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let clip: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let copies: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(16);

    let t_img = 64usize;
    let vocab = 80usize;
    let sep = 79usize;
    let mut model = Model::new(
        ModelConfig {
            num_layers: layers,
            hidden_size: 64,
            num_heads: heads,
            max_positions: 2 * t_img + 1,
            vocab_size: vocab,
            moe_layer_indices: vec![layers - 1],
            num_experts: 4,
            top_k: 2,
            ffn_multiplier: 4,
            ..ModelConfig::default()
        },
        3,
    )
    .unwrap();
    let mut opt = AdamW::new(lr, 0.0, clip);
    let mut rng = Rng::new(1);
    let batch = 8;
    let t0 = Instant::now();
    for step in 1..=steps {
        model.zero_grad();
        let mut acc = 0usize;
        let mut tot = 0usize;
        let mut loss_sum = 0.0;
        for _ in 0..batch {
            let x: Vec<usize> = (0..t_img).map(|_| rng.below(copies)).collect();
            let mut ids = x.clone();
            ids.push(sep);
            ids.extend(&x);
            let cache = model.forward(&ids, None).unwrap();
            let positions: Vec<usize> = (t_img..2 * t_img).collect();
            let targets: Vec<usize> = x.clone();
            let logits = model.logits_at(&cache, &positions);
            let (l, d) =
                masked_cross_entropy_with_grads(&logits, &targets, vocab, 1.0 / batch as f64)
                    .unwrap();
            loss_sum += l / batch as f64;
            for (r, &t) in targets.iter().enumerate() {
                let row = &logits[r * vocab..(r + 1) * vocab];
                let best = (0..vocab)
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap();
                acc += (best == t) as usize;
                tot += 1;
            }
            model.backward(
                &cache,
                &LogitGrads {
                    positions,
                    dlogits: d,
                },
                0.02 / batch as f64,
            );
        }
        let gn = opt.step(&mut model).unwrap();
        if step % 100 == 0 || step == 1 {
            println!(
                "step {step}: loss {loss_sum:.4} acc {:.3} gnorm {gn:.3} ({:.1}s)",
                acc as f64 / tot as f64,
                t0.elapsed().as_secs_f64()
            );
            if acc as f64 / tot as f64 > 0.98 {
                println!("converged at {step}");
                break;
            }
        }
    }
}
