//! Command-line entry point for the whole pipeline: synthetic data
//! generation, tokenizer training, model training, evaluation, inference and
//! token inspection.
//!
//! Exit status: 0 success, 1 usage error, 2 runtime error.

use mmicl_core::config::RunConfig;
use mmicl_core::error::{Error, Result};
use mmicl_core::image::Mask;
use mmicl_core::model::{Model, ModelConfig};
use mmicl_core::prompts::PromptCodec;
use mmicl_core::quantizers::bpe::{train_bpe, BpeTokenizer};
use mmicl_core::quantizers::codebook::{image_patches, train_codebook, Codebook};
use mmicl_core::rng::Rng;
use mmicl_core::synthdata::{ClassPool, Dataset, Split};
use mmicl_core::tasks::{evaluate, lookup, registry, write_report, TaskContext, TokenizedData};
use mmicl_core::training::train;
use mmicl_core::vocab::Vocabulary;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
mmicl - unified multimodal in-context learning at desk scale

USAGE:
  mmicl <command> [--config PATH] [--seed N] [--out DIR] [--<key> <value> ...]

COMMANDS:
  build-data        generate the synthetic scene dataset
                      --out DIR
  train-tokenizers  fit the patch codebook and BPE tokenizer
                      --data DIR --out DIR
  train             train the model
                      --data DIR --artifacts DIR --out DIR
  eval              evaluate a checkpoint on the validation split
                      --data DIR --artifacts DIR --checkpoint PATH --out DIR
                      [--task segmentation|captioning|all]
  infer             run one query and print the decoded mask or record
                      --data DIR --artifacts DIR --checkpoint PATH
                      --task NAME --scene N --class NAME [--k N]
  inspect-tokens    print a training sequence token by token
                      --data DIR --artifacts DIR --task NAME --scene N
                      --class NAME [--k N]

Any configuration key (see `configs/`) can be overridden with --<key> <value>,
e.g. --epochs 2 --hidden_size 64. `--seed N` sets both the data and training
seeds unless overridden by --data_seed / a config file.
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(run(&args));
}

/// Parses and dispatches; returns the process exit status.
pub fn run(args: &[String]) -> i32 {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{USAGE}");
        return 0;
    }
    let command = args[0].as_str();
    let parsed = match parse_flags(&args[1..]) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("usage error: {msg}");
            eprintln!("run `mmicl --help` for usage");
            return 1;
        }
    };
    if parsed.help {
        print!("{USAGE}");
        return 0;
    }
    let result = match command {
        "build-data" => cmd_build_data(&parsed),
        "train-tokenizers" => cmd_train_tokenizers(&parsed),
        "train" => cmd_train(&parsed),
        "eval" => cmd_eval(&parsed),
        "infer" => cmd_infer(&parsed),
        "inspect-tokens" => cmd_inspect(&parsed),
        other => {
            eprintln!("usage error: unknown command '{other}'");
            eprintln!("run `mmicl --help` for usage");
            return 1;
        }
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult = std::result::Result<(), CliError>;

struct Parsed {
    help: bool,
    /// Every --key value pair in order.
    flags: Vec<(String, String)>,
}

impl Parsed {
    fn get(&self, key: &str) -> Option<&str> {
        self.flags
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> std::result::Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{key}")))
    }

    fn path(&self, key: &str) -> std::result::Result<PathBuf, CliError> {
        Ok(PathBuf::from(self.require(key)?))
    }

    fn usize_or(&self, key: &str, default: usize) -> std::result::Result<usize, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Usage(format!("bad value for --{key}: {e}"))),
        }
    }

    /// Builds the effective configuration: defaults, then the file, then
    /// --seed, then every config-key flag in order.
    fn config(&self) -> std::result::Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = self.get("config") {
            cfg = RunConfig::load(Path::new(path)).map_err(CliError::Runtime)?;
        }
        if let Some(seed) = self.get("seed") {
            cfg.set("seed", seed).map_err(CliError::Runtime)?;
            cfg.set("data_seed", seed).map_err(CliError::Runtime)?;
        }
        for (key, value) in &self.flags {
            if COMMAND_FLAGS.contains(&key.as_str()) {
                continue;
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(msg) if msg.starts_with("unknown config key") => {
                    CliError::Usage(format!("unknown flag --{key}"))
                }
                other => CliError::Runtime(other),
            })?;
        }
        Ok(cfg)
    }
}

/// Flags that are command arguments rather than configuration keys.
const COMMAND_FLAGS: [&str; 10] = [
    "config",
    "seed",
    "out",
    "data",
    "artifacts",
    "checkpoint",
    "task",
    "scene",
    "class",
    "k",
];

fn parse_flags(args: &[String]) -> std::result::Result<Parsed, String> {
    let mut parsed = Parsed {
        help: false,
        flags: Vec::new(),
    };
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if arg == "--help" || arg == "-h" {
            parsed.help = true;
            i += 1;
            continue;
        }
        let Some(key) = arg.strip_prefix("--") else {
            return Err(format!("unexpected argument '{arg}'"));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = args
                    .get(i + 1)
                    .ok_or_else(|| format!("flag --{key} needs a value"))?;
                i += 1;
                (key.to_string(), v.clone())
            }
        };
        parsed.flags.push((key, value));
        i += 1;
    }
    Ok(parsed)
}

fn write_snapshot(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("effective_config.txt"), cfg.to_text())?;
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_build_data(p: &Parsed) -> CliResult {
    let out = p.path("out")?;
    let cfg = p.config()?;
    write_snapshot(&out, &cfg).map_err(CliError::Runtime)?;
    let dataset = Dataset::generate(cfg.data.clone());
    let data_dir = out.join("data");
    dataset.save(&data_dir).map_err(CliError::Runtime)?;
    println!(
        "wrote {} train + {} val scenes ({}x{}) to {}",
        cfg.data.train_scenes,
        cfg.data.val_scenes,
        cfg.data.width,
        cfg.data.height,
        data_dir.display()
    );
    Ok(())
}

fn cmd_train_tokenizers(p: &Parsed) -> CliResult {
    let data_dir = p.path("data")?;
    let out = p.path("out")?;
    let cfg = p.config()?;
    write_snapshot(&out, &cfg).map_err(CliError::Runtime)?;
    let dataset = Dataset::load(&data_dir).map_err(CliError::Runtime)?;

    let mut patches = Vec::new();
    for sid in dataset.split_ids(Split::Train) {
        patches.extend(
            image_patches(&dataset.scenes[sid].image, cfg.patch_size).map_err(CliError::Runtime)?,
        );
        for obj in &dataset.scenes[sid].objects {
            patches.extend(
                image_patches(&obj.mask.to_image(), cfg.patch_size).map_err(CliError::Runtime)?,
            );
        }
    }
    let codebook = train_codebook(
        &patches,
        cfg.patch_size,
        cfg.codebook_size,
        cfg.codebook_iters,
        cfg.data.seed,
    )
    .map_err(CliError::Runtime)?;
    let tokenizer =
        train_bpe(&dataset.caption_corpus(), cfg.bpe_merges).map_err(CliError::Runtime)?;
    let vocab = Vocabulary::standard(tokenizer.vocab_size(), codebook.len())
        .map_err(CliError::Runtime)?;

    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.into()))?;
    std::fs::write(out.join("codebook.txt"), codebook.to_text())
        .map_err(|e| CliError::Runtime(e.into()))?;
    std::fs::write(out.join("bpe.txt"), tokenizer.to_text())
        .map_err(|e| CliError::Runtime(e.into()))?;
    std::fs::write(out.join("vocab.txt"), vocab.to_manifest())
        .map_err(|e| CliError::Runtime(e.into()))?;
    println!(
        "codebook {} entries, text vocabulary {}, total vocabulary {}",
        codebook.len(),
        tokenizer.vocab_size(),
        vocab.total_size()
    );
    Ok(())
}

struct Loaded {
    dataset: Dataset,
    codebook: Codebook,
    tokenizer: BpeTokenizer,
    vocab: Vocabulary,
    tokens: TokenizedData,
    pool: ClassPool,
}

fn load_all(data_dir: &Path, artifacts: &Path) -> Result<Loaded> {
    let dataset = Dataset::load(data_dir)?;
    let codebook = Codebook::from_text(&std::fs::read_to_string(artifacts.join("codebook.txt"))?)?;
    let tokenizer = BpeTokenizer::from_text(&std::fs::read_to_string(artifacts.join("bpe.txt"))?)?;
    let vocab = Vocabulary::from_manifest(&std::fs::read_to_string(artifacts.join("vocab.txt"))?)?;
    let tokens = TokenizedData::build(&dataset, &codebook, &vocab)?;
    let pool = dataset.pools(Split::Train);
    Ok(Loaded {
        dataset,
        codebook,
        tokenizer,
        vocab,
        tokens,
        pool,
    })
}

impl Loaded {
    fn context(&self, cfg: &RunConfig, k: usize) -> TaskContext<'_> {
        let t = (self.dataset.config.width / self.codebook.patch_size())
            * (self.dataset.config.height / self.codebook.patch_size());
        TaskContext {
            dataset: &self.dataset,
            tokens: &self.tokens,
            train_pool: &self.pool,
            codebook: &self.codebook,
            codec: PromptCodec::new(
                &self.vocab,
                &self.tokenizer,
                self.dataset.classes.names(),
                t,
                cfg.caption_budget,
                cfg.model.max_positions,
            ),
            in_context_k: k,
        }
    }
}

fn model_config(cfg: &RunConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.total_size(),
        ..cfg.model.clone()
    }
}

fn cmd_train(p: &Parsed) -> CliResult {
    let loaded = load_all(&p.path("data")?, &p.path("artifacts")?)?;
    let out = p.path("out")?;
    let cfg = p.config()?;
    write_snapshot(&out, &cfg).map_err(CliError::Runtime)?;
    let mut model = Model::new(model_config(&cfg, &loaded.vocab), cfg.train.seed)?;
    let ctx = loaded.context(&cfg, cfg.train.in_context_k);
    let tasks = registry();
    let outcome = train(&mut model, &tasks, &ctx, &cfg.train, Some(&out))?;
    println!(
        "trained {} steps, checkpoint at {}",
        outcome.steps.len(),
        out.join("checkpoint.bin").display()
    );
    if let Some(last) = outcome.steps.last() {
        println!(
            "final step: task {} l_out {:.4} l_aux {:.4}",
            last.task, last.l_out, last.l_aux
        );
    }
    Ok(())
}

fn cmd_eval(p: &Parsed) -> CliResult {
    let loaded = load_all(&p.path("data")?, &p.path("artifacts")?)?;
    let out = p.path("out")?;
    let cfg = p.config()?;
    write_snapshot(&out, &cfg).map_err(CliError::Runtime)?;
    let model = Model::load_checkpoint(&p.path("checkpoint")?)?;
    let task_arg = p.get("task").unwrap_or("all");
    let tasks = match task_arg {
        "all" => registry(),
        name => vec![lookup(name)?],
    };
    let mut rows = Vec::new();
    for task in &tasks {
        for &k in &cfg.eval_k {
            let ctx = loaded.context(&cfg, k);
            rows.extend(evaluate(task.as_ref(), &ctx, &model, k, cfg.train.seed)?);
        }
    }
    let report = write_report(&rows);
    std::fs::write(out.join("report.tsv"), &report).map_err(|e| CliError::Runtime(e.into()))?;
    print!("{report}");
    println!("report written to {}", out.join("report.tsv").display());
    Ok(())
}

fn find_object(loaded: &Loaded, scene: usize, class_name: &str) -> Result<(usize, usize)> {
    let class = loaded
        .dataset
        .classes
        .names()
        .iter()
        .position(|n| n == class_name)
        .ok_or_else(|| {
            Error::Eval(format!(
                "unknown class '{class_name}', known: {}",
                loaded.dataset.classes.names().join(", ")
            ))
        })?;
    if scene >= loaded.dataset.scenes.len() {
        return Err(Error::Eval(format!(
            "scene {scene} out of range ({} scenes)",
            loaded.dataset.scenes.len()
        )));
    }
    let oi = loaded.dataset.scenes[scene]
        .objects
        .iter()
        .position(|o| o.class_index == class)
        .ok_or_else(|| {
            let present: Vec<&str> = loaded.dataset.scenes[scene]
                .objects
                .iter()
                .map(|o| loaded.dataset.classes.name(o.class_index))
                .collect();
            Error::Eval(format!(
                "scene {scene} has no '{class_name}'; present: {}",
                present.join(", ")
            ))
        })?;
    Ok((class, oi))
}

fn mask_art(mask: &Mask) -> String {
    let mut out = String::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            out.push(if mask.get(x, y) { '#' } else { '.' });
        }
        out.push('\n');
    }
    out
}

fn cmd_infer(p: &Parsed) -> CliResult {
    let loaded = load_all(&p.path("data")?, &p.path("artifacts")?)?;
    let cfg = p.config()?;
    if let Some(out) = p.get("out") {
        write_snapshot(Path::new(out), &cfg).map_err(CliError::Runtime)?;
    }
    let model = Model::load_checkpoint(&p.path("checkpoint")?)?;
    let task_name = p.require("task")?;
    let scene: usize = p
        .require("scene")?
        .parse()
        .map_err(|e| CliError::Usage(format!("bad --scene: {e}")))?;
    let class_name = p.require("class")?;
    let k = p.usize_or("k", 1)?;
    let (class, oi) = find_object(&loaded, scene, class_name)?;
    let ctx = loaded.context(&cfg, k);
    let mut rng = Rng::new(cfg.train.seed).derive(0x696e666572); // "infer"
    let ids = loaded.vocab.special_ids()?;

    match task_name {
        "segmentation" => {
            let context = ctx.train_pool.sample_in_context(
                class,
                k,
                &mut rng,
                Some(scene),
                class_name,
            )?;
            let samples: Vec<_> = context
                .iter()
                .map(|&(sid, co)| mmicl_core::prompts::SegSample {
                    image_tokens: ctx.tokens.image_tokens[sid].clone(),
                    mask_tokens: ctx.tokens.mask_tokens[sid][co].clone(),
                })
                .collect();
            let prefix =
                ctx.codec
                    .assemble_segmentation(&samples, &ctx.tokens.image_tokens[scene], None)?;
            let generated = model.generate(
                &prefix.ids,
                ctx.codec.seg_generation_budget(),
                ids.eoc,
                &mmicl_core::model::SamplingStrategy::Greedy,
                &mut rng,
                None,
            )?;
            let mut full = prefix.ids.clone();
            full.extend(&generated);
            let (h, w) = (loaded.dataset.config.height, loaded.dataset.config.width);
            let pred = ctx
                .codec
                .parse_segmentation(&full, &loaded.codebook, h, w)?;
            let gt = &loaded.dataset.scenes[scene].objects[oi].mask;
            println!("predicted mask (scene {scene}, class '{class_name}', k={k}):");
            print!("{}", mask_art(&pred));
            println!("ground truth:");
            print!("{}", mask_art(gt));
            println!("iou: {:.4}", mmicl_core::eval::mask_iou(&pred, gt)?);
        }
        "captioning" => {
            let record = &loaded.dataset.scenes[scene].captions[oi];
            let context = ctx.train_pool.sample_in_context(
                class,
                k,
                &mut rng,
                Some(scene),
                class_name,
            )?;
            let samples: Vec<_> = context
                .iter()
                .map(|&(sid, co)| {
                    let r = &loaded.dataset.scenes[sid].captions[co];
                    mmicl_core::prompts::CapSample {
                        image_tokens: ctx.tokens.image_tokens[sid].clone(),
                        category: r.class_index,
                        bbox: r.bbox,
                        caption: r.caption.clone(),
                    }
                })
                .collect();
            let prefix = ctx.codec.assemble_captioning(
                &samples,
                &ctx.tokens.image_tokens[scene],
                class,
                None,
            )?;
            let generated = model.generate(
                &prefix.ids,
                ctx.codec.cap_generation_budget(),
                ids.eoc,
                &mmicl_core::model::SamplingStrategy::Greedy,
                &mut rng,
                None,
            )?;
            let (start, _) = *prefix.pair_spans.last().expect("query pair");
            let mut record_span = prefix.ids[start + 1 + ctx.codec.tokens_per_image..].to_vec();
            record_span.extend(&generated);
            let parsed = ctx.codec.parse_captioning(&record_span)?;
            println!("predicted record (scene {scene}, class '{class_name}', k={k}):");
            println!(
                "  category: {}",
                loaded.dataset.classes.name(parsed.class_index)
            );
            println!(
                "  bbox: [{:.3}, {:.3}, {:.3}, {:.3}]",
                parsed.bbox.x1, parsed.bbox.y1, parsed.bbox.x2, parsed.bbox.y2
            );
            println!("  caption: {}", parsed.caption);
            if parsed.truncated {
                println!("  (truncated before [EOC])");
            }
            println!("ground truth:");
            println!(
                "  bbox: [{:.3}, {:.3}, {:.3}, {:.3}]",
                record.bbox.x1, record.bbox.y1, record.bbox.x2, record.bbox.y2
            );
            println!("  caption: {}", record.caption);
            println!("  box iou: {:.4}", parsed.bbox.iou(&record.bbox));
        }
        other => {
            return Err(CliError::Usage(format!(
                "--task must be segmentation or captioning, got '{other}'"
            )))
        }
    }
    Ok(())
}

fn cmd_inspect(p: &Parsed) -> CliResult {
    let loaded = load_all(&p.path("data")?, &p.path("artifacts")?)?;
    let cfg = p.config()?;
    if let Some(out) = p.get("out") {
        write_snapshot(Path::new(out), &cfg).map_err(CliError::Runtime)?;
    }
    let task_name = p.require("task")?;
    let scene: usize = p
        .require("scene")?
        .parse()
        .map_err(|e| CliError::Usage(format!("bad --scene: {e}")))?;
    let class_name = p.require("class")?;
    let k = p.usize_or("k", 1)?;
    let (class, oi) = find_object(&loaded, scene, class_name)?;
    let ctx = loaded.context(&cfg, k);
    let mut rng = Rng::new(cfg.train.seed).derive(0x696e7370); // "insp"

    let seq = match task_name {
        "segmentation" => {
            let context = ctx.train_pool.sample_in_context(
                class,
                k,
                &mut rng,
                Some(scene),
                class_name,
            )?;
            let samples: Vec<_> = context
                .iter()
                .map(|&(sid, co)| mmicl_core::prompts::SegSample {
                    image_tokens: ctx.tokens.image_tokens[sid].clone(),
                    mask_tokens: ctx.tokens.mask_tokens[sid][co].clone(),
                })
                .collect();
            ctx.codec.assemble_segmentation(
                &samples,
                &ctx.tokens.image_tokens[scene],
                Some(&ctx.tokens.mask_tokens[scene][oi]),
            )?
        }
        "captioning" => {
            let record = &loaded.dataset.scenes[scene].captions[oi];
            let context = ctx.train_pool.sample_in_context(
                class,
                k,
                &mut rng,
                Some(scene),
                class_name,
            )?;
            let samples: Vec<_> = context
                .iter()
                .map(|&(sid, co)| {
                    let r = &loaded.dataset.scenes[sid].captions[co];
                    mmicl_core::prompts::CapSample {
                        image_tokens: ctx.tokens.image_tokens[sid].clone(),
                        category: r.class_index,
                        bbox: r.bbox,
                        caption: r.caption.clone(),
                    }
                })
                .collect();
            ctx.codec.assemble_captioning(
                &samples,
                &ctx.tokens.image_tokens[scene],
                class,
                Some((&record.bbox, &record.caption)),
            )?
        }
        other => {
            return Err(CliError::Usage(format!(
                "--task must be segmentation or captioning, got '{other}'"
            )))
        }
    };
    print!("{}", ctx.codec.describe(&seq));
    println!(
        "{} tokens, {} supervised, {} pairs",
        seq.len(),
        seq.supervised_count(),
        seq.pair_spans.len()
    );
    Ok(())
}
