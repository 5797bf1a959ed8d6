//! `lgmr` command-line interface: synthetic data generation, training,
//! evaluation, prediction, attention export, encoder cost comparison, the
//! random baseline, and gradient verification.

mod configfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use configfile::KvConfig;
use lgmr_core::config::ModelConfig;
use lgmr_core::error::Error;
use lgmr_core::featfile::FeatTensor;
use lgmr_core::flops::{flops_estimate, flops_ratio, EncoderKind};
use lgmr_core::metrics::{evaluate, DEFAULT_THRESHOLDS};
use lgmr_core::model::LgmrModel;
use lgmr_core::sample::{infer_fusion_spec, load_dataset_auto, load_sample};
use lgmr_core::synthetic::{
    estimate_random_baseline_miou, generate_sample, write_dataset, SyntheticSpec,
};
use lgmr_core::trainer::{
    gradient_check, load_model, train_from, Adam, TrainConfig,
};

const EXIT_SCHEMA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "lgmr",
    version,
    about = "Multi-paragraph temporal grounding: train, evaluate, and inspect local-global grounding models",
    after_help = "EXIT CODES:\n  0  success\n  2  usage error (unknown command or flag)\n  3  schema error (malformed file, bad config, invariant violation)\n  4  numeric failure (non-finite loss, gradient check above tolerance)\n\nCONFIG FILES:\n  UTF-8 key=value lines with dotted keys (model.hidden_dim=512, synth.t=120,\n  train.seed=7). '#' starts a comment. Precedence: defaults < --config file\n  < --set KEY=VALUE < dedicated flags."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-correspondence dataset tree
    GenData(GenDataArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset (writes an EvalReport JSON)
    Eval(EvalArgs),
    /// Predict per-paragraph intervals in seconds for one annotation
    Predict(PredictArgs),
    /// Export per-layer global-to-video attention maps for one annotation
    DumpAttention(DumpAttentionArgs),
    /// Compare analytic encoder cost estimates (local-global vs full attention)
    Flops(FlopsArgs),
    /// Monte-Carlo mean IoU of uniform random predictions on a dataset
    RandomBaseline(RandomBaselineArgs),
    /// Verify analytic gradients against central finite differences
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// Key-value config file (dotted keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set model.heads=4 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl CommonConfig {
    fn load(&self) -> Result<KvConfig, Error> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        kv.set_all(&self.sets)?;
        kv.check_known_keys()?;
        Ok(kv)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Output directory (annotations/ and features/ are created inside)
    #[arg(long)]
    out: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Generation seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Dataset directory (from gen-data or matching its layout)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint/output directory
    #[arg(long)]
    out: PathBuf,
    /// Training seed (overrides train.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch count (overrides model.epochs)
    #[arg(long)]
    epochs: Option<usize>,
    /// Resume from a training checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Where to write the EvalReport JSON (default: <data>/eval_report.json)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One annotation JSON file
    #[arg(long)]
    annotation: PathBuf,
    /// Optional JSON output path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    annotation: PathBuf,
    /// Output LGMRFEAT file holding a layers x N x T tensor
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlopsArgs {
    #[command(flatten)]
    common: CommonConfig,
    /// Sequence lengths to compare (repeatable)
    #[arg(long = "t", required = true)]
    t: Vec<usize>,
    /// Local window length M (overrides model.window_len)
    #[arg(long)]
    m: Option<usize>,
    /// Hidden dimension D (overrides model.hidden_dim)
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Args)]
struct RandomBaselineArgs {
    #[arg(long)]
    data: PathBuf,
    /// Monte-Carlo passes over every query
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradCheckArgs {
    #[command(flatten)]
    common: CommonConfig,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worst relative error accepted before exiting with code 4
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(EXIT_NUMERIC),
                _ => ExitCode::from(EXIT_SCHEMA),
            }
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Predict(a) => run_predict(a),
        Command::DumpAttention(a) => dump_attention(a),
        Command::Flops(a) => run_flops(a),
        Command::RandomBaseline(a) => random_baseline(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), Error> {
    let kv = a.common.load()?;
    let mut spec = SyntheticSpec::new(0, 120, 4, 64, 32);
    kv.apply_synth(&mut spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    write_dataset(&a.out, &spec, a.count)?;
    println!(
        "wrote {} samples (T={}, N={}, video_dim={}, text_dim={}, seed={}) under {}",
        a.count,
        spec.t,
        spec.n,
        spec.video_dim,
        spec.text_dim,
        spec.seed,
        a.out.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<(), Error> {
    let kv = a.common.load()?;
    let (dataset, fusion) = load_dataset_auto(&a.data)?;
    let video_dim = fusion.fused_dim();
    let text_dim = dataset[0].paragraphs[0].tokens.cols;

    let report = if let Some(resume) = &a.resume {
        let (mut model, mut tc, adam, epochs_done, step) = load_model(resume)?;
        let mut adam = adam.ok_or_else(|| {
            Error::schema("cannot resume from a parameter-only export (no optimizer state)")
        })?;
        kv.apply_model(&mut tc.model)?;
        if let Some(e) = a.epochs {
            tc.model.epochs = e;
        }
        if let Some(s) = a.seed {
            tc.seed = s;
        }
        tc.checkpoint_dir = a.out.clone();
        if let Some(e) = kv.get_usize("train.eval_every")? {
            tc.eval_every = e;
        }
        if let Some(c) = kv.get_f64("train.grad_clip")? {
            tc.grad_clip = Some(c);
        }
        println!(
            "resuming at epoch {epochs_done} (step {step}) toward {} epochs",
            tc.model.epochs
        );
        train_from(&mut model, &dataset, &tc, &mut adam, epochs_done, step)?
    } else {
        let mut cfg = ModelConfig::default();
        kv.apply_model(&mut cfg)?;
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        let seed = a.seed.or(kv.get_u64("train.seed")?).unwrap_or(0);
        let mut tc = TrainConfig::new(cfg, seed, &a.out);
        if let Some(e) = kv.get_usize("train.eval_every")? {
            tc.eval_every = e;
        }
        if let Some(c) = kv.get_f64("train.grad_clip")? {
            tc.grad_clip = Some(c);
        }
        let mut model = LgmrModel::new(tc.model.clone(), video_dim, text_dim, seed)?;
        let mut adam = Adam::new(&model.params);
        train_from(&mut model, &dataset, &tc, &mut adam, 0, 0)?
    };

    println!(
        "trained {} epochs over {} samples: final loss {:.6}",
        report.epochs_run,
        dataset.len(),
        report.final_loss
    );
    println!("metrics log: {}", report.metrics_path.display());
    println!("checkpoint:  {}", report.checkpoint_path.display());
    println!("params:      {}", report.params_path.display());
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), Error> {
    let (model, _, _, _, _) = load_model(&a.checkpoint)?;
    let (dataset, _) = load_dataset_auto(&a.data)?;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for sample in &dataset {
        preds.extend(model.predict_seconds(sample)?);
        gts.extend(sample.ground_truth.iter().copied());
    }
    let report = evaluate(&preds, &gts, &DEFAULT_THRESHOLDS)?;
    let out = a.out.unwrap_or_else(|| a.data.join("eval_report.json"));
    std::fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
    print!("{}", report.to_table("LGMR"));
    println!("report written to {}", out.display());
    Ok(())
}

fn load_single(
    checkpoint: &PathBuf,
    annotation: &PathBuf,
) -> Result<(LgmrModel, lgmr_core::SynopsisSample), Error> {
    let (model, _, _, _, _) = load_model(checkpoint)?;
    let fusion = infer_fusion_spec(annotation)?;
    let sample = load_sample(annotation, &fusion)?;
    Ok((model, sample))
}

fn run_predict(a: PredictArgs) -> Result<(), Error> {
    let (model, sample) = load_single(&a.checkpoint, &a.annotation)?;
    let intervals = model.predict_seconds(&sample)?;
    let mut rows = Vec::new();
    for (i, iv) in intervals.iter().enumerate() {
        println!("paragraph {i}\t{:.3}\t{:.3}", iv.start, iv.end);
        rows.push(serde_json::json!({
            "paragraph": i,
            "start_s": iv.start,
            "end_s": iv.end,
        }));
    }
    if let Some(out) = a.out {
        std::fs::write(
            &out,
            serde_json::to_vec_pretty(&serde_json::json!({
                "video_id": sample.video_id,
                "intervals": rows,
            }))?,
        )?;
        println!("predictions written to {}", out.display());
    }
    Ok(())
}

fn dump_attention(a: DumpAttentionArgs) -> Result<(), Error> {
    let (model, sample) = load_single(&a.checkpoint, &a.annotation)?;
    let out = model.infer(&sample)?;
    let layers = out.attention_maps.len();
    let n = sample.num_paragraphs();
    let t = sample.video.num_timesteps();
    let mut data = Vec::with_capacity(layers * n * t);
    for map in &out.attention_maps {
        data.extend(map.data.iter().map(|&v| v as f32));
    }
    let tensor = FeatTensor::new(vec![layers, n, t], data)?;
    lgmr_core::featfile::write_feat_file(&a.out, &tensor)?;
    println!(
        "wrote {layers}x{n}x{t} attention tensor to {}",
        a.out.display()
    );
    Ok(())
}

fn run_flops(a: FlopsArgs) -> Result<(), Error> {
    let kv = a.common.load()?;
    let mut cfg = ModelConfig::default();
    kv.apply_model(&mut cfg)?;
    if let Some(m) = a.m {
        cfg.window_len = m;
    }
    if let Some(d) = a.d {
        cfg.hidden_dim = d;
    }
    println!(
        "encoder cost per layer (multiply-accumulates), D={}, F={}, M={}",
        cfg.hidden_dim, cfg.ffn_dim, cfg.window_len
    );
    println!("T        | local-global   | vanilla-full   | ratio");
    println!("---------+----------------+----------------+-------");
    for &t in &a.t {
        let lg = flops_estimate(EncoderKind::LocalGlobal, t, &cfg);
        let vf = flops_estimate(EncoderKind::VanillaFull, t, &cfg);
        println!("{t:<8} | {lg:<14.4e} | {vf:<14.4e} | {:.4}", lg / vf);
    }
    if a.t.iter().all(|&t| flops_ratio(t, &cfg) < 1.0) {
        println!("local-global attention is cheaper at every requested T");
    }
    Ok(())
}

fn random_baseline(a: RandomBaselineArgs) -> Result<(), Error> {
    let (dataset, _) = load_dataset_auto(&a.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let est = estimate_random_baseline_miou(&dataset, a.trials, &mut rng)?;
    let queries: usize = dataset.iter().map(|s| s.num_paragraphs()).sum();
    println!(
        "random-baseline mIoU {est:.4} ({} samples, {queries} queries, {} trials, seed {})",
        dataset.len(),
        a.trials,
        a.seed
    );
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> Result<(), Error> {
    let kv = a.common.load()?;
    let mut cfg = ModelConfig::toy();
    kv.apply_model(&mut cfg)?;
    let mut spec = SyntheticSpec::new(a.seed, 7, 2, 6, 5);
    spec.tokens_per_paragraph = 3;
    spec.noise_sigma = 0.2;
    kv.apply_synth(&mut spec)?;
    let sample = generate_sample(&spec)?;
    let mut model = LgmrModel::new(cfg, spec.video_dim, spec.text_dim, a.seed)?;
    println!(
        "checking {} parameter scalars in double precision (step 1e-5)",
        model.params.num_scalars()
    );
    let mut worst = 0.0f64;
    for (label, lw, aw) in [
        ("localization only", 1.0, 0.0),
        ("attention only", 0.0, 1.0),
        ("full loss", 1.0, 0.2),
    ] {
        let report = gradient_check(&mut model, &sample, lw, aw)?;
        println!("{label}: worst relative error {:.3e}", report.worst);
        for (group, err) in &report.groups {
            println!("    {group:<10} {err:.3e}");
        }
        worst = worst.max(report.worst);
    }
    if worst > a.tolerance {
        return Err(Error::numeric(format!(
            "worst relative error {worst:.3e} exceeds tolerance {:.1e}",
            a.tolerance
        )));
    }
    println!("all gradients within tolerance {:.1e}", a.tolerance);
    Ok(())
}
