//! `amdmil`: generate synthetic bag datasets, train and evaluate aggregator
//! variants, run the ablation matrix and agent-count sweeps, gradient-check
//! every backward pass, export attention scores, and benchmark dense versus
//! agent attention scaling.
//!
//! Exit codes: 0 success, 1 configuration/usage errors, 2 numeric failures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use amd_mil::aggregators::{amd_forward, self_attention_dense, AggregatorParams, ThresholdMode};
use amd_mil::error::{Error, Result};
use amd_mil::harness::{
    ablation_suite, ablation_table_csv, agent_count_sweep, evaluate, export_attention,
    gradcheck_variant, sweep_table_csv, train_with_models, RunRecord, TrainConfig,
};
use amd_mil::mil::{AggregatorVariant, Bag, ModelParams};
use amd_mil::numerics::{load_checkpoint, save_checkpoint, Matrix, Rng};
use amd_mil::synthdata::{generate_dataset, load_bags, save_bags, split_folds, DatasetConfig};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "amdmil",
    version,
    about = "attention aggregators for multiple-instance classification",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-instance dataset.
    Generate(GenerateArgs),
    /// Train one aggregator variant with k-fold cross-validation.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the five-row component ablation matrix.
    Ablate(AblateArgs),
    /// Train once per agent-token count.
    Sweep(SweepArgs),
    /// Export per-instance attention scores for one bag.
    Attention(AttentionArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time dense vs agent attention over sequence lengths.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    num_bags: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    n_min: usize,
    #[arg(long, default_value_t = 200)]
    n_max: usize,
    #[arg(long, default_value_t = 0.05)]
    witness_rate: f64,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_std: f64,
}

/// Flags mirror `TrainConfig` fields one-to-one; a JSON config file provides
/// the base and explicit flags win.
#[derive(Args, Clone)]
struct TrainOpts {
    /// JSON file holding a TrainConfig.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    aggregator: Option<AggregatorVariant>,
    #[arg(long)]
    n_agents: Option<usize>,
    #[arg(long)]
    landmarks: Option<usize>,
    #[arg(long)]
    nystrom_iters: Option<usize>,
    #[arg(long, value_parser = parse_threshold_mode)]
    threshold_mode: Option<ThresholdMode>,
    #[arg(long)]
    cnn_groups: Option<usize>,
    #[arg(long)]
    raw_eq13: Option<bool>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    stratified: Option<bool>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_threshold_mode(s: &str) -> std::result::Result<ThresholdMode, String> {
    match s {
        "linear" => Ok(ThresholdMode::Linear),
        "mean" => Ok(ThresholdMode::Mean),
        "cnn" => Ok(ThresholdMode::Cnn),
        other => Err(format!(
            "unknown threshold mode '{other}' (linear|mean|cnn)"
        )),
    }
}

impl TrainOpts {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_slice(&fs::read(path)?)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.aggregator {
            cfg.aggregator = v;
            cfg.ablation_flags = None;
        }
        if let Some(v) = self.n_agents {
            cfg.n_agents = v;
        }
        if let Some(v) = self.landmarks {
            cfg.landmarks = v;
        }
        if let Some(v) = self.nystrom_iters {
            cfg.nystrom_iters = v;
        }
        if let Some(v) = self.threshold_mode {
            cfg.threshold_mode = v;
        }
        if let Some(v) = self.cnn_groups {
            cfg.cnn_groups = v;
        }
        if let Some(v) = self.raw_eq13 {
            cfg.raw_eq13 = v;
        }
        if let Some(v) = self.early_stop_patience {
            cfg.early_stop_patience = v;
        }
        if let Some(v) = self.folds {
            cfg.folds = v;
        }
        if let Some(v) = self.stratified {
            cfg.stratified = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config echo written by the training run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Agent-token counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32])]
    counts: Vec<usize>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct AttentionArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Bag id to export.
    #[arg(long)]
    bag: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Variant to check, or every attention variant when omitted.
    #[arg(long)]
    variant: Option<AggregatorVariant>,
    #[arg(long = "instances", short = 'N', default_value_t = 7)]
    instances: usize,
    #[arg(long = "dim", short = 'D', default_value_t = 8)]
    dim: usize,
    #[arg(long = "agents", short = 'n', default_value_t = 4)]
    agents: usize,
    #[arg(long = "landmarks", short = 'm', default_value_t = 4)]
    landmarks: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 99)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [512usize, 1024, 2048, 4096])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    agents: usize,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Parse argv and dispatch. All output paths live under the designated
/// output directory; inputs are never mutated.
pub fn run(args: impl IntoIterator<Item = String>) -> Result<()> {
    let cli = Cli::try_parse_from(args).map_err(|e| {
        // clap renders its own usage text
        let _ = e.print();
        Error::Config("could not parse arguments".into())
    })?;
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Attention(args) => cmd_attention(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = DatasetConfig {
        seed: args.seed,
        num_bags: args.num_bags,
        feature_dim: args.dim,
        n_range: (args.n_min, args.n_max),
        witness_rate: args.witness_rate,
        class_count: args.classes,
        separation: args.separation,
        noise_std: args.noise_std,
    };
    let bags = generate_dataset::<f32>(&cfg)?;
    let manifest = save_bags(&bags, &cfg, &args.out)?;
    println!("wrote {} bags to {}", bags.len(), manifest.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<Bag<f32>>> {
    let (_, bags) = load_bags::<f32>(path)?;
    Ok(bags)
}

fn losses_csv(record: &RunRecord) -> String {
    let mut out = String::from("fold,epoch,loss\n");
    for fold in &record.folds {
        for (epoch, loss) in fold.losses.iter().enumerate() {
            out.push_str(&format!("{},{},{:.8}\n", fold.fold, epoch, loss));
        }
    }
    out
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.opts.resolve()?;
    let bags = load_dataset(&args.data)?;
    let plan = split_folds(&bags, cfg.folds, cfg.seed, cfg.stratified)?;
    let (record, models) = train_with_models(&bags, &plan, &cfg)?;

    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    write_json(&args.out.join("folds.json"), &plan)?;
    write_json(&args.out.join("run.json"), &record)?;
    fs::write(args.out.join("losses.csv"), losses_csv(&record))?;
    for (fold, model) in models.iter().enumerate() {
        save_checkpoint(
            &args.out.join(format!("fold{fold}.amdc")),
            &model.checkpoint_tensors(),
        )?;
    }
    println!(
        "{}: AUC {:.4} ± {:.4}, ACC {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4}",
        record.variant,
        record.mean.auc,
        record.std.auc,
        record.mean.acc,
        record.std.acc,
        record.mean.macro_f1,
        record.std.macro_f1
    );
    println!("results in {}", args.out.display());
    Ok(())
}

fn load_model(
    checkpoint: &Path,
    config: &Path,
) -> Result<(TrainConfig, AggregatorVariant, ModelParams<f32>)> {
    let cfg: TrainConfig = serde_json::from_slice(&fs::read(config)?)?;
    let variant = cfg.resolve_variant()?;
    let tensors = load_checkpoint::<f32>(checkpoint)?;
    let params = ModelParams::from_checkpoint(variant, tensors)?;
    Ok((cfg, variant, params))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (cfg, variant, params) = load_model(&args.checkpoint, &args.config)?;
    let bags = load_dataset(&args.data)?;
    if bags.is_empty() {
        return Err(Error::Domain("eval: dataset is empty".into()));
    }
    let acfg = cfg.attention_config(bags[0].feature_dim());
    let refs: Vec<&Bag<f32>> = bags.iter().collect();
    let report = evaluate(&refs, variant, &params, &acfg)?;
    let summary = serde_json::json!({
        "variant": variant.name(),
        "bags": refs.len(),
        "acc": report.acc,
        "macro_f1": report.macro_f1,
        "auc": report.auc,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("eval.json"), &summary)?;
        write_json(&out.join("config.json"), &cfg)?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.opts.resolve()?;
    let bags = load_dataset(&args.data)?;
    let plan = split_folds(&bags, cfg.folds, cfg.seed, cfg.stratified)?;
    let records = ablation_suite(&bags, &plan, &cfg)?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    write_json(&args.out.join("ablation.json"), &records)?;
    let csv = ablation_table_csv(&records);
    fs::write(args.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.opts.resolve()?;
    let bags = load_dataset(&args.data)?;
    let plan = split_folds(&bags, cfg.folds, cfg.seed, cfg.stratified)?;
    let records = agent_count_sweep(&bags, &plan, &cfg, &args.counts)?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;
    write_json(&args.out.join("sweep.json"), &records)?;
    let csv = sweep_table_csv(&records);
    fs::write(args.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_attention(args: AttentionArgs) -> Result<()> {
    let (cfg, variant, params) = load_model(&args.checkpoint, &args.config)?;
    let bags = load_dataset(&args.data)?;
    let bag = bags
        .iter()
        .find(|b| b.id == args.bag)
        .ok_or_else(|| Error::Config(format!("bag '{}' not in dataset", args.bag)))?;
    let acfg = cfg.attention_config(bag.feature_dim());
    export_attention(&params, variant, &acfg, bag, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let variants: Vec<AggregatorVariant> = match args.variant {
        Some(v) => vec![v],
        None => vec![
            AggregatorVariant::Dense,
            AggregatorVariant::Nystrom,
            AggregatorVariant::PoolingAgent,
            AggregatorVariant::TrainableAgent,
            AggregatorVariant::Amd,
        ],
    };
    let mut cfg = amd_mil::AttentionConfig::new(args.dim);
    cfg.agent_count = args.agents;
    cfg.landmark_count = args.landmarks;
    cfg.cnn_groups = if args.dim.is_multiple_of(4) { 4 } else { 1 };
    let mut worst: f64 = 0.0;
    for variant in variants {
        let report = gradcheck_variant(variant, args.instances, &cfg, args.classes, args.seed)?;
        for (name, err) in &report.per_param {
            println!("{variant:>16} {name:<12} max rel error {err:.3e}");
            worst = worst.max(*err);
        }
    }
    println!("worst: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})");
    if worst > GRADCHECK_TOLERANCE {
        return Err(Error::Numeric(format!(
            "gradient check failed: {worst:.3e} > {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    Ok(())
}

fn median_time_ms(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.sizes.is_empty() || args.runs == 0 {
        return Err(Error::Config("bench needs sizes and runs >= 1".into()));
    }
    let mut rng = Rng::new(args.seed);
    let mut acfg = amd_mil::AttentionConfig::new(args.dim);
    acfg.agent_count = args.agents;
    acfg.cnn_groups = 1;
    let params = AggregatorParams::<f32>::init(&acfg, 2, &mut rng);

    let mut csv = String::from("variant,tokens,median_ms\n");
    let mut medians: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for &n in &args.sizes {
        let h = Matrix::<f32>::new(
            n,
            args.dim,
            (0..n * args.dim).map(|_| rng.normal() as f32).collect(),
        )?;
        let (q, k, v) = amd_mil::aggregators::qkv_project(&h, &params)?;

        let mut dense_times = Vec::with_capacity(args.runs);
        for _ in 0..args.runs {
            let t0 = Instant::now();
            let out = self_attention_dense(&q, &k, &v)?;
            dense_times.push(t0.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
        let mut amd_times = Vec::with_capacity(args.runs);
        for _ in 0..args.runs {
            let t0 = Instant::now();
            let out = amd_forward(&h, &params, &acfg, true)?;
            amd_times.push(t0.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out.0.out);
        }
        let dense_ms = median_time_ms(dense_times);
        let amd_ms = median_time_ms(amd_times);
        medians.insert(("dense", n), dense_ms);
        medians.insert(("amd", n), amd_ms);
        csv.push_str(&format!("dense,{n},{dense_ms:.3}\n"));
        csv.push_str(&format!("amd,{n},{amd_ms:.3}\n"));
        println!("tokens {n:>6}: dense {dense_ms:>10.2} ms  amd {amd_ms:>10.2} ms");
    }
    for pair in args.sizes.windows(2) {
        let (small, large) = (pair[0], pair[1]);
        let dense_ratio = medians[&("dense", large)] / medians[&("dense", small)];
        let amd_ratio = medians[&("amd", large)] / medians[&("amd", small)];
        println!("{small} -> {large}: dense x{dense_ratio:.2}, amd x{amd_ratio:.2}");
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("bench.csv"), &csv)?;
    write_json(
        &args.out.join("config.json"),
        &serde_json::json!({
            "sizes": args.sizes,
            "dim": args.dim,
            "agents": args.agents,
            "runs": args.runs,
            "seed": args.seed,
        }),
    )?;
    Ok(())
}
