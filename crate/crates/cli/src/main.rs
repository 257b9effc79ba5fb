//! `mfif`: dataset synthesis, training, fusion, evaluation and experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mfif_core::experiments::{
    ablation_csv, ablation_svg, edge_study, fused_path, list_pairs, procedural_samples,
    run_variant, timing_bench, AblationOutcome, AblationVariant, EdgeStudyConfig, EvalPair,
    ExperimentConfig, RunRecord,
};
use mfif_core::fusion::{fuse_pair_end_to_end, load_generator};
use mfif_core::metrics::{evaluate_all, MetricReport};
use mfif_core::raster::io::{load_image, save_focus_map, save_image, save_soft_map};
use mfif_core::synth::{
    build_dataset, load_dataset, save_sample, write_manifest, SynthesisMode, TrainingSample,
};
use mfif_core::training::{train, TrainRun};
use mfif_core::Image;

#[derive(Parser, Debug)]
#[command(name = "mfif", version, about = "Multi-focus image fusion lab")]
struct Cli {
    /// Seed overriding every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON experiment configuration (sections: synthesis, network, train, fusion).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (for `eval`, a `.csv` path is also accepted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize training pairs from a segmentation corpus or procedural scenes.
    Synth(SynthArgs),
    /// Train the generator/critic pair on a synthesized dataset.
    Train(TrainArgs),
    /// Fuse one source pair (or every pair in a directory).
    Fuse(FuseArgs),
    /// Score fused images against their sources with the twelve metrics.
    Eval(EvalArgs),
    /// Grow/shrink final focus maps by k pixels and score each fusion.
    EdgeStudy(EdgeArgs),
    /// Train and score the ablation variants.
    Ablate(AblateArgs),
    /// Time the fusion stages over a set of pairs.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    AlphaMatte,
    Conventional,
}

impl From<ModeArg> for SynthesisMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::AlphaMatte => SynthesisMode::AlphaMatte,
            ModeArg::Conventional => SynthesisMode::Conventional,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Corpus directory with `images/` and `masks/`.
    #[arg(
        long,
        conflicts_with = "procedural",
        required_unless_present = "procedural"
    )]
    corpus: Option<PathBuf>,
    /// Generate this many procedural scenes instead of reading a corpus.
    #[arg(long)]
    procedural: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Crop size (overrides the configuration).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(
        long,
        conflicts_with = "procedural",
        required_unless_present = "procedural"
    )]
    data: Option<PathBuf>,
    /// Train on this many procedural samples at the network resolution.
    #[arg(long)]
    procedural: Option<usize>,
    /// Number of generator updates (overrides the configuration).
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long, requires = "b", conflicts_with = "pairs")]
    a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    b: Option<PathBuf>,
    /// Directory of `<id>_a.png`/`<id>_b.png` pairs.
    #[arg(long, required_unless_present = "a")]
    pairs: Option<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Directory with `<id>.png` or `<id>_fused.png` per pair.
    #[arg(long)]
    fused: PathBuf,
}

#[derive(Args, Debug)]
struct EdgeArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Comma-separated boundary shifts.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = vec![-4, -2, 0, 2, 4])]
    k: Vec<i32>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Comma-separated variant ids (default: all).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Corpus (`images/` + `masks/`) for training data; procedural scenes otherwise.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of procedural training samples.
    #[arg(long, default_value_t = 8)]
    train_count: usize,
    /// Evaluation pairs directory; held-out procedural pairs otherwise.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Number of held-out procedural evaluation pairs.
    #[arg(long, default_value_t = 4)]
    eval_count: usize,
    /// Number of generator updates per variant (overrides the configuration).
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

struct RunContext {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    args: Vec<String>,
}

impl RunContext {
    fn record(&self, command: &str, dir: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config)?;
        RunRecord::new(command, self.seed, config, self.args.clone()).write(dir)?;
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_pairs(dir: &Path) -> Result<Vec<(String, Image, Image)>> {
    list_pairs(dir)?
        .into_iter()
        .map(|p| {
            let (a, b) = p.load()?;
            Ok((p.id, a, b))
        })
        .collect()
}

fn cmd_synth(ctx: &RunContext, args: &SynthArgs) -> Result<()> {
    let mut cfg = ctx.config.synthesis.clone();
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = args.size {
        cfg.crop_size = s;
    }
    let rows = match (&args.corpus, args.procedural) {
        (Some(corpus), _) => build_dataset(corpus, &ctx.out, &cfg)?,
        (None, Some(n)) => {
            let samples = procedural_samples(n, cfg.crop_size, &cfg)?;
            let rows = samples
                .iter()
                .enumerate()
                .map(|(i, s)| save_sample(&ctx.out, &format!("scene_{i:05}"), cfg.mode, s))
                .collect::<mfif_core::Result<Vec<_>>>()?;
            write_manifest(&ctx.out, &rows)?;
            rows
        }
        (None, None) => bail!("either --corpus or --procedural is required"),
    };
    info!("wrote {} samples to {}", rows.len(), ctx.out.display());
    let mut ctx_cfg = ctx.config.clone();
    ctx_cfg.synthesis = cfg;
    RunRecord::new(
        "synth",
        ctx.seed,
        serde_json::to_value(&ctx_cfg)?,
        ctx.args.clone(),
    )
    .write(&ctx.out)?;
    Ok(())
}

fn cmd_train(ctx: &RunContext, args: &TrainArgs) -> Result<()> {
    let mut cfg = ctx.config.clone();
    if let Some(s) = args.steps {
        cfg.train.total_steps = s;
    }
    let samples: Vec<TrainingSample> = match (&args.data, args.procedural) {
        (Some(dir), _) => load_dataset(dir)?.into_iter().map(|(_, s)| s).collect(),
        (None, Some(n)) => procedural_samples(n, cfg.network.resolution, &cfg.synthesis)?,
        (None, None) => bail!("either --data or --procedural is required"),
    };
    let run = TrainRun {
        out_dir: Some(ctx.out.clone()),
        meta: serde_json::json!({ "command": "train" }),
    };
    let outcome = train(&samples, &cfg.network, &cfg.train, &run)?;
    info!(
        "finished after {} generator steps; checkpoint in {}",
        outcome.steps,
        ctx.out.display()
    );
    RunRecord::new(
        "train",
        ctx.seed,
        serde_json::to_value(&cfg)?,
        ctx.args.clone(),
    )
    .write(&ctx.out)?;
    Ok(())
}

fn cmd_fuse(ctx: &RunContext, args: &FuseArgs) -> Result<()> {
    let generator = load_generator(&args.ckpt)?;
    let opts = ctx.config.fusion;
    if let (Some(a), Some(b)) = (&args.a, &args.b) {
        let res = fuse_pair_end_to_end(&load_image(a)?, &load_image(b)?, &generator, &opts)?;
        save_image(&res.fused, &ctx.out.join("fused.png"))?;
        save_focus_map(&res.focus_map_final, &ctx.out.join("focus_map.png"))?;
        save_soft_map(&res.focus_map_raw, &ctx.out.join("focus_map_raw.png"))?;
        write_text(
            &ctx.out.join("timing.json"),
            &(serde_json::to_string_pretty(&res.timing)? + "\n"),
        )?;
    } else if let Some(dir) = &args.pairs {
        let mut timings = serde_json::Map::new();
        for (id, a, b) in load_pairs(dir)? {
            let res = fuse_pair_end_to_end(&a, &b, &generator, &opts)?;
            save_image(&res.fused, &ctx.out.join(format!("{id}.png")))?;
            save_focus_map(
                &res.focus_map_final,
                &ctx.out.join("maps").join(format!("{id}.png")),
            )?;
            timings.insert(id, serde_json::to_value(res.timing)?);
        }
        write_text(
            &ctx.out.join("timing.json"),
            &(serde_json::to_string_pretty(&timings)? + "\n"),
        )?;
    }
    info!("fusion written to {}", ctx.out.display());
    ctx.record("fuse", &ctx.out)
}

fn cmd_eval(ctx: &RunContext, args: &EvalArgs) -> Result<()> {
    let csv_path = if ctx
        .out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        ctx.out.clone()
    } else {
        ctx.out.join("report.csv")
    };
    let mut csv = MetricReport::csv_header("image") + "\n";
    let mut reports = Vec::new();
    let mut json = serde_json::Map::new();
    for pair in list_pairs(&args.pairs)? {
        let (a, b) = pair.load()?;
        let fused = load_image(&fused_path(&args.fused, &pair.id)?)?;
        let report =
            evaluate_all(&a, &b, &fused).with_context(|| format!("scoring {}", pair.id))?;
        csv += &(report.csv_row(&pair.id) + "\n");
        json.insert(pair.id.clone(), serde_json::to_value(report)?);
        reports.push(report);
    }
    let mean = MetricReport::mean(&reports).context("no pairs to score")?;
    csv += &(mean.csv_row("mean") + "\n");
    write_text(&csv_path, &csv)?;
    let dir = csv_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let summary = serde_json::json!({ "images": json, "mean": mean.to_json() });
    write_text(
        &dir.join("report.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    info!("scored {} pairs into {}", reports.len(), csv_path.display());
    ctx.record("eval", &dir)
}

fn cmd_edge(ctx: &RunContext, args: &EdgeArgs) -> Result<()> {
    let generator = load_generator(&args.ckpt)?;
    let cfg = EdgeStudyConfig {
        k_values: args.k.clone(),
        fusion: ctx.config.fusion,
    };
    let result = edge_study(&load_pairs(&args.pairs)?, &generator, &cfg)?;
    result.write(&ctx.out)?;
    for (m, k) in result.best_k() {
        info!("{m}: best at k = {k}");
    }
    ctx.record("edge-study", &ctx.out)
}

fn cmd_ablate(ctx: &RunContext, args: &AblateArgs) -> Result<()> {
    let variants: Vec<AblationVariant> = if args.variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        args.variants
            .iter()
            .map(|v| v.parse())
            .collect::<mfif_core::Result<_>>()?
    };
    let mut base = ctx.config.clone();
    if let Some(s) = args.steps {
        base.train.total_steps = s;
    }
    let resolution = base.network.resolution;
    let eval: Vec<EvalPair> = match &args.pairs {
        Some(dir) => load_pairs(dir)?
            .into_iter()
            .map(|(id, a, b)| EvalPair {
                id,
                a,
                b,
                reference: None,
            })
            .collect(),
        None => {
            let mut held_out = base.synthesis.clone();
            held_out.mode = SynthesisMode::AlphaMatte;
            held_out.seed = held_out.seed.wrapping_add(1);
            procedural_samples(args.eval_count, resolution, &held_out)?
                .into_iter()
                .enumerate()
                .map(|(i, s)| EvalPair {
                    id: format!("heldout_{i:03}"),
                    a: s.source_a,
                    b: s.source_b,
                    reference: Some(s.focus_map),
                })
                .collect()
        }
    };
    let corpus = args.corpus.clone();
    let data_root = ctx.out.join("data");
    let train_count = args.train_count;
    let training_data =
        move |synth: &mfif_core::synth::SynthesisConfig| -> mfif_core::Result<Vec<TrainingSample>> {
            match &corpus {
                Some(c) => {
                    let mut cfg = synth.clone();
                    cfg.crop_size = resolution;
                    let dir = data_root.join(cfg.mode.as_str());
                    build_dataset(c, &dir, &cfg)?;
                    Ok(load_dataset(&dir)?.into_iter().map(|(_, s)| s).collect())
                }
                None => procedural_samples(train_count, resolution, synth),
            }
        };
    let mut outcomes: Vec<AblationOutcome> = Vec::new();
    for v in variants {
        let o = run_variant(v, &base, &training_data, &eval, Some(&ctx.out))?;
        info!(
            "{v}: MI {:.4}, Q_Y {:.4}, IoU {:?}",
            o.report.get(mfif_core::metrics::MetricId::Mi),
            o.report.get(mfif_core::metrics::MetricId::QY),
            o.mean_iou
        );
        outcomes.push(o);
    }
    write_text(&ctx.out.join("ablation.csv"), &ablation_csv(&outcomes))?;
    write_text(&ctx.out.join("ablation.svg"), &ablation_svg(&outcomes))?;
    write_text(
        &ctx.out.join("ablation.json"),
        &(serde_json::to_string_pretty(&outcomes)? + "\n"),
    )?;
    ctx.record("ablate", &ctx.out)
}

fn cmd_bench(ctx: &RunContext, args: &BenchArgs) -> Result<()> {
    let generator = load_generator(&args.ckpt)?;
    let table = timing_bench(
        &load_pairs(&args.pairs)?,
        &generator,
        &ctx.config.fusion,
        args.repeats,
    )?;
    write_text(&ctx.out.join("timing.csv"), &table.to_csv())?;
    write_text(
        &ctx.out.join("timing.json"),
        &(serde_json::to_string_pretty(&table)? + "\n"),
    )?;
    let m = table.mean();
    info!(
        "mean per pair over {} pairs: map {:.4}s, post {:.4}s, fusion {:.4}s, total {:.4}s",
        table.pairs, m.map_generation, m.post_processing, m.fusion, m.total
    );
    ctx.record("bench", &ctx.out)
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    config.validate()?;
    let default_out = match &cli.command {
        Command::Synth(_) => "out/synth",
        Command::Train(_) => "out/train",
        Command::Fuse(_) => "out/fuse",
        Command::Eval(_) => "out/eval",
        Command::EdgeStudy(_) => "out/edge_study",
        Command::Ablate(_) => "out/ablate",
        Command::Bench(_) => "out/bench",
    };
    let ctx = RunContext {
        seed: config.train.seed,
        config,
        out: cli
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(default_out)),
        args,
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Fuse(a) => cmd_fuse(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::EdgeStudy(a) => cmd_edge(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
