//! `langda`: drives the full pipeline from the shell. Every failure exits
//! nonzero with a stage-tagged message on stderr; remote providers are
//! configured exclusively through `LANGDA_*` environment variables so
//! command lines stay free of credentials.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use langda::captions::{
    caption_bank_load, caption_bank_store, caption_stats, class_names_from_mask, CaptionMode,
    CaptionPipeline, HttpChatClient, HttpChatConfig, LlmClient, MockLlm, MockVlm, Provider,
    Tokenizer, VlmClient,
};
use langda::config::{load_preset, load_train_config};
use langda::embedding::{
    bank_load, bank_store, build_embedding_bank, HashEncoder, RemoteEncoder, TextEncoder,
    DEFAULT_EMBED_DIM,
};
use langda::engine::{evaluate_bundle, train};
use langda::experiment::{builtin_preset, run_experiment};
use langda::network::checkpoint::load_checkpoint;
use langda::plots::emit_plots;
use langda::scene::{
    build_dataset, default_street_spec, export_dataset, load_dataset, DomainShift,
};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "langda",
    version,
    about = "Language-guided domain adaptation for semantic segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic dataset construction.
    Scene {
        #[command(subcommand)]
        command: SceneCommand,
    },
    /// Caption generation, refinement, and statistics.
    Captions {
        #[command(subcommand)]
        command: CaptionsCommand,
    },
    /// Encode a caption bank into an embedding bank.
    Embed(EmbedArgs),
    /// Train the student/teacher pair on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on the held-out target masks.
    Eval(EvalArgs),
    /// Render charts for a finished run directory.
    Plot(PlotArgs),
    /// Multi-seed experiment presets.
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
}

#[derive(Subcommand)]
enum SceneCommand {
    /// Generate a paired source/target dataset from a scene spec file.
    Build(SceneBuildArgs),
}

#[derive(Args)]
struct SceneBuildArgs {
    /// TOML file with height, width, n_source, n_target, seed, [shift].
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

/// Scene spec file schema. The shift table defaults to the neutral
/// (identity) shift.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneBuildSpec {
    height: usize,
    width: usize,
    n_source: usize,
    n_target: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "DomainShift::neutral")]
    shift: DomainShift,
}

#[derive(Subcommand)]
enum CaptionsCommand {
    /// Describe every image on one side of a dataset and refine the
    /// descriptions under the token budget.
    Generate(CaptionsGenerateArgs),
    /// Re-run the refinement stage over an existing caption bank.
    Refine(CaptionsRefineArgs),
    /// Print token statistics for a caption bank as JSON.
    Stats(CaptionsStatsArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Side {
    Source,
    Target,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CaptionProvider {
    /// Offline deterministic mock (no network).
    TemplateMock,
    /// Remote VLM and LLM endpoints; set LANGDA_VLM_ENDPOINT,
    /// LANGDA_VLM_MODEL, LANGDA_LLM_ENDPOINT, LANGDA_LLM_MODEL, and
    /// optionally LANGDA_API_TOKEN.
    Http,
}

#[derive(Args)]
struct CaptionsGenerateArgs {
    /// Dataset directory produced by `scene build`.
    #[arg(long)]
    data: PathBuf,
    /// Output caption bank (JSON lines). Existing records are reused as a
    /// cache.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Side::Source)]
    side: Side,
    #[arg(long, value_enum, default_value_t = CaptionProvider::TemplateMock)]
    provider: CaptionProvider,
}

#[derive(Args)]
struct CaptionsRefineArgs {
    /// Caption bank to refine.
    #[arg(long)]
    bank: PathBuf,
    /// Output path; defaults to rewriting the input bank.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CaptionProvider::TemplateMock)]
    provider: CaptionProvider,
}

#[derive(Args)]
struct CaptionsStatsArgs {
    #[arg(long)]
    bank: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EmbedBackend {
    /// Deterministic offline hashing encoder.
    Hash,
    /// Remote encoder endpoint; set LANGDA_EMBED_ENDPOINT.
    Remote,
}

#[derive(Args)]
struct EmbedArgs {
    /// Caption bank to encode.
    #[arg(long)]
    bank: PathBuf,
    /// Output embedding bank (binary).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EMBED_DIM)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = EmbedBackend::Hash)]
    backend: EmbedBackend,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config TOML.
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Embedding bank for the language loss; omit to train without it.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Run directory for metrics, checkpoints, and reports.
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run a preset: a built-in name (langda, baseline, class-prompt,
    /// pixel-align) or a path to a preset TOML file.
    Run(ExperimentRunArgs),
}

#[derive(Args)]
struct ExperimentRunArgs {
    preset: String,
    /// Root directory for experiment outputs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn env_var(name: &str) -> Result<String> {
    std::env::var(name).map_err(|_| anyhow!("environment variable {name} is not set"))
}

fn http_chat(endpoint_var: &str, model_var: &str) -> Result<HttpChatClient> {
    Ok(HttpChatClient::new(HttpChatConfig {
        endpoint: env_var(endpoint_var)?,
        model: env_var(model_var)?,
        auth_token: std::env::var("LANGDA_API_TOKEN").ok(),
    }))
}

fn scene_build(args: &SceneBuildArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let spec: SceneBuildSpec =
        toml::from_str(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    let scene = default_street_spec(spec.height, spec.width, spec.seed);
    let bundle = build_dataset(&scene, spec.n_source, spec.n_target, &spec.shift, spec.seed)?;
    export_dataset(&bundle, &args.out)?;
    println!(
        "wrote {} source + {} target images ({}x{}, {} classes) to {}",
        bundle.source.len(),
        bundle.target.len(),
        bundle.height,
        bundle.width,
        bundle.class_set.len(),
        args.out.display()
    );
    Ok(())
}

fn captions_generate(args: &CaptionsGenerateArgs) -> Result<()> {
    let bundle = load_dataset(&args.data)?;
    let (mode, caption_side_masks): (CaptionMode, Vec<(&str, Option<&_>)>) = match args.side {
        Side::Source => (
            CaptionMode::SourceGrounded,
            bundle
                .source
                .iter()
                .map(|s| (s.id.as_str(), s.mask.as_ref()))
                .collect(),
        ),
        Side::Target => (
            CaptionMode::TargetUnconditioned,
            bundle
                .target
                .iter()
                .zip(&bundle.target_eval)
                .map(|(s, m)| (s.id.as_str(), Some(m)))
                .collect(),
        ),
    };
    let (vlm, llm, provider): (Box<dyn VlmClient>, Box<dyn LlmClient>, Provider) =
        match args.provider {
            CaptionProvider::TemplateMock => {
                let mut vlm = MockVlm::new(bundle.class_set.clone());
                for (id, mask) in &caption_side_masks {
                    if let Some(mask) = mask {
                        vlm.register(id, (*mask).clone());
                    }
                }
                (Box::new(vlm), Box::new(MockLlm), Provider::TemplateMock)
            }
            CaptionProvider::Http => (
                Box::new(http_chat("LANGDA_VLM_ENDPOINT", "LANGDA_VLM_MODEL")?),
                Box::new(http_chat("LANGDA_LLM_ENDPOINT", "LANGDA_LLM_MODEL")?),
                Provider::VlmLlm,
            ),
        };
    let mut pipeline = CaptionPipeline::new(vlm, llm, Tokenizer::Whitespace, mode, provider);
    if args.out.exists() {
        let existing = caption_bank_load(&args.out)?;
        pipeline.prime_cache(&existing);
    }
    let mut records = Vec::new();
    for (id, mask) in &caption_side_masks {
        let names = match (args.side, mask) {
            (Side::Source, Some(mask)) => class_names_from_mask(mask, &bundle.class_set),
            _ => Vec::new(),
        };
        records.push(pipeline.caption_image(id, &names)?);
    }
    caption_bank_store(&records, &args.out)?;
    println!(
        "captioned {} images ({} cache hits, {} vlm calls) -> {}",
        records.len(),
        pipeline.stats.cache_hits,
        pipeline.stats.vlm_calls,
        args.out.display()
    );
    Ok(())
}

fn captions_refine(args: &CaptionsRefineArgs) -> Result<()> {
    let mut records = caption_bank_load(&args.bank)?;
    if records.is_empty() {
        bail!("caption bank {} is empty", args.bank.display());
    }
    let llm: Box<dyn LlmClient> = match args.provider {
        CaptionProvider::TemplateMock => Box::new(MockLlm),
        CaptionProvider::Http => Box::new(http_chat("LANGDA_LLM_ENDPOINT", "LANGDA_LLM_MODEL")?),
    };
    // The VLM stage is never invoked during refinement; an empty mock
    // satisfies the pipeline constructor.
    let mut pipeline = CaptionPipeline::new(
        Box::new(MockVlm::new(Vec::new())),
        llm,
        Tokenizer::Whitespace,
        CaptionMode::SourceGrounded,
        Provider::TemplateMock,
    );
    let tokenizer = Tokenizer::Whitespace;
    let mut changed = 0usize;
    for record in &mut records {
        // Records from target-mode captioning carry no class list and take
        // the unconditioned refinement prompt.
        pipeline.mode = if record.class_names.is_empty() {
            CaptionMode::TargetUnconditioned
        } else {
            CaptionMode::SourceGrounded
        };
        let (refined, truncated) =
            pipeline.refine_caption(&record.class_names, &record.raw_caption)?;
        if refined != record.refined_caption {
            changed += 1;
        }
        record.refined_tokens = tokenizer.count(&refined);
        record.refined_caption = refined;
        record.truncated = truncated;
    }
    let out = args.out.as_ref().unwrap_or(&args.bank);
    caption_bank_store(&records, out)?;
    println!(
        "refined {} records ({changed} changed) -> {}",
        records.len(),
        out.display()
    );
    Ok(())
}

fn captions_stats(args: &CaptionsStatsArgs) -> Result<()> {
    let records = caption_bank_load(&args.bank)?;
    let stats = caption_stats(&records)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn embed(args: &EmbedArgs) -> Result<()> {
    let records = caption_bank_load(&args.bank)?;
    let encoder: Box<dyn TextEncoder> = match args.backend {
        EmbedBackend::Hash => Box::new(HashEncoder::new(args.dim)),
        EmbedBackend::Remote => Box::new(RemoteEncoder::new(
            &env_var("LANGDA_EMBED_ENDPOINT")?,
            args.dim,
        )),
    };
    let bank = build_embedding_bank(&records, encoder.as_ref())?;
    bank_store(&bank, &args.out)?;
    println!(
        "encoded {} captions at dim {} -> {}",
        records.len(),
        args.dim,
        args.out.display()
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let config = load_train_config(&args.config)?;
    let bundle = load_dataset(&args.data)?;
    let bank = match &args.embeddings {
        Some(path) => Some(bank_load(path)?),
        None => None,
    };
    let out = train(&bundle, bank.as_ref(), &config, Some(&args.run_dir))?;
    if let Some(last) = out.history.last() {
        println!(
            "finished {} steps: L_S {:.4}, L_T {:.4}, L_p {:.4}",
            out.history.len(),
            last.l_s,
            last.l_t,
            last.l_p
        );
    }
    for warning in &out.warnings {
        eprintln!("warning: {warning}");
    }
    if let Some(eval) = &out.eval {
        println!("target mIoU: {:.2}", eval.miou);
    }
    println!("run artifacts in {}", args.run_dir.display());
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let bundle = load_dataset(&args.data)?;
    let report = evaluate_bundle(&model.student, &bundle)?;
    print!("{}", report.render_table());
    Ok(())
}

fn plot_cmd(args: &PlotArgs) -> Result<()> {
    let written = emit_plots(&args.run_dir)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn experiment_run(args: &ExperimentRunArgs) -> Result<()> {
    let preset = match builtin_preset(&args.preset) {
        Some(preset) => preset,
        None => {
            let path = Path::new(&args.preset);
            if !path.exists() {
                bail!(
                    "{} is neither a built-in preset (langda, baseline, class-prompt, \
                     pixel-align) nor a preset file",
                    args.preset
                );
            }
            load_preset(path)?
        }
    };
    let summary = run_experiment(&preset, &args.out)?;
    for run in &summary.per_seed {
        println!("seed {}: target mIoU {:.2}", run.seed, run.target_miou);
    }
    println!(
        "{}: target mIoU {:.2} ± {:.2} over {} seeds",
        summary.name,
        summary.mean_miou,
        summary.std_miou,
        summary.per_seed.len()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let (stage, result) = match &cli.command {
        Command::Scene {
            command: SceneCommand::Build(args),
        } => ("scene", scene_build(args)),
        Command::Captions { command } => match command {
            CaptionsCommand::Generate(args) => ("captions", captions_generate(args)),
            CaptionsCommand::Refine(args) => ("captions", captions_refine(args)),
            CaptionsCommand::Stats(args) => ("captions", captions_stats(args)),
        },
        Command::Embed(args) => ("embed", embed(args)),
        Command::Train(args) => ("train", train_cmd(args)),
        Command::Eval(args) => ("eval", eval_cmd(args)),
        Command::Plot(args) => ("plot", plot_cmd(args)),
        Command::Experiment {
            command: ExperimentCommand::Run(args),
        } => ("experiment", experiment_run(args)),
    };
    if let Err(err) = result {
        eprintln!("error[{stage}]: {err:#}");
        std::process::exit(1);
    }
}
