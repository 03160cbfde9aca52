mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resistkit_core::lexstats::TokenizerMode;
use resistkit_core::prompting::ShotMode;
use resistkit_core::taxonomy::Task;

use crate::config::{CliConfig, Settings};
use crate::output::Invalid;

#[derive(Debug, Parser)]
#[command(name = "resistkit", version, about = "Client-resistance detection and evaluation toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = "RESISTKIT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "RESISTKIT_SEED")]
    seed: Option<u64>,
    /// Number of folds.
    #[arg(long, global = true, env = "RESISTKIT_K")]
    k: Option<usize>,
    /// binary or fine.
    #[arg(long, global = true, env = "RESISTKIT_TASK", value_parser = parse_task)]
    task: Option<Task>,
    /// zero or few.
    #[arg(long, global = true, env = "RESISTKIT_SHOTS")]
    shots: Option<ShotMode>,
    /// A configured backend name, or mock-gold / mock-text.
    #[arg(long, global = true, env = "RESISTKIT_BACKEND")]
    backend: Option<String>,
    /// Overrides the selected backend's model.
    #[arg(long, global = true, env = "RESISTKIT_MODEL")]
    model: Option<String>,
    #[arg(long, global = true, env = "RESISTKIT_ALPHA0")]
    alpha0: Option<f64>,
    /// whitespace or char_ngram.
    #[arg(long, global = true, env = "RESISTKIT_TOKENIZER")]
    tokenizer: Option<TokenizerMode>,
    /// Aligned text instead of JSON lines.
    #[arg(long, global = true)]
    table: bool,
    /// Output file (or directory, for split).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "binary" => Ok(Task::Binary),
        "fine" | "fine_grained" | "fine-grained" => Ok(Task::Fine),
        other => Err(format!("unknown task {other:?} (expected binary or fine)")),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest and schema-check corpus files.
    Validate(commands::corpus::ValidateArgs),
    /// Turn sessions (and annotations) into classification samples.
    BuildSamples(commands::corpus::BuildSamplesArgs),
    /// Per-category counts and mean response lengths.
    Stats(commands::corpus::SamplesArg),
    /// Inter-annotator agreement.
    Agreement(commands::corpus::AnnotationsArg),
    /// Majority-vote adjudication per sample.
    Adjudicate(commands::corpus::AnnotationsArg),
    /// Stratified fold assignment.
    Split(commands::corpus::SamplesArg),
    /// Show the prompt built for one sample.
    PromptPreview(commands::corpus::PromptPreviewArgs),
    /// Batch inference with a resumable run file.
    Run(commands::eval::RunArgs),
    /// Per-fold metrics for a run.
    Score(commands::eval::ScoreArgs),
    /// mean_{std} over fold reports.
    Aggregate(commands::eval::AggregateArgs),
    /// Log-odds lexical features per category.
    Lexstats(commands::analysis::LexstatsArgs),
    /// Session resistance profiles and prevalence.
    Sessions(commands::analysis::SessionsArgs),
    /// Resistance proportions against alliance scores.
    Correlate(commands::analysis::SessionsArgs),
    /// Mixed ANOVA and effect sizes for the study dataset.
    Anova(commands::analysis::AnovaArgs),
    /// Fine-tuning configuration for the classification task.
    EmitTrainConfig,
    /// Run the HTTP service.
    Serve(commands::serve::ServeArgs),
    /// Write a seeded synthetic corpus and scenario bank.
    Synth(commands::corpus::SynthArgs),
}

fn settings(g: &GlobalArgs) -> anyhow::Result<Settings> {
    let config = CliConfig::load(g.config.as_deref())?;
    Ok(Settings {
        seed: g.seed.or(config.seed).unwrap_or(config::DEFAULT_SEED),
        k: g.k.or(config.k).unwrap_or(config::DEFAULT_K),
        task: g.task.or(config.task).unwrap_or(Task::Binary),
        shots: g.shots.or(config.shots).unwrap_or(ShotMode::Zero),
        alpha0: g.alpha0.or(config.alpha0).unwrap_or(config::DEFAULT_ALPHA0),
        tokenizer: g.tokenizer.or(config.tokenizer).unwrap_or_default(),
        backend: g
            .backend
            .clone()
            .or_else(|| config.backend.clone())
            .unwrap_or_else(|| config::DEFAULT_BACKEND.to_string()),
        model: g.model.clone(),
        table: g.table,
        out: g.out.clone(),
        config,
    })
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let s = settings(&cli.global)?;
    use commands::*;
    match cli.command {
        Command::Validate(a) => corpus::validate(&s, a),
        Command::BuildSamples(a) => corpus::build_samples(&s, a),
        Command::Stats(a) => corpus::stats(&s, a),
        Command::Agreement(a) => corpus::agreement(&s, a),
        Command::Adjudicate(a) => corpus::adjudicate(&s, a),
        Command::Split(a) => corpus::split(&s, a),
        Command::PromptPreview(a) => corpus::prompt_preview(&s, a),
        Command::Synth(a) => corpus::synth(&s, a),
        Command::Run(a) => runtime()?.block_on(eval::run(&s, a)),
        Command::Score(a) => eval::score(&s, a),
        Command::Aggregate(a) => eval::aggregate(&s, a),
        Command::Lexstats(a) => analysis::lexstats(&s, a),
        Command::Sessions(a) => analysis::sessions(&s, a),
        Command::Correlate(a) => analysis::correlate(&s, a),
        Command::Anova(a) => analysis::anova(&s, a),
        Command::EmitTrainConfig => output::emit(&s, &resistkit_core::prompting::emit_train_config(s.task)),
        Command::Serve(a) => runtime()?.block_on(serve::serve(&s, a)),
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("RESISTKIT_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
