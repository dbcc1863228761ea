use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use playrep::bc::InitMode;
use playrep::dataset::Task;
use playrep::experiment::{
    record_registry, run_experiment, ExperimentConfig, RegistryFilter, RunOptions, RunStatus, Stage, REGISTRY_FILE,
};

#[derive(Parser)]
#[command(
    name = "playrep",
    version,
    about = "Pretrain on play video, fine-tune by behavior cloning, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain an encoder on a play corpus.
    Pretrain(RunArgs),
    /// Fine-tune a policy on expert demonstrations.
    TrainBc(RunArgs),
    /// Held-out MSE of a policy checkpoint.
    Eval(RunArgs),
    /// Sweep transfer depth, play fraction or demonstration count.
    Ablate(RunArgs),
    /// Generate synthetic play and demonstration corpora.
    Synthgen(RunArgs),
    /// Convert classification weights from safetensors.
    ImportWeights(RunArgs),
    /// Compile evaluation reports into a results table.
    Report(RunArgs),
    /// List registered runs.
    Runs(RunsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; the stage defaults to the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run a config that already completed.
    #[arg(long)]
    force: bool,
    /// Output root holding the registry and run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Root for relative data paths in the config.
    #[arg(long, env = "PLAYREP_DATA_ROOT")]
    data_root: Option<PathBuf>,
}

#[derive(Args)]
struct RunsArgs {
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    stage: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    init: Option<String>,
    /// RFC 3339 lower bound on the start time.
    #[arg(long)]
    since: Option<String>,
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Pretrain(_) => Stage::Pretrain,
        Command::TrainBc(_) => Stage::TrainBc,
        Command::Eval(_) => Stage::Eval,
        Command::Ablate(_) => Stage::Ablate,
        Command::Synthgen(_) => Stage::Synthgen,
        Command::ImportWeights(_) => Stage::ImportWeights,
        Command::Report(_) => Stage::Report,
        Command::Runs(_) => return None,
    })
}

fn run_stage(stage: Stage, args: &RunArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::new(stage),
    };
    if cfg.stage != stage {
        bail!("config declares stage {} but the {} command was used", cfg.stage, stage);
    }
    if let Some(seed) = args.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    if let Some(root) = &args.data_root {
        cfg.resolve_paths(root);
    }
    let out = cfg.output_dir.clone().unwrap_or_else(|| args.out.clone());
    let record = run_experiment(&cfg, &RunOptions { out, force: args.force })?;
    println!("run {} {:?}", record.run_id, record.status);
    for (name, path) in &record.artifacts {
        println!("  {name}: {}", path.display());
    }
    if let Some(d) = &record.diagnostics {
        eprintln!("error: {d}");
    }
    Ok(record.status == RunStatus::Completed)
}

fn list_runs(args: &RunsArgs) -> Result<()> {
    let filter = RegistryFilter {
        stage: args.stage.as_deref().map(str::parse).transpose()?,
        task: args.task.as_deref().map(str::parse::<Task>).transpose()?,
        init_mode: args.init.as_deref().map(str::parse::<InitMode>).transpose()?,
        since: args.since.as_deref().map(chrono_parse).transpose()?,
        until: None,
    };
    let (records, skipped) = record_registry(&args.out.join(REGISTRY_FILE), &filter)?;
    let mut stdout = std::io::stdout().lock();
    for r in &records {
        writeln!(
            stdout,
            "{}\t{}\t{:?}\t{}\t{}\t{}",
            r.run_id,
            r.stage,
            r.status,
            r.task.map_or("-".into(), |t| t.to_string()),
            r.init_mode.map_or("-".into(), |m| m.to_string()),
            r.started.to_rfc3339()
        )?;
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} corrupt registry line(s)");
    }
    Ok(())
}

fn chrono_parse(s: &str) -> Result<playrep::experiment::Timestamp> {
    s.parse().with_context(|| format!("invalid timestamp {s:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stdout)
        .init();
    let cli = Cli::parse();
    let result = match (&cli.command, stage_of(&cli.command)) {
        (Command::Runs(args), _) => list_runs(args).map(|_| true),
        (
            Command::Pretrain(a)
            | Command::TrainBc(a)
            | Command::Eval(a)
            | Command::Ablate(a)
            | Command::Synthgen(a)
            | Command::ImportWeights(a)
            | Command::Report(a),
            Some(stage),
        ) => run_stage(stage, a),
        _ => unreachable!("every run command maps to a stage"),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
