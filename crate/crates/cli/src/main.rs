use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use typolab::config::{ExperimentConfig, Overrides};
use typolab::error::CliError;
use typolab::stages::{Pipeline, StageStatus};

/// Dense-retrieval typo-robustness laboratory: train dual-encoder models,
/// perturb evaluation questions with realistic typos, and measure and
/// analyze the damage.
#[derive(Parser)]
#[command(name = "typolab", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize the corpus files into the output tree.
    Ingest(StageArgs),
    /// Build the frequency-ranked vocabulary from passages and training questions.
    BuildVocab(StageArgs),
    /// Generate typoed evaluation testsets for the configured settings.
    Perturb(PerturbArgs),
    /// Train the dual-encoder model for the configured mode.
    Train(ModeArgs),
    /// Encode all passages into a dense index with the trained model.
    Index(ModeArgs),
    /// Retrieve top-k passages for clean, typoed, and word-removal queries.
    Search(ModeArgs),
    /// Score runs with the configured metrics and paired significance tests.
    Evaluate(ModeArgs),
    /// Produce typo-damage trend, frequency-bin, and importance-bin reports.
    Analyze(ModeArgs),
    /// Run the full pipeline end to end.
    Experiment(ModeArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Path to the experiment configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Re-run the stage even if its artifacts are up to date.
    #[arg(long)]
    force: bool,
    /// Override the configured output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ModeArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Override the configured training mode (DR, DR_Aug, DR_CL, DR_Aug_CL).
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Override the per-word typo probability.
    #[arg(long, value_name = "P")]
    typo_p: Option<f64>,
    /// Restrict generation to a single typo setting
    /// (random_words, non_stopwords, discriminative_utterances).
    #[arg(long, value_name = "SETTING")]
    typo_setting: Option<String>,
    /// Override the testset random seed.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

impl StageArgs {
    fn overrides(&self) -> Overrides {
        Overrides { out_dir: self.out_dir.clone(), ..Overrides::default() }
    }
}

impl ModeArgs {
    fn overrides(&self) -> Overrides {
        Overrides { mode: self.mode.clone(), ..self.stage.overrides() }
    }
}

impl PerturbArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            typo_p: self.typo_p,
            typo_setting: self.typo_setting.clone(),
            testset_seed: self.seed,
            ..self.stage.overrides()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests print and exit cleanly; real parse
            // errors are usage errors.
            let code: u8 = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (stage_args, overrides, name): (&StageArgs, Overrides, &str) = match &cli.command {
        Command::Ingest(a) => (a, a.overrides(), "ingest"),
        Command::BuildVocab(a) => (a, a.overrides(), "build-vocab"),
        Command::Perturb(a) => (&a.stage, a.overrides(), "perturb"),
        Command::Train(a) => (&a.stage, a.overrides(), "train"),
        Command::Index(a) => (&a.stage, a.overrides(), "index"),
        Command::Search(a) => (&a.stage, a.overrides(), "search"),
        Command::Evaluate(a) => (&a.stage, a.overrides(), "evaluate"),
        Command::Analyze(a) => (&a.stage, a.overrides(), "analyze"),
        Command::Experiment(a) => (&a.stage, a.overrides(), "experiment"),
    };

    let config = ExperimentConfig::load(&stage_args.config)?;
    let config_dir = stage_args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let resolved = config.resolve(&config_dir, &overrides)?;
    let pipeline = Pipeline::new(&resolved, stage_args.force);

    if name == "experiment" {
        for (stage, status) in pipeline.experiment()? {
            report(stage, status);
        }
        println!(
            "experiment complete: mode {} -> {}",
            resolved.mode,
            resolved.out_dir.display()
        );
        return Ok(());
    }

    let status = match name {
        "ingest" => pipeline.ingest()?,
        "build-vocab" => pipeline.build_vocab()?,
        "perturb" => pipeline.perturb()?,
        "train" => pipeline.train()?,
        "index" => pipeline.index()?,
        "search" => pipeline.search()?,
        "evaluate" => pipeline.evaluate()?,
        "analyze" => pipeline.analyze()?,
        _ => unreachable!("stage dispatch covers every subcommand"),
    };
    report(name, status);
    Ok(())
}

fn report(stage: &str, status: StageStatus) {
    match status {
        StageStatus::Ran => println!("[{stage}] done"),
        StageStatus::Skipped => println!("[{stage}] up to date, skipped"),
    }
}
