use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relite_core::training::Ablation;

mod config;
mod plots;
mod stages;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` needs `{needs}` to run first")]
    MissingUpstream { stage: String, needs: String },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn stage(stage: &str, e: impl std::fmt::Display) -> Self {
        Self::Stage { stage: stage.into(), message: e.to_string() }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            _ => 3,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, stage) = match self {
            Self::Config(_) => ("config", None),
            Self::MissingUpstream { stage, .. } => ("missing_upstream", Some(stage.clone())),
            Self::Stage { stage, .. } => ("stage_failure", Some(stage.clone())),
        };
        serde_json::json!({"error": {"kind": kind, "stage": stage, "message": self.to_string()}})
    }
}

#[derive(Debug, Parser)]
#[command(name = "relite", version, about = "Relightable synthetic data and illumination-robust feature training")]
struct Cli {
    /// TOML pipeline config; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root for all stage artifacts.
    #[arg(long, global = true, default_value = "relite-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Config patch, e.g. `--override train.steps=500`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Training variant: full, no_similarity or no_disparity.
    #[arg(long, global = true)]
    ablation: Option<Ablation>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Procedural objects and their 3D feature sets.
    GenObjects,
    /// Random compositions of feature/object pairs.
    GenScenes,
    /// Renders every (scene, view) under the illumination sweep.
    Render,
    /// Cell-encoded keypoint labels for every rendered group.
    Labels,
    /// Trains one variant (see `--ablation`).
    Train,
    /// Held-out metrics for every trained variant and a random-init baseline.
    Eval,
    /// Per-frame extraction time at 320×240.
    Bench {
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Loss curves and per-illumination charts as SVG.
    Plots,
    /// Prints the effective config (with derived seeds) as JSON.
    ShowConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    if let Some(a) = cli.ablation {
        cfg.train.ablation = a;
    }
    let ctx = stages::Ctx::new(cfg, cli.out);
    let outcome = match cli.command {
        Command::GenObjects => stages::gen_objects(&ctx)?,
        Command::GenScenes => stages::gen_scenes(&ctx)?,
        Command::Render => stages::render(&ctx)?,
        Command::Labels => stages::labels(&ctx)?,
        Command::Train => stages::train(&ctx)?,
        Command::Eval => stages::eval(&ctx)?,
        Command::Bench { frames } => stages::bench(&ctx, frames)?,
        Command::Plots => stages::plots(&ctx)?,
        Command::ShowConfig => {
            out(&format!("{}\n", serde_json::to_string_pretty(&ctx.cfg).expect("json")));
            return Ok(());
        }
    };
    out(&format!("{}\n", serde_json::to_string(&outcome).expect("json")));
    Ok(())
}

/// Writes to stdout, ignoring a closed pipe.
pub(crate) fn out(text: &str) {
    use std::io::Write;
    let mut s = std::io::stdout().lock();
    let _ = s.write_all(text.as_bytes()).and_then(|_| s.flush());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            out(&e.to_string());
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
