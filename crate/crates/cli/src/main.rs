//! `padrec`: synthetic data, preprocessing, three-phase training, evaluation,
//! ablation grids and embedding diagnostics.

mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use padrec::config::RunConfig;
use padrec::PadError;

#[derive(Parser, Debug)]
#[command(
    name = "padrec",
    version,
    about = "Pre-train, align and fine-tune sequential recommenders with text"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML (or resolved JSON) config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving every artifact.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Evaluation worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Parameter storage precision.
    #[arg(long, global = true, value_parser = ["f32", "f64"])]
    precision: Option<String>,
    /// Override any config key, e.g. `--set model.d_c=32`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic world (log TSV, text embeddings, config).
    Synth(commands::SynthArgs),
    /// Parse the interaction log and write the split dataset.
    Preprocess,
    /// Phase 1: train the recommendation expert.
    Pretrain,
    /// Phase 2: align collaborative and text embeddings.
    Align(commands::AlignArgs),
    /// Phase 3: fine-tune all experts with the gate.
    Finetune(commands::FinetuneArgs),
    /// All three phases plus the final report.
    Pipeline,
    /// Rank a checkpoint's model on the configured split.
    Eval(commands::EvalArgs),
    /// Run a grid of alignment / expert / gating variants.
    Ablate(commands::AblateArgs),
    /// Kendall's tau and pair-distance diagnostics between two checkpoints.
    Diagnose(commands::DiagnoseArgs),
}

impl GlobalArgs {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    fn resolve(&self) -> padrec::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.train.threads = t;
        }
        if let Some(p) = &self.precision {
            cfg.set("precision", p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> padrec::Result<()> {
    let cfg = cli.global.resolve()?;
    let g = &cli.global;
    match cli.command {
        Command::Synth(a) => commands::synth(g, cfg, &a),
        Command::Preprocess => commands::preprocess(g, cfg),
        Command::Pretrain => commands::pretrain(g, cfg),
        Command::Align(a) => commands::align(g, cfg, &a),
        Command::Finetune(a) => commands::finetune(g, cfg, &a),
        Command::Pipeline => commands::pipeline(g, cfg),
        Command::Eval(a) => commands::eval(g, cfg, &a),
        Command::Ablate(a) => commands::ablate(g, cfg, &a),
        Command::Diagnose(a) => commands::diagnose(g, cfg, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for validation problems, 2 for runtime and data failures.
fn exit_code(e: &PadError) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}
