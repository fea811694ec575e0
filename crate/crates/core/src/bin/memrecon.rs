use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use memrecon::app::{self, AblationConfig, Mode, ReconstructOptions, Suite};
use memrecon::config::RunConfig;
use memrecon::pipeline::{ConfidenceScore, Strategy};
use memrecon::Result;

#[derive(Parser)]
#[command(name = "memrecon", version, about = "Pointmap reconstruction with a two-tier spatial memory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Mst,
    NextBest,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Sigmoid,
    Exponential,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Clip,
    Lm,
    Memsize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render synthetic scenes to a directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint with a JSON-lines log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenes from gen-data; generated on the fly when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one scene directory into per-frame PLY files.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "unordered")]
        ordered: bool,
        #[arg(long)]
        unordered: bool,
        #[arg(long, value_enum, default_value = "mst")]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value = "on")]
        clip: OnOff,
        #[arg(long)]
        lt_max_tokens: Option<usize>,
        #[arg(long, value_enum, default_value = "on")]
        long_term: OnOff,
        #[arg(long, value_enum, default_value = "sigmoid")]
        score: ScoreArg,
    },
    /// Score a reconstruction directory against a ground-truth scene.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, alias = "out")]
        report: PathBuf,
    },
    /// Run an ablation suite on generated sequences.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        suite: SuiteArg,
        /// JSON ablation settings; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out } => app::cmd_gen_data(&run_config(config.as_ref())?, &out),
        Cmd::Train { config, data, out } => app::cmd_train(&run_config(config.as_ref())?, data.as_deref(), &out),
        Cmd::Reconstruct { checkpoint, input, out, ordered: _, unordered, strategy, clip, lt_max_tokens, long_term, score } => {
            let mode = if unordered {
                Mode::Unordered(match strategy {
                    StrategyArg::Mst => Strategy::Mst,
                    StrategyArg::NextBest => Strategy::NextBest,
                })
            } else {
                Mode::Ordered
            };
            let opts = ReconstructOptions {
                mode,
                clip: matches!(clip, OnOff::On),
                lt_max_tokens,
                long_term: matches!(long_term, OnOff::On),
                score: match score {
                    ScoreArg::Sigmoid => ConfidenceScore::Sigmoid,
                    ScoreArg::Exponential => ConfidenceScore::Exponential,
                },
            };
            app::cmd_reconstruct(&checkpoint, &input, &opts, &out)
        }
        Cmd::Eval { pred, gt, report } => {
            let m = app::cmd_eval(&pred, &gt, &report)?;
            println!("acc {:.4} comp {:.4} nc {:.4}", m.acc_mean, m.comp_mean, m.nc_mean);
            Ok(())
        }
        Cmd::Ablate { checkpoint, suite, config, out } => {
            let cfg: AblationConfig = match config {
                Some(p) => AblationConfig::from_json(&std::fs::read_to_string(p)?)?,
                None => AblationConfig::default(),
            };
            let suite = match suite {
                SuiteArg::Clip => Suite::Clip,
                SuiteArg::Lm => Suite::Lm,
                SuiteArg::Memsize => Suite::Memsize,
            };
            let r = app::cmd_ablate(&checkpoint, suite, &cfg, &out)?;
            for row in &r.rows {
                println!("{:<14} acc {:.4} comp {:.4} nc {:.4} tokens {}/{}", row.setting, row.acc_mean, row.comp_mean, row.nc_mean, row.max_total_tokens, row.token_bound);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MEMRECON_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}
