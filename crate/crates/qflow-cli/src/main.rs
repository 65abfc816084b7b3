use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qflow_cli::commands;
use qflow_cli::config::{RunConfig, Task};
use qflow_cli::error::CliError;
use qflow_cli::tasks::Side;

/// Dynamic optimal transport between sampled distributions and density
/// ratio estimation along the learned flow.
#[derive(Parser)]
#[command(name = "qflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand: where the config comes from and the
/// overrides that win over both file and environment.
#[derive(Args)]
struct ConfigArgs {
    /// Path to a TOML config; omitted keys fall back to the task preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in task preset (used when --config is absent, or to check
    /// against the file's task).
    #[arg(long)]
    task: Option<String>,
    /// Override the run seed (beats QFLOW_SEED and the file).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batch evaluation (beats QFLOW_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, &self.task) {
            (Some(path), _) => RunConfig::from_file(&path.display().to_string())?,
            (None, Some(task)) => {
                let mut cfg = RunConfig::preset(task.parse::<Task>()?);
                cfg.apply_env();
                cfg
            }
            (None, None) => {
                return Err(CliError::Config("pass --config <file> or --task <preset>".into()));
            }
        };
        if let Some(task) = &self.task {
            let parsed: Task = task.parse()?;
            if self.config.is_some() && parsed != cfg.task {
                return Err(CliError::Config(format!(
                    "--task {parsed} contradicts config task {}",
                    cfg.task
                )));
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample one side of the task pair to a CSV.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Which distribution to sample: p or q.
        #[arg(long)]
        which: String,
        /// Sample count (defaults to the config's n_p / n_q).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an initial velocity field by interpolant matching.
    InitFlow {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data_p: Option<PathBuf>,
        #[arg(long)]
        data_q: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine an initialized flow with the bi-directional objective.
    Refine {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input flow checkpoint.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        data_p: Option<PathBuf>,
        #[arg(long)]
        data_q: Option<PathBuf>,
    },
    /// Train the ratio net along a frozen flow.
    TrainRatio {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_p: Option<PathBuf>,
        #[arg(long)]
        data_q: Option<PathBuf>,
    },
    /// Transport-quality metrics of a flow checkpoint.
    EvalOt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-point log-ratio estimates for a points CSV.
    EvalDre {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ratio: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mutual information estimate from a trained ratio net.
    EvalMi {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ratio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the fine-grid trajectory of fresh samples to CSV.
    ExportTraj {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// forward (P at t=0 to t=1) or reverse.
        #[arg(long, default_value = "forward")]
        direction: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print checkpoint or CSV metadata.
    Inspect {
        #[arg(long)]
        file: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { cfg, which, n, out } => {
            let cfg = cfg.resolve()?;
            let side: Side = which.parse()?;
            commands::gen_data(&cfg, side, n, &out)
        }
        Command::InitFlow { cfg, data_p, data_q, out } => {
            let cfg = cfg.resolve()?;
            commands::run_init_flow(&cfg, data_p.as_deref(), data_q.as_deref(), &out)
        }
        Command::Refine { cfg, input, out, log, data_p, data_q } => {
            let cfg = cfg.resolve()?;
            commands::run_refine(&cfg, &input, &out, log.as_deref(), data_p.as_deref(), data_q.as_deref())
        }
        Command::TrainRatio { cfg, flow, out, data_p, data_q } => {
            let cfg = cfg.resolve()?;
            commands::run_train_ratio(&cfg, &flow, &out, data_p.as_deref(), data_q.as_deref())
        }
        Command::EvalOt { cfg, flow, out } => {
            let cfg = cfg.resolve()?;
            commands::run_eval_ot(&cfg, &flow, &out)
        }
        Command::EvalDre { cfg, ratio, points, out } => {
            let cfg = cfg.resolve()?;
            commands::run_eval_dre(&cfg, &ratio, &points, &out)
        }
        Command::EvalMi { cfg, ratio, out } => {
            let cfg = cfg.resolve()?;
            commands::run_eval_mi(&cfg, &ratio, &out)
        }
        Command::ExportTraj { cfg, flow, n, direction, out } => {
            let cfg = cfg.resolve()?;
            let dir = match direction.as_str() {
                "forward" => qflow::ode::Direction::Forward,
                "reverse" => qflow::ode::Direction::Reverse,
                other => return Err(CliError::Config(format!("direction must be forward or reverse, got '{other}'"))),
            };
            commands::run_export_traj(&cfg, &flow, n, dir, &out)
        }
        Command::Inspect { file } => {
            let text = commands::run_inspect(&file)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
