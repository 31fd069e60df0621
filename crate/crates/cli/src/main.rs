//! `mvdi`: matrix-valued diffusion-index forecasting from the command line.

mod commands;
mod config;
mod error;
mod model;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{CommonArgs, Resolved};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mvdi", version, about = "Matrix-valued diffusion-index forecasting")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

/// Long-format panel and target files plus their transforms.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Panel CSV with columns time,row_id,col_id,value.
    #[arg(long)]
    pub panel: PathBuf,
    /// Target CSV with columns time,value.
    #[arg(long)]
    pub target: PathBuf,
    /// Transform rules CSV with columns row_id,col_id,rule.
    #[arg(long)]
    pub transforms: Option<PathBuf>,
    /// Subtract each series' mean after transforming.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlantedPreset {
    /// Signal block plus pure-noise rows and columns.
    Default,
    /// Every cell on a 3 x 2 factor with little noise.
    Strong,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Screen, estimate factors and fit the bilinear forecast equation.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a saved fit to a panel.
    Forecast {
        /// `model.csv` written by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        /// Target file; only used to align the sample with the fit.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        transforms: Option<PathBuf>,
        #[arg(long)]
        center: bool,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation screening diagnostics and the refined panel.
    Screen {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rolling cross-validation of the pipeline and the benchmarks.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Evaluate only the pipeline.
        #[arg(long)]
        no_benchmarks: bool,
    },
    /// Draw one simulated panel and target.
    Simulate {
        #[arg(long, default_value_t = 10)]
        p: usize,
        #[arg(long, default_value_t = 10)]
        q: usize,
        #[arg(long, default_value_t = 100)]
        t: usize,
        #[arg(long, default_value = "matrix_normal")]
        factor_kind: mvdi::FactorKind,
        #[arg(long, default_value = "iid")]
        noise_kind: mvdi::NoiseKind,
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
        #[arg(long, default_value_t = 1.0)]
        target_noise_sd: f64,
        /// Replication stream to draw from.
        #[arg(long, default_value_t = 0)]
        rep: u64,
        /// Write a planted-factor fixture instead of a simulation draw.
        #[arg(long, value_enum)]
        planted: Option<PlantedPreset>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo loss tables.
    Mc {
        /// 1: factor loss, 2: loading loss, 3: screening study.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        table: u8,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Keep only cells with this p.
        #[arg(long)]
        p: Option<usize>,
        /// Keep only cells with this q.
        #[arg(long)]
        q: Option<usize>,
        /// Keep only cells with this T.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampling distributions of the loading estimates.
    Normality {
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Reuse one panel draw for every replication.
        #[arg(long)]
        fixed_panel: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Resolved::from_args(&cli.common)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit { data, out } => commands::fit(&cfg, &data, &out),
        Command::Forecast {
            model,
            panel,
            target,
            transforms,
            center,
            out,
        } => commands::forecast(&cfg, &model, &panel, target.as_deref(), transforms.as_deref(), center, &out),
        Command::Screen { data, out } => commands::screen(&cfg, &data, &out),
        Command::Eval {
            data,
            out,
            folds,
            test_fraction,
            no_benchmarks,
        } => commands::eval(&cfg, &data, &out, folds, test_fraction, !no_benchmarks),
        Command::Simulate {
            p,
            q,
            t,
            factor_kind,
            noise_kind,
            noise_scale,
            target_noise_sd,
            rep,
            planted,
            out,
        } => match planted {
            Some(preset) => commands::planted(&cfg, preset, &out),
            None => {
                let sim = commands::SimArgs {
                    p,
                    q,
                    t,
                    factor_kind,
                    noise_kind,
                    noise_scale,
                    target_noise_sd,
                    rep,
                };
                commands::simulate(&cfg, &sim, &out)
            }
        },
        Command::Mc { table, reps, p, q, t, out } => commands::mc(&cfg, table, reps, (p, q, t), &out),
        Command::Normality { reps, fixed_panel, out } => commands::normality(&cfg, reps, fixed_panel, &out),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("ERROR kind=usage message={}", one_line(&e.kind().to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR kind={} message={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
