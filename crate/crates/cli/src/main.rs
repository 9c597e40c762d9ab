mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use commands::{ScatterChoice, SdDf, SdrMethod, SdrSetting};
use error::{CliError, Result};
use wsign_core::WeightKind;

/// Depth-weighted spatial sign methods from the command line.
///
/// Exit status is 0 on success, 1 for invalid input and 2 for numerical
/// failures. Errors are reported as one JSON line on standard error.
#[derive(Parser, Debug)]
#[command(name = "wsign", version)]
struct Cli {
    /// Seed for every randomized step; overrides a seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output file (default: standard output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

fn parse_weight(s: &str) -> std::result::Result<WeightKind, String> {
    s.parse().map_err(|e: wsign_core::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weighted spatial median with its sandwich variance, as JSON.
    EstimateLocation {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "pd", value_parser = parse_weight)]
        weight: WeightKind,
        #[arg(long, default_value_t = wsign_core::location::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = wsign_core::location::DEFAULT_MAX_ITER)]
        max_iter: usize,
    },
    /// Scatter matrix estimate as a dense CSV matrix.
    EstimateScatter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        estimator: ScatterChoice,
        #[arg(long, default_value = "pd", value_parser = parse_weight)]
        weight: WeightKind,
        /// Groups for eigenvalue recovery (plugin only; default floor(sqrt(n))).
        #[arg(long)]
        k_groups: Option<usize>,
    },
    /// Recovered eigenvalues and eigenvectors of the plug-in estimate.
    Eigenvalues {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "pd", value_parser = parse_weight)]
        weight: WeightKind,
        #[arg(long)]
        k_groups: Option<usize>,
    },
    /// Eigenvector influence function norms over a grid, long format.
    InfluenceGrid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Eigenvector efficiencies, one row per distribution.
    Are {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-sample efficiency study, one row per sample size.
    SimulateFse {
        #[arg(long)]
        config: PathBuf,
    },
    /// Robust versus classical SDR prediction error.
    SimulateSdr {
        #[arg(long, value_delimiter = ',', default_value = "5,10,25,50,75,100,125,150")]
        p: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, value_enum, default_value = "both")]
        setting: SdrSetting,
    },
    /// Sufficient dimension reduction fits and predictions.
    Sdr {
        #[command(subcommand)]
        action: SdrAction,
    },
    /// Robust functional PCA outlier flags for curves.
    FpcaOutliers {
        /// Header row of design points, then one row per curve.
        #[arg(long)]
        curves: PathBuf,
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long, default_value = "pd", value_parser = parse_weight)]
        weight: WeightKind,
        #[arg(long, default_value_t = 20)]
        p_basis: usize,
        #[arg(long, value_enum, default_value = "two")]
        sd_df: SdDf,
        /// Same as --out.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum SdrAction {
    /// Fits on a training CSV and writes the model as JSON.
    Fit {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "y")]
        response: String,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, value_enum, default_value = "robust")]
        method: SdrMethod,
        #[arg(long, default_value = "pd", value_parser = parse_weight)]
        weight: WeightKind,
    },
    /// Predicts responses for a test CSV from a fitted model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::validation(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::EstimateLocation {
            input,
            weight,
            tol,
            max_iter,
        } => commands::estimate_location(&input, weight, tol, max_iter, out),
        Command::EstimateScatter {
            input,
            estimator,
            weight,
            k_groups,
        } => commands::estimate_scatter(&input, estimator, weight, k_groups, seed, out),
        Command::Eigenvalues { input, weight, k_groups } => commands::eigenvalues(&input, weight, k_groups, seed, out),
        Command::InfluenceGrid { config } => commands::influence(&config, cli.seed, out),
        Command::Are { config } => commands::are(&config, cli.seed, out),
        Command::SimulateFse { config } => commands::simulate_fse(&config, cli.seed, out),
        Command::SimulateSdr { p, n, reps, setting } => commands::simulate_sdr(&p, n, reps, setting, seed, out),
        Command::Sdr { action } => match action {
            SdrAction::Fit {
                train,
                response,
                d,
                method,
                weight,
            } => commands::sdr_fit(&train, &response, d, method, weight, out),
            SdrAction::Predict { model, test } => commands::sdr_predict(&model, &test, out),
        },
        Command::FpcaOutliers {
            curves,
            q,
            weight,
            p_basis,
            sd_df,
            report,
        } => {
            if report.is_some() && out.is_some() && report.as_deref() != out {
                return Err(CliError::validation("--report and --out name different files"));
            }
            commands::fpca_outliers(&curves, q, weight, p_basis, sd_df, seed, report.as_deref().or(out))
        }
    }
}

fn report(kind: &str, code: i32, message: &str) {
    let line = serde_json::json!({ "error": kind, "exit_code": code, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            report("usage", 1, first);
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            report(e.kind(), code, &e.to_string());
            ExitCode::from(code as u8)
        }
    }
}
