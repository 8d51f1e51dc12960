//! `fdloc` command-line harness.
//!
//! Exit codes: 0 success, 1 config/parse error, 2 numerical error, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fdloc::divider::dominance_report;
use fdloc::experiment::{
    load_case, monte_carlo, run_experiment, run_trial_artifacts, ExperimentConfig,
    ExperimentError, Localizer,
};
use fdloc::export::{emit_matrices_csv, emit_text, emit_trajectory_csv, read_trajectory_csv};
use fdloc::multi::{detect_sources, estimate_rotor_trajectory, DEFAULT_THRESHOLD_RATIO};
use fdloc::single::{localize_single, Method, DEFAULT_TIE_TOL};
use fdloc::build_matrices;

const SEED_ENV: &str = "FDLOC_SEED";

#[derive(Parser)]
#[command(name = "fdloc", version, about = "Forced-oscillation source localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Network case file (JSON).
    #[arg(long)]
    case: Option<PathBuf>,
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed; overrides FDLOC_SEED and the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the divider matrices of a case and write them as CSV.
    BuildMatrices {
        #[command(flatten)]
        common: Common,
    },
    /// Generate rotor and bus trajectories for a config (trial 0).
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Rank buses by oscillation magnitude from a bus-frequency CSV.
    LocalizeSingle {
        #[command(flatten)]
        common: Common,
        /// Bus-frequency trajectory CSV (one column per bus, in bus order).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_method, default_value = "rms")]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_TIE_TOL)]
        tie_tol: f64,
    },
    /// Estimate rotor speeds by TLS and detect the oscillating generators.
    LocalizeTls {
        #[command(flatten)]
        common: Common,
        /// Bus-frequency trajectory CSV (one column per bus, in bus order).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_RATIO)]
        threshold: f64,
    },
    /// Run one experiment end to end and write all artifacts.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Run a seeded Monte-Carlo study of a config.
    MonteCarlo {
        #[command(flatten)]
        common: Common,
        /// Number of trials; defaults to the config value.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "rms" | "magnitude_rms" => Ok(Method::MagnitudeRms),
        "max" | "magnitude_max" => Ok(Method::MagnitudeMax),
        _ => Err(format!("unknown method {s:?} (use rms or max)")),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, ExperimentError> {
    value
        .as_deref()
        .ok_or_else(|| ExperimentError::Config(format!("--{flag} is required")))
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, ExperimentError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ExperimentError::Config(format!("{SEED_ENV}={v:?} is not a u64"))),
        Err(_) => Ok(None),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(required(&common.config, "config")?)?;
    if let Some(case) = &common.case {
        cfg.case = case.clone();
    }
    if let Some(seed) = resolve_seed(common.seed)? {
        cfg.noise.seed = seed;
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::BuildMatrices { common } => {
            let case = load_case(required(&common.case, "case")?)?;
            let mats = build_matrices(&case)?;
            emit_matrices_csv(&mats, &common.out)?;
            let report = dominance_report(&mats);
            emit_text(&json(&report), &common.out.join("dominance.json"))?;
            println!(
                "{}: N={} n={} rank={} nonneg={} row_dominant={} col_dominant={} worst_margin={:.3e}",
                case.name,
                mats.n_buses(),
                mats.n_generators(),
                mats.rank(),
                report.nonneg,
                report.row_dominant,
                report.col_dominant,
                report.worst_margin
            );
        }
        Command::Simulate { common } => {
            let mut cfg = load_config(&common)?;
            cfg.localizer = Localizer::Single;
            let (_, art) = run_trial_artifacts(&cfg)?;
            emit_trajectory_csv(&art.rotor, &common.out.join("rotor.csv"))?;
            emit_trajectory_csv(&art.bus_true, &common.out.join("bus_true.csv"))?;
            emit_trajectory_csv(&art.measured, &common.out.join("bus_measured.csv"))?;
            println!(
                "{}: {} samples, {} generators, {} buses -> {}",
                cfg.name,
                art.rotor.samples(),
                art.rotor.channels(),
                art.measured.channels(),
                common.out.display()
            );
        }
        Command::LocalizeSingle { common, input, method, tie_tol } => {
            let traj = read_trajectory_csv(&input)?;
            let result = localize_single(&traj, method, tie_tol)?;
            emit_text(&json(&result), &common.out.join("localization.json"))?;
            println!(
                "source: bus {} (score {:.6e}, relative gap {:.4})",
                result.top().0,
                result.ranking[0].score,
                result.relative_gap()
            );
        }
        Command::LocalizeTls { common, input, threshold } => {
            let case = load_case(required(&common.case, "case")?)?;
            let mats = build_matrices(&case)?;
            let measured = read_trajectory_csv(&input)?;
            let est = estimate_rotor_trajectory(&mats, &measured)?;
            let detection = detect_sources(&est.trajectory, &est.degenerate, threshold)?;
            emit_trajectory_csv(&est.trajectory, &common.out.join("rotor_estimate.csv"))?;
            emit_text(&json(&detection), &common.out.join("detection.json"))?;
            println!(
                "detected generators: {:?} ({} degenerate samples)",
                detection.detected,
                est.degenerate_count()
            );
        }
        Command::Experiment { common } => {
            let cfg = load_config(&common)?;
            let report = run_experiment(&cfg, Some(&common.out))?;
            let trial = &report.trials[0];
            println!("{}: detected generators {:?}", cfg.name, trial.detected_generators);
            for check in &trial.checks {
                println!("  [{}] {}", if check.passed { "PASS" } else { "FAIL" }, check.name);
            }
        }
        Command::MonteCarlo { common, trials } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let report = monte_carlo(&cfg, Some(&common.out))?;
            println!(
                "{}: {} trials ({} failed)",
                cfg.name, report.summary.trials, report.summary.failed_trials
            );
            for (g, rate) in &report.summary.detection_rate {
                println!("  generator {g}: detection rate {rate:.3}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are config errors; help and version are not errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
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
