//! End-to-end experiments: parse a case, impose forced oscillations,
//! simulate (noisy) PMU data, localize, score, and write artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::case::{parse_case, BusId, CaseError, NetworkCase};
use crate::divider::{build_matrices, bus_response, DividerError, DividerMatrices};
use crate::export::{emit_plot, emit_text, emit_trajectory_csv, ExportError, Panel};
use crate::multi::{
    detect_sources, effective_model_error, estimate_rotor_trajectory, SourceDetection, TlsError,
    DEFAULT_THRESHOLD_RATIO,
};
use crate::signal::{
    add_measurement_noise, generate_rotor, perturb_case, NoiseSpec, OscillationSpec, SignalError,
    TimeGrid, Trajectory, DEFAULT_DT, DEFAULT_DURATION,
};
use crate::single::{
    dominance_check, localize_single, LocalizationResult, LocateError, Method, DEFAULT_TIE_TOL,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("case {path}: {source}")]
    Case {
        path: String,
        #[source]
        source: CaseError,
    },
    #[error(transparent)]
    Divider(#[from] DividerError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Tls(#[from] TlsError),
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit code: 1 config/parse, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Case { .. } => 1,
            ExperimentError::Divider(DividerError::InvalidCase(_)) => 1,
            ExperimentError::Signal(_) => 1,
            ExperimentError::Divider(_) | ExperimentError::Tls(_) | ExperimentError::Locate(_) => 2,
            ExperimentError::Export(ExportError::Io { .. }) | ExperimentError::Io { .. } => 3,
            ExperimentError::Export(ExportError::GridMismatch) => 2,
            ExperimentError::Export(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localizer {
    #[default]
    Single,
    Tls,
}

/// Which side of the TLS problem carries the perturbed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSide {
    /// Analyst matrices from the perturbed case, measurements from the true case.
    #[default]
    Model,
    /// Measurements from the perturbed case, analyst matrices from the base case.
    Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_duration() -> f64 {
    DEFAULT_DURATION
}
fn default_trials() -> usize {
    1
}
fn default_tie_tol() -> f64 {
    DEFAULT_TIE_TOL
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD_RATIO
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dt: DEFAULT_DT, duration: DEFAULT_DURATION }
    }
}

impl GridConfig {
    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::from_duration(self.dt, self.duration)
    }
}

/// Optional assertions recorded in the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// Bus expected at the top of the single-source ranking.
    pub top_bus: Option<usize>,
    /// Expected pointwise dominance outcome at every source bus.
    pub source_buses_dominant: Option<bool>,
    /// Expected set of detected generator ids.
    pub detected: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Case file; relative paths resolve against the config file's directory.
    pub case: PathBuf,
    #[serde(default)]
    pub sources: Vec<OscillationSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub localizer: Localizer,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_tie_tol")]
    pub tie_tol: f64,
    #[serde(default = "default_threshold")]
    pub threshold_ratio: f64,
    #[serde(default)]
    pub error_side: ErrorSide,
    /// Buses shown in the bus-frequency plot; empty means all buses.
    #[serde(default)]
    pub plot_buses: Vec<usize>,
    #[serde(default)]
    pub expect: Expectations,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads a config and resolves its case path relative to the file.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.case.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.case = dir.join(&cfg.case);
            }
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.grid.dt > 0.0 && self.grid.dt.is_finite()) {
            return bad("grid.dt must be positive");
        }
        if !(self.grid.duration > 0.0 && self.grid.duration.is_finite()) {
            return bad("grid.duration must be positive");
        }
        if self.noise.meas_variance < 0.0 || self.noise.param_variance < 0.0 {
            return bad("noise variances must be nonnegative");
        }
        if !(self.threshold_ratio > 0.0 && self.threshold_ratio <= 1.0) {
            return bad("threshold_ratio must lie in (0, 1]");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn seed_for_trial(&self, k: usize) -> u64 {
        self.noise.seed.wrapping_add(k as u64)
    }
}

pub fn load_case(path: &Path) -> Result<NetworkCase, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text).map_err(|source| ExperimentError::Case {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub single: Option<LocalizationResult>,
    pub detection: Option<SourceDetection>,
    /// Generators flagged by the localizer in this trial.
    pub detected_generators: BTreeSet<usize>,
    /// Pointwise dominance outcome at each source bus.
    pub source_dominance: BTreeMap<usize, bool>,
    /// RMS error of each estimated rotor channel against the injected one.
    pub channel_rms_error: Option<Vec<f64>>,
    pub degenerate_samples: Option<usize>,
    pub model_error_norm: f64,
    pub checks: Vec<Check>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub failed_trials: usize,
    /// Fraction of successful trials in which each generator was flagged.
    pub detection_rate: BTreeMap<usize, f64>,
    pub mean_channel_rms_error: Option<f64>,
    pub model_error_norms: Vec<f64>,
    /// Every recorded check passed in every trial.
    pub all_checks_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_name: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub grid: TimeGrid,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub trials: Vec<TrialOutcome>,
    pub summary: Summary,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// Everything one trial produces, including the trajectories.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub outcome: TrialOutcome,
    pub rotor: Trajectory,
    pub bus_true: Trajectory,
    pub measured: Trajectory,
    pub estimate: Option<Trajectory>,
}

/// Shared, seed-independent inputs of an experiment.
struct Prepared {
    case: NetworkCase,
    mats: DividerMatrices,
    rotor: Trajectory,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    let case = load_case(&cfg.case)?;
    let mats = build_matrices(&case)?;
    let rotor = generate_rotor(&cfg.sources, case.n_generators(), cfg.grid.time_grid())?;
    Ok(Prepared { case, mats, rotor })
}

fn source_buses(cfg: &ExperimentConfig, case: &NetworkCase) -> Vec<BusId> {
    cfg.sources
        .iter()
        .filter_map(|s| case.generator(s.generator_id).map(|g| g.bus))
        .collect()
}

fn run_trial(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    trial: usize,
) -> Result<TrialArtifacts, ExperimentError> {
    let seed = cfg.seed_for_trial(trial);
    let noise = cfg.noise.with_seed(seed);
    let perturbed = perturb_case(&prep.case, &noise);
    let perturbed_mats = build_matrices(&perturbed.perturbed)?;
    let (truth_mats, model_mats) = match cfg.error_side {
        ErrorSide::Model => (&prep.mats, &perturbed_mats),
        ErrorSide::Measurement => (&perturbed_mats, &prep.mats),
    };

    let bus_true = bus_response(truth_mats, &prep.rotor)?;
    let measured = add_measurement_noise(&bus_true, &noise);
    let model_error_norm = effective_model_error(truth_mats, model_mats)?.norm();

    let sources = source_buses(cfg, &prep.case);
    let source_dominance: BTreeMap<usize, bool> = sources
        .iter()
        .map(|&b| (b.0, dominance_check(&measured, b, 1e-12 * measured.values().amax())))
        .collect();

    let mut outcome = TrialOutcome {
        trial,
        seed,
        single: None,
        detection: None,
        detected_generators: BTreeSet::new(),
        source_dominance,
        channel_rms_error: None,
        degenerate_samples: None,
        model_error_norm,
        checks: Vec::new(),
        error: None,
    };
    let mut estimate = None;

    match cfg.localizer {
        Localizer::Single => {
            let result = localize_single(&measured, cfg.method, cfg.tie_tol)?;
            outcome.detected_generators = result
                .top_group()
                .into_iter()
                .filter_map(|b| prep.case.generator_at(b).map(|g| g.id))
                .collect();
            outcome.single = Some(result);
        }
        Localizer::Tls => {
            let est = estimate_rotor_trajectory(model_mats, &measured)?;
            let detection = detect_sources(&est.trajectory, &est.degenerate, cfg.threshold_ratio)?;
            let diff = est.trajectory.values() - prep.rotor.values();
            let errors = Trajectory::new(prep.rotor.grid(), diff, prep.rotor.labels().to_vec())
                .map(|t| t.channel_rms())
                .unwrap_or_default();
            outcome.detected_generators = detection.detected.clone();
            outcome.detection = Some(detection);
            outcome.channel_rms_error = Some(errors);
            outcome.degenerate_samples = Some(est.degenerate_count());
            estimate = Some(est.trajectory);
        }
    }
    outcome.checks = evaluate_expectations(&cfg.expect, &outcome);

    Ok(TrialArtifacts { outcome, rotor: prep.rotor.clone(), bus_true, measured, estimate })
}

fn evaluate_expectations(expect: &Expectations, outcome: &TrialOutcome) -> Vec<Check> {
    let mut checks = Vec::new();
    if let Some(bus) = expect.top_bus {
        let passed = outcome.single.as_ref().is_some_and(|r| r.top() == BusId(bus));
        checks.push(Check { name: format!("top bus is {bus}"), passed });
    }
    if let Some(flag) = expect.source_buses_dominant {
        let passed = !outcome.source_dominance.is_empty()
            && outcome.source_dominance.values().all(|&d| d == flag);
        checks.push(Check { name: format!("source buses dominant == {flag}"), passed });
    }
    if let Some(gens) = &expect.detected {
        let want: BTreeSet<usize> = gens.iter().copied().collect();
        checks.push(Check {
            name: format!("detected generators == {want:?}"),
            passed: outcome.detected_generators == want,
        });
    }
    checks
}

fn failed_outcome(cfg: &ExperimentConfig, trial: usize, err: &ExperimentError) -> TrialOutcome {
    TrialOutcome {
        trial,
        seed: cfg.seed_for_trial(trial),
        single: None,
        detection: None,
        detected_generators: BTreeSet::new(),
        source_dominance: BTreeMap::new(),
        channel_rms_error: None,
        degenerate_samples: None,
        model_error_norm: f64::NAN,
        checks: Vec::new(),
        error: Some(err.to_string()),
    }
}

fn summarize(cfg: &ExperimentConfig, n_gen: usize, trials: Vec<TrialOutcome>) -> ExperimentReport {
    let ok: Vec<&TrialOutcome> = trials.iter().filter(|t| t.error.is_none()).collect();
    let denom = ok.len().max(1) as f64;
    let detection_rate = (1..=n_gen)
        .map(|g| {
            let hits = ok.iter().filter(|t| t.detected_generators.contains(&g)).count();
            (g, hits as f64 / denom)
        })
        .collect();
    let errors: Vec<f64> = ok
        .iter()
        .filter_map(|t| t.channel_rms_error.as_ref())
        .flat_map(|e| e.iter().copied())
        .collect();
    let mean_channel_rms_error =
        (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
    let all_checks_passed = trials.iter().all(|t| t.error.is_none() && t.checks.iter().all(|c| c.passed));

    let mut notes = Vec::new();
    if cfg.grid.dt == DEFAULT_DT {
        notes.push("sampling step: default PMU rate 1/30 s".to_string());
    }
    if cfg.sources.iter().any(|s| s.components.iter().any(|c| c.amp_slope != 0.0)) {
        notes.push("linearly growing envelope slope taken from config".to_string());
    }
    ExperimentReport {
        summary: Summary {
            trials: trials.len(),
            failed_trials: trials.len() - ok.len(),
            detection_rate,
            mean_channel_rms_error,
            model_error_norms: ok.iter().map(|t| t.model_error_norm).collect(),
            all_checks_passed,
        },
        trials,
        provenance: Provenance {
            config_name: cfg.name.clone(),
            config_hash: cfg.hash(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            grid: cfg.grid.time_grid(),
            notes,
        },
    }
}

/// Runs trial 0 of the config and returns the report plus its artifacts.
pub fn run_trial_artifacts(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, TrialArtifacts), ExperimentError> {
    cfg.check()?;
    let prep = prepare(cfg)?;
    let art = run_trial(cfg, &prep, 0)?;
    let report = summarize(cfg, prep.case.n_generators(), vec![art.outcome.clone()]);
    Ok((report, art))
}

/// Single run (trial 0). Artifacts are written when `output_dir` is given.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    output_dir: Option<&Path>,
) -> Result<ExperimentReport, ExperimentError> {
    let (report, art) = run_trial_artifacts(cfg)?;
    if let Some(dir) = output_dir {
        write_artifacts(cfg, &report, &art, dir)?;
    }
    Ok(report)
}

/// Runs `cfg.trials` independent trials with seeds `base..base+trials` on the
/// rayon pool. Failed trials are recorded without stopping the others.
pub fn monte_carlo(
    cfg: &ExperimentConfig,
    output_dir: Option<&Path>,
) -> Result<ExperimentReport, ExperimentError> {
    cfg.check()?;
    let prep = prepare(cfg)?;
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| match run_trial(cfg, &prep, k) {
            Ok(art) => art.outcome,
            Err(e) => failed_outcome(cfg, k, &e),
        })
        .collect();
    let report = summarize(cfg, prep.case.n_generators(), outcomes);
    if let Some(dir) = output_dir {
        emit_text(&report.to_json(), &dir.join("report.json"))?;
        emit_text(&detection_rate_csv(&report), &dir.join("detection_rate.csv"))?;
    }
    Ok(report)
}

pub fn detection_rate_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("generator,detection_rate\r\n");
    for (g, r) in &report.summary.detection_rate {
        out.push_str(&format!("{g},{}\r\n", crate::export::format_float(*r)));
    }
    out
}

pub fn write_artifacts(
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
    art: &TrialArtifacts,
    dir: &Path,
) -> Result<(), ExperimentError> {
    emit_trajectory_csv(&art.rotor, &dir.join("rotor.csv"))?;
    emit_trajectory_csv(&art.bus_true, &dir.join("bus_true.csv"))?;
    emit_trajectory_csv(&art.measured, &dir.join("bus_measured.csv"))?;
    if let Some(est) = &art.estimate {
        emit_trajectory_csv(est, &dir.join("rotor_estimate.csv"))?;
    }
    emit_text(&report.to_json(), &dir.join("report.json"))?;

    let selected: Vec<usize> = if cfg.plot_buses.is_empty() {
        (0..art.measured.channels()).collect()
    } else {
        cfg.plot_buses.iter().map(|&b| b.saturating_sub(1)).collect()
    };
    let mut panels = vec![Panel {
        title: format!("{}: bus frequency deviations", cfg.name),
        series: art.measured.select(&selected)?,
    }];
    if let Some(est) = &art.estimate {
        panels.push(Panel {
            title: format!("{}: TLS rotor speed estimates", cfg.name),
            series: est.clone(),
        });
    }
    emit_plot(&panels, &dir.join("plot.svg"))?;
    Ok(())
}
