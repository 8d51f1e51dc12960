//! Rotor-speed trajectories, PMU measurement noise and parameter perturbation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::NetworkCase;

/// PMU reporting interval, seconds.
pub const DEFAULT_DT: f64 = 1.0 / 30.0;
pub const DEFAULT_DURATION: f64 = 20.0;
/// Slope of the linearly growing envelope `1 + slope·t`, per second.
pub const DEFAULT_ENVELOPE_SLOPE: f64 = 0.05;

/// Lower clamp for relative parameter errors, keeping reactances positive.
pub const MIN_RELATIVE_ERROR: f64 = -0.9;

// Independent ChaCha streams so measurement noise and parameter errors drawn
// from the same seed do not share random numbers.
const MEASUREMENT_STREAM: u64 = 1;
const PARAMETER_STREAM: u64 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("generator id {id} is outside 1..={n}")]
    GeneratorOutOfRange { id: usize, n: usize },
    #[error("generator id {0} has more than one oscillation spec")]
    DuplicateGenerator(usize),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("trajectory shape mismatch: {0}")]
    Shape(String),
    #[error("trajectory contains non-finite values")]
    NonFinite,
}

/// Uniform sampling grid `start + k·dt`, `k = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub dt: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(start: f64, dt: f64, count: usize) -> Self {
        TimeGrid { start, dt, count }
    }

    /// Grid starting at zero with `round(duration / dt)` samples.
    pub fn from_duration(dt: f64, duration: f64) -> Self {
        let count = (duration / dt).round().max(0.0) as usize;
        TimeGrid { start: 0.0, dt, count }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.time(k))
    }

    /// Time between the first and last sample.
    pub fn span(&self) -> f64 {
        self.count.saturating_sub(1) as f64 * self.dt
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::from_duration(DEFAULT_DT, DEFAULT_DURATION)
    }
}

/// Multichannel uniformly sampled series; `values` is channels × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl Trajectory {
    pub fn new(
        grid: TimeGrid,
        values: DMatrix<f64>,
        labels: Vec<String>,
    ) -> Result<Self, SignalError> {
        if !(grid.dt > 0.0 && grid.dt.is_finite()) {
            return Err(SignalError::BadStep(grid.dt));
        }
        if values.ncols() != grid.count {
            return Err(SignalError::Shape(format!(
                "{} samples for a {}-point grid",
                values.ncols(),
                grid.count
            )));
        }
        if labels.len() != values.nrows() {
            return Err(SignalError::Shape(format!(
                "{} labels for {} channels",
                labels.len(),
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite);
        }
        Ok(Trajectory { grid, values, labels })
    }

    /// All-zero trajectory with labels `ch1..chN`.
    pub fn zeros(grid: TimeGrid, channels: usize) -> Self {
        let labels = (1..=channels).map(|i| format!("ch{i}")).collect();
        Trajectory::new(grid, DMatrix::zeros(channels, grid.count), labels)
            .expect("zero trajectory")
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }
    pub fn samples(&self) -> usize {
        self.values.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.samples() == 0 || self.channels() == 0
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, SignalError> {
        if labels.len() != self.channels() {
            return Err(SignalError::Shape(format!(
                "{} labels for {} channels",
                labels.len(),
                self.channels()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Keeps the given zero-based channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Result<Self, SignalError> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels()) {
            return Err(SignalError::Shape(format!("no channel {bad}")));
        }
        let values = self.values.select_rows(channels.iter());
        let labels = channels.iter().map(|&c| self.labels[c].clone()).collect();
        Trajectory::new(self.grid, values, labels)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Trajectory {
            grid: self.grid,
            values: &self.values * c,
            labels: self.labels.clone(),
        }
    }

    /// Root-mean-square of each channel.
    pub fn channel_rms(&self) -> Vec<f64> {
        let n = self.samples().max(1) as f64;
        self.values
            .row_iter()
            .map(|row| (row.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
            .collect()
    }
}

/// One term `(amp0 + amp_slope·t)·sin(freq·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub amp0: f64,
    #[serde(default)]
    pub amp_slope: f64,
    #[serde(rename = "freq")]
    pub freq_rad_per_s: f64,
    #[serde(default, rename = "phase")]
    pub phase_rad: f64,
}

impl Component {
    pub fn sine(amp: f64, freq_rad_per_s: f64) -> Self {
        Component { amp0: amp, amp_slope: 0.0, freq_rad_per_s, phase_rad: 0.0 }
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.amp0 + self.amp_slope * t) * (self.freq_rad_per_s * t + self.phase_rad).sin()
    }
}

/// Forced oscillation imposed on one generator's rotor speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationSpec {
    #[serde(rename = "generator")]
    pub generator_id: usize,
    pub components: Vec<Component>,
}

impl OscillationSpec {
    /// `sin(1.41 t) + sin(0.2 t)`.
    pub fn dual_tone(generator_id: usize) -> Self {
        OscillationSpec {
            generator_id,
            components: vec![Component::sine(1.0, 1.41), Component::sine(1.0, 0.2)],
        }
    }

    /// `(1 + slope·t)·sin(1.13 t)`.
    pub fn ramped_tone(generator_id: usize, slope: f64) -> Self {
        OscillationSpec {
            generator_id,
            components: vec![Component {
                amp0: 1.0,
                amp_slope: slope,
                freq_rad_per_s: 1.13,
                phase_rad: 0.0,
            }],
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.components.iter().map(|c| c.value(t)).sum()
    }
}

/// Builds an `n`-channel rotor trajectory; generators without a spec stay at zero.
pub fn generate_rotor(
    specs: &[OscillationSpec],
    n: usize,
    grid: TimeGrid,
) -> Result<Trajectory, SignalError> {
    let mut seen = vec![false; n];
    for s in specs {
        if s.generator_id == 0 || s.generator_id > n {
            return Err(SignalError::GeneratorOutOfRange { id: s.generator_id, n });
        }
        if std::mem::replace(&mut seen[s.generator_id - 1], true) {
            return Err(SignalError::DuplicateGenerator(s.generator_id));
        }
    }
    let mut values = DMatrix::zeros(n, grid.count);
    for s in specs {
        let row = s.generator_id - 1;
        for (k, t) in grid.times().enumerate() {
            values[(row, k)] = s.value(t);
        }
    }
    let labels = (1..=n).map(|g| format!("gen{g}")).collect();
    Trajectory::new(grid, values, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Variance of the additive measurement error, per-unit².
    #[serde(default)]
    pub meas_variance: f64,
    /// Variance of the relative reactance error.
    #[serde(default)]
    pub param_variance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::noiseless(0)
    }
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        NoiseSpec { meas_variance: 0.0, param_variance: 0.0, seed }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseSpec { seed, ..self }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

fn gaussian(variance: f64) -> Normal<f64> {
    Normal::new(0.0, variance.max(0.0).sqrt()).expect("finite nonnegative std")
}

/// Adds i.i.d. zero-mean Gaussian noise to every sample of every channel.
pub fn add_measurement_noise(traj: &Trajectory, spec: &NoiseSpec) -> Trajectory {
    if spec.meas_variance <= 0.0 {
        return traj.clone();
    }
    let dist = gaussian(spec.meas_variance);
    let mut rng = spec.rng(MEASUREMENT_STREAM);
    let mut values = traj.values.clone();
    // Column-major walk: sample by sample, channel within sample.
    for v in values.iter_mut() {
        *v += rng.sample(dist);
    }
    Trajectory { grid: traj.grid, values, labels: traj.labels.clone() }
}

/// Entity whose reactance was perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Entity {
    /// Zero-based branch position in the case file.
    Branch(usize),
    /// Generator id.
    Generator(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedCase {
    pub base: NetworkCase,
    pub perturbed: NetworkCase,
    /// `(x̃ − x)/x` per branch and per generator internal reactance.
    pub relative_errors: BTreeMap<Entity, f64>,
}

/// Scales every branch reactance and generator internal reactance by
/// `1 + δ`, with `δ ~ N(0, param_variance)` clamped below at −0.9.
pub fn perturb_case(case: &NetworkCase, spec: &NoiseSpec) -> PerturbedCase {
    let mut perturbed = case.clone();
    let mut relative_errors = BTreeMap::new();
    let dist = gaussian(spec.param_variance);
    let mut rng = spec.rng(PARAMETER_STREAM);
    let mut draw = || {
        if spec.param_variance > 0.0 {
            rng.sample(dist).max(MIN_RELATIVE_ERROR)
        } else {
            0.0
        }
    };
    for (k, br) in perturbed.branches.iter_mut().enumerate() {
        let delta = draw();
        br.reactance_pu *= 1.0 + delta;
        relative_errors.insert(Entity::Branch(k), delta);
    }
    for g in perturbed.generators.iter_mut() {
        let delta = draw();
        // Scaling both axes scales their mean by the same factor.
        g.xd_pu *= 1.0 + delta;
        g.xq_pu *= 1.0 + delta;
        relative_errors.insert(Entity::Generator(g.id), delta);
    }
    PerturbedCase { base: case.clone(), perturbed, relative_errors }
}

/// Linear interpolation onto a grid with step `new_dt` over the same span.
pub fn resample(traj: &Trajectory, new_dt: f64) -> Result<Trajectory, SignalError> {
    if traj.samples() == 0 {
        return Err(SignalError::EmptyTrajectory);
    }
    if !(new_dt > 0.0 && new_dt.is_finite()) {
        return Err(SignalError::BadStep(new_dt));
    }
    let old = traj.grid;
    let span = old.span();
    // Small slack so spans that are exact multiples of new_dt keep their end point.
    let count = (span / new_dt + 1e-9).floor() as usize + 1;
    let grid = TimeGrid::new(old.start, new_dt, count);
    let last = old.count - 1;
    let values = DMatrix::from_fn(traj.channels(), count, |ch, k| {
        let mut pos = (k as f64 * new_dt) / old.dt;
        if (pos - pos.round()).abs() < 1e-9 {
            pos = pos.round();
        }
        let lo = (pos.floor() as usize).min(last);
        let hi = (lo + 1).min(last);
        let w = (pos - lo as f64).clamp(0.0, 1.0);
        let a = traj.values[(ch, lo)];
        let b = traj.values[(ch, hi)];
        if w == 0.0 {
            a
        } else {
            a + w * (b - a)
        }
    });
    Trajectory::new(grid, values, traj.labels.clone())
}
