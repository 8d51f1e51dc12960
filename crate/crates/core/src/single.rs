//! Magnitude-dominance localization of a single oscillation source.
//!
//! With one source and noiseless data, every bus frequency is a nonnegative
//! multiple of the source rotor speed and the source bus carries the
//! largest multiple. Ranking buses by signal magnitude therefore needs no
//! network model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::BusId;
use crate::signal::Trajectory;

pub const DEFAULT_TIE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Largest absolute sample.
    MagnitudeMax,
    /// Root-mean-square over samples.
    #[default]
    MagnitudeRms,
}

#[derive(Debug, Error, PartialEq)]
pub enum LocateError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedBus {
    pub bus: BusId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationResult {
    /// Every measured bus, highest score first.
    pub ranking: Vec<RankedBus>,
    /// Groups of two or more buses with scores within the relative tie tolerance.
    pub ties: Vec<Vec<BusId>>,
    pub method: Method,
    /// Whether the top bus dominates every other bus at every sample.
    pub dominant_everywhere: Option<bool>,
}

impl LocalizationResult {
    pub fn top(&self) -> BusId {
        self.ranking[0].bus
    }

    /// Buses tied with the top-ranked bus, including it.
    pub fn top_group(&self) -> Vec<BusId> {
        let top = self.top();
        self.ties
            .iter()
            .find(|g| g.contains(&top))
            .cloned()
            .unwrap_or_else(|| vec![top])
    }

    /// `(s₁ − s₂)/s₁` for the two best scores; zero when fewer than two buses
    /// or all scores are zero.
    pub fn relative_gap(&self) -> f64 {
        match self.ranking.as_slice() {
            [first, second, ..] if first.score > 0.0 => (first.score - second.score) / first.score,
            _ => 0.0,
        }
    }
}

fn channel_score(row: impl Iterator<Item = f64>, method: Method, samples: usize) -> f64 {
    match method {
        Method::MagnitudeMax => row.map(f64::abs).fold(0.0, f64::max),
        Method::MagnitudeRms => (row.map(|v| v * v).sum::<f64>() / samples as f64).sqrt(),
    }
}

fn within_tol(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Ranks buses (channel `i` is bus `i + 1`) by oscillation magnitude.
pub fn localize_single(
    bus_traj: &Trajectory,
    method: Method,
    tie_tol: f64,
) -> Result<LocalizationResult, LocateError> {
    if bus_traj.is_empty() {
        return Err(LocateError::EmptyTrajectory);
    }
    let samples = bus_traj.samples();
    let mut ranking: Vec<RankedBus> = bus_traj
        .values()
        .row_iter()
        .enumerate()
        .map(|(i, row)| RankedBus {
            bus: BusId::from_index(i),
            score: channel_score(row.iter().copied(), method, samples),
        })
        .collect();
    // Stable sort keeps bus order among exact ties.
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut ties = Vec::new();
    let mut group = vec![ranking[0].bus];
    for pair in ranking.windows(2) {
        if within_tol(pair[0].score, pair[1].score, tie_tol) {
            group.push(pair[1].bus);
        } else {
            if group.len() > 1 {
                ties.push(std::mem::take(&mut group));
            }
            group = vec![pair[1].bus];
        }
    }
    if group.len() > 1 {
        ties.push(group);
    }

    let peak = bus_traj.values().amax();
    let dominant = dominance_check(bus_traj, ranking[0].bus, 1e-12 * peak);
    Ok(LocalizationResult {
        ranking,
        ties,
        method,
        dominant_everywhere: Some(dominant),
    })
}

/// True iff `|x_candidate(t_k)| ≥ |x_j(t_k)| − tol` for every sample `k` and bus `j`.
pub fn dominance_check(bus_traj: &Trajectory, candidate: BusId, tol: f64) -> bool {
    let values = bus_traj.values();
    let c = candidate.index();
    if c >= values.nrows() {
        return false;
    }
    values.column_iter().all(|sample| {
        let own = sample[c].abs();
        sample.iter().all(|v| own >= v.abs() - tol)
    })
}
