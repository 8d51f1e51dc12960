//! Frequency-divider matrices.
//!
//! Bus frequency deviations relate to rotor speed deviations through
//! `B_BG Δω_G = −B_BB Δω_B`, with `B_BB = B_BUS + B_GG`. Solving with the
//! pseudo-inverse gives the bus-response transfer `−B_BB⁺ B_BG`.
//!
//! Sign convention: `B_BUS` is the branch-susceptance Laplacian (positive
//! diagonal), `B_GG(i,i) = +1/x_int` and `B_BG(i,g) = −1/x_int`. With these
//! signs the transfer matrix is elementwise nonnegative and its rows sum to
//! one.

use nalgebra::{DMatrix, SVD};
use serde::Serialize;
use thiserror::Error;

use crate::case::{validate_case, BusId, NetworkCase, Violation};
use crate::signal::Trajectory;

/// Default relative singular-value cutoff for the pseudo-inverse.
pub const DEFAULT_RCOND: f64 = 1e-12;

/// Tolerance used by [`dominance_report`] for signs and margins.
pub const PROPERTY_TOL: f64 = 1e-10;

const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("SVD failed to converge for a {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum DividerError {
    #[error("invalid case: {0:?}")]
    InvalidCase(Vec<Violation>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: expected {expected} channels, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

/// SVD-based Moore–Penrose pseudo-inverse. Singular values at or below
/// `rcond · σ_max` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>, LinalgError> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(LinalgError::SvdNoConvergence { rows, cols })?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = rcond * sigma_max;

    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        // out += v_k u_kᵀ / σ_k
        let v_k = v_t.row(k).transpose();
        let u_k = u.column(k);
        out.ger(1.0 / s, &v_k, &u_k, 1.0);
    }
    Ok(out)
}

/// Numerical rank under the same cutoff rule as [`pseudo_inverse`].
pub fn numerical_rank(m: &DMatrix<f64>, rcond: f64) -> Result<usize, LinalgError> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(0);
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(LinalgError::SvdNoConvergence { rows, cols })?;
    let cutoff = rcond * svd.singular_values.max();
    Ok(svd
        .singular_values
        .iter()
        .filter(|&&s| s > cutoff && s > 0.0)
        .count())
}

/// Relative Frobenius residuals of the four Penrose identities:
/// `‖M M⁺ M − M‖/‖M‖`, `‖M⁺ M M⁺ − M⁺‖/‖M⁺‖`, and the symmetry defects of
/// `M M⁺` and `M⁺ M` relative to their own norms.
pub fn penrose_residuals(m: &DMatrix<f64>, pinv: &DMatrix<f64>) -> [f64; 4] {
    let rel = |diff: DMatrix<f64>, base: f64| {
        let d = diff.norm();
        if base > 0.0 {
            d / base
        } else {
            d
        }
    };
    let mp = m * pinv;
    let pm = pinv * m;
    [
        rel(&mp * m - m, m.norm()),
        rel(&pm * pinv - pinv, pinv.norm()),
        rel(mp.transpose() - &mp, mp.norm()),
        rel(pm.transpose() - &pm, pm.norm()),
    ]
}

#[derive(Debug, Clone)]
pub struct DividerMatrices {
    b_bus: DMatrix<f64>,
    b_gg: DMatrix<f64>,
    b_bg: DMatrix<f64>,
    b_bb: DMatrix<f64>,
    b_bb_pinv: DMatrix<f64>,
    transfer: DMatrix<f64>,
    generator_buses: Vec<BusId>,
    rank: usize,
}

impl DividerMatrices {
    pub fn b_bus(&self) -> &DMatrix<f64> {
        &self.b_bus
    }
    pub fn b_gg(&self) -> &DMatrix<f64> {
        &self.b_gg
    }
    pub fn b_bg(&self) -> &DMatrix<f64> {
        &self.b_bg
    }
    pub fn b_bb(&self) -> &DMatrix<f64> {
        &self.b_bb
    }
    pub fn b_bb_pinv(&self) -> &DMatrix<f64> {
        &self.b_bb_pinv
    }
    /// `−B_BB⁺ B_BG`, mapping rotor speed deviations to bus frequency deviations.
    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.transfer
    }
    /// `B_BB⁺ B_BG`, the coefficient matrix of the TLS model (`= −transfer`).
    pub fn model_matrix(&self) -> DMatrix<f64> {
        -&self.transfer
    }
    pub fn n_buses(&self) -> usize {
        self.b_bus.nrows()
    }
    pub fn n_generators(&self) -> usize {
        self.b_bg.ncols()
    }
    /// Bus of each generator, in generator-id order.
    pub fn generator_buses(&self) -> &[BusId] {
        &self.generator_buses
    }
    /// Numerical rank of `B_BB`.
    pub fn rank(&self) -> usize {
        self.rank
    }
    /// True when `B_BB` was rank deficient and the pseudo-inverse differs
    /// from an ordinary inverse.
    pub fn is_singular(&self) -> bool {
        self.rank < self.n_buses()
    }
}

pub fn build_matrices(case: &NetworkCase) -> Result<DividerMatrices, DividerError> {
    build_matrices_with_rcond(case, DEFAULT_RCOND)
}

pub fn build_matrices_with_rcond(
    case: &NetworkCase,
    rcond: f64,
) -> Result<DividerMatrices, DividerError> {
    let violations = validate_case(case);
    if !violations.is_empty() {
        return Err(DividerError::InvalidCase(violations));
    }
    let n_bus = case.n_buses;
    let gens = case.generators_by_id();
    let n_gen = gens.len();

    let mut b_bus = DMatrix::zeros(n_bus, n_bus);
    for br in &case.branches {
        let (i, j) = (br.from.index(), br.to.index());
        let b = br.susceptance();
        b_bus[(i, j)] -= b;
        b_bus[(j, i)] -= b;
        b_bus[(i, i)] += b;
        b_bus[(j, j)] += b;
    }

    let mut b_gg = DMatrix::zeros(n_bus, n_bus);
    let mut b_bg = DMatrix::zeros(n_bus, n_gen);
    for (col, g) in gens.iter().enumerate() {
        let i = g.bus.index();
        let b = g.internal_susceptance();
        b_gg[(i, i)] = b;
        b_bg[(i, col)] = -b;
    }

    let b_bb = &b_bus + &b_gg;
    let b_bb_pinv = pseudo_inverse(&b_bb, rcond)?;
    let rank = numerical_rank(&b_bb, rcond)?;
    let transfer = -(&b_bb_pinv * &b_bg);

    Ok(DividerMatrices {
        b_bus,
        b_gg,
        b_bg,
        b_bb,
        b_bb_pinv,
        transfer,
        generator_buses: gens.iter().map(|g| g.bus).collect(),
        rank,
    })
}

/// Maps a rotor-speed trajectory (one channel per generator) to bus
/// frequency deviations on the same time grid.
pub fn bus_response(
    mats: &DividerMatrices,
    rotor: &Trajectory,
) -> Result<Trajectory, DividerError> {
    if rotor.channels() != mats.n_generators() {
        return Err(DividerError::Dimension {
            expected: mats.n_generators(),
            actual: rotor.channels(),
        });
    }
    let values = mats.transfer() * rotor.values();
    let labels = (1..=mats.n_buses()).map(|i| format!("bus{i}")).collect();
    Ok(Trajectory::new(rotor.grid(), values, labels).expect("linear map of finite data"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport {
    /// `|m_ii| ≥ Σ_{j≠i} |m_ij|` for every row, within tolerance.
    pub row_dominant: bool,
    /// Same condition over columns.
    pub col_dominant: bool,
    /// Every entry ≥ −tolerance.
    pub nonneg: bool,
    /// Every column attains its maximum on the diagonal.
    pub diagonal_column_max: bool,
    /// Smallest of the row and column dominance margins.
    pub worst_margin: f64,
    pub min_entry: f64,
}

/// Evaluates dominance and sign properties of `B_BB⁺`.
pub fn dominance_report(mats: &DividerMatrices) -> DominanceReport {
    matrix_dominance(mats.b_bb_pinv())
}

pub fn matrix_dominance(m: &DMatrix<f64>) -> DominanceReport {
    let n = m.nrows().min(m.ncols());
    let mut row_margin = f64::INFINITY;
    let mut col_margin = f64::INFINITY;
    let mut column_max = true;
    for i in 0..n {
        let d = m[(i, i)].abs();
        let row_off: f64 = m.row(i).iter().map(|v| v.abs()).sum::<f64>() - d;
        let col_off: f64 = m.column(i).iter().map(|v| v.abs()).sum::<f64>() - d;
        row_margin = row_margin.min(d - row_off);
        col_margin = col_margin.min(d - col_off);
        let col_max = m.column(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m[(i, i)] < col_max - PROPERTY_TOL {
            column_max = false;
        }
    }
    let min_entry = m.iter().cloned().fold(f64::INFINITY, f64::min);
    DominanceReport {
        row_dominant: row_margin >= -PROPERTY_TOL,
        col_dominant: col_margin >= -PROPERTY_TOL,
        nonneg: min_entry >= -PROPERTY_TOL,
        diagonal_column_max: column_max,
        worst_margin: row_margin.min(col_margin),
        min_entry,
    }
}
