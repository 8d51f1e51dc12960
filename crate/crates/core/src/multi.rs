//! Multi-source localization by per-sample total least squares.
//!
//! At each time sample the frequency-divider model reads
//! `(B_BB⁺ B_BG + Δ_error) Δω_G = −(Δω_B + e)`, with errors on both sides.
//! Each sample is solved independently as a TLS problem and the estimated
//! rotor-speed channels are scored to pick out the oscillating generators.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::divider::DividerMatrices;
use crate::signal::Trajectory;

/// `|v_qq|` below this marks the TLS problem as nongeneric.
pub const DEGENERACY_TOL: f64 = 1e-12;
/// Relative gap under which `σ_n` and `σ_{n+1}` count as repeated.
pub const MULTIPLICITY_TOL: f64 = 1e-10;
pub const DEFAULT_THRESHOLD_RATIO: f64 = 0.1;

const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum TlsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("nongeneric TLS problem: |v_qq| = {v_qq:e} (σ_min = {sigma_min:e})")]
    Degenerate { sigma_min: f64, v_qq: f64 },
    #[error("SVD failed to converge")]
    NoConvergence,
    #[error("closed-form TLS does not apply: σ_(n+1)² = {sigma_aug_sq:e} is not below σ_n(A)² = {sigma_a_sq:e}")]
    OracleInapplicable { sigma_aug_sq: f64, sigma_a_sq: f64 },
    #[error("every sample is degenerate")]
    AllDegenerate,
    #[error("threshold ratio must lie in (0, 1], got {0}")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlsSolution {
    pub x: DVector<f64>,
    /// Smallest singular value of the augmented matrix.
    pub sigma_min: f64,
    /// Last component of the smallest right singular vector, normalized ≥ 0.
    pub v_qq: f64,
    /// The smallest singular value is (numerically) repeated, so the
    /// returned singular vector is one choice among many.
    pub nongeneric_multiplicity: bool,
}

/// Total least squares solution of `A x ≈ b`.
///
/// Builds `[A | b]`, takes the right singular vector `v` of its smallest
/// singular value and returns `x = −v[..n] / v[n]`. Passing `b = −Δω_B`
/// reproduces the augmented matrix `[B_BB⁺B_BG | −Δω_B]` exactly.
pub fn tls_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<TlsSolution, TlsError> {
    let (rows, n) = a.shape();
    if b.len() != rows {
        return Err(TlsError::Dimension(format!("A has {rows} rows, b has {}", b.len())));
    }
    if rows < n + 1 {
        return Err(TlsError::Dimension(format!(
            "need at least n+1 = {} rows, got {rows}",
            n + 1
        )));
    }
    let mut aug = DMatrix::zeros(rows, n + 1);
    aug.columns_mut(0, n).copy_from(a);
    aug.set_column(n, b);

    let svd = SVD::try_new(aug, false, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(TlsError::NoConvergence)?;
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let last = order[n];
    let sigma_min = sv[last];
    let nongeneric_multiplicity = n > 0
        && (sv[order[n - 1]] - sigma_min) <= MULTIPLICITY_TOL * sv[order[0]].max(f64::MIN_POSITIVE);

    let mut v: DVector<f64> = v_t.row(last).transpose();
    if v[n] < 0.0 {
        v.neg_mut();
    }
    let v_qq = v[n];
    if v_qq.abs() < DEGENERACY_TOL {
        return Err(TlsError::Degenerate { sigma_min, v_qq });
    }
    let x = -v.rows(0, n) / v_qq;
    Ok(TlsSolution { x, sigma_min, v_qq, nongeneric_multiplicity })
}

/// Classical closed form `x = (AᵀA − σ²_{n+1} I)⁻¹ Aᵀ b`, where `σ_{n+1}` is
/// the smallest singular value of `[A | b]`. Eigenvalues come from the
/// normal matrices rather than an SVD, so this path shares no code with
/// [`tls_solve`]. Requires `σ_{n+1} < σ_n(A)` strictly.
pub fn tls_closed_form(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, TlsError> {
    let (rows, n) = a.shape();
    if b.len() != rows || rows < n + 1 {
        return Err(TlsError::Dimension(format!("A is {rows}x{n}, b has {}", b.len())));
    }
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let btb = b.dot(b);

    let mut normal = DMatrix::zeros(n + 1, n + 1);
    normal.view_mut((0, 0), (n, n)).copy_from(&ata);
    normal.view_mut((0, n), (n, 1)).copy_from(&atb);
    normal.view_mut((n, 0), (1, n)).copy_from(&atb.transpose());
    normal[(n, n)] = btb;

    let sigma_aug_sq = SymmetricEigen::new(normal).eigenvalues.min().max(0.0);
    let sigma_a_sq = SymmetricEigen::new(ata.clone()).eigenvalues.min();
    let gap = sigma_a_sq - sigma_aug_sq;
    if gap <= MULTIPLICITY_TOL * sigma_a_sq.abs().max(btb).max(f64::MIN_POSITIVE) {
        return Err(TlsError::OracleInapplicable { sigma_aug_sq, sigma_a_sq });
    }
    let shifted = ata - DMatrix::identity(n, n) * sigma_aug_sq;
    shifted
        .lu()
        .solve(&atb)
        .ok_or(TlsError::OracleInapplicable { sigma_aug_sq, sigma_a_sq })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotorEstimate {
    /// One channel per generator, on the measurement grid.
    pub trajectory: Trajectory,
    /// Samples whose TLS problem was degenerate; these hold zeros.
    pub degenerate: Vec<bool>,
    pub nongeneric: Vec<bool>,
}

impl RotorEstimate {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Estimates rotor-speed deviations sample by sample from bus measurements,
/// using the analyst's (possibly erroneous) matrices.
pub fn estimate_rotor_trajectory(
    assumed: &DividerMatrices,
    measured: &Trajectory,
) -> Result<RotorEstimate, TlsError> {
    if measured.channels() != assumed.n_buses() {
        return Err(TlsError::Dimension(format!(
            "expected {} bus channels, got {}",
            assumed.n_buses(),
            measured.channels()
        )));
    }
    let model = assumed.model_matrix();
    let n = assumed.n_generators();
    let solved: Vec<Result<Option<TlsSolution>, TlsError>> = (0..measured.samples())
        .into_par_iter()
        .map(|k| {
            let rhs = -measured.values().column(k).into_owned();
            match tls_solve(&model, &rhs) {
                Ok(sol) => Ok(Some(sol)),
                Err(TlsError::Degenerate { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut values = DMatrix::zeros(n, measured.samples());
    let mut degenerate = Vec::with_capacity(solved.len());
    let mut nongeneric = Vec::with_capacity(solved.len());
    for (k, res) in solved.into_iter().enumerate() {
        match res? {
            Some(sol) => {
                values.set_column(k, &sol.x);
                degenerate.push(false);
                nongeneric.push(sol.nongeneric_multiplicity);
            }
            None => {
                degenerate.push(true);
                nongeneric.push(false);
            }
        }
    }
    let labels = (1..=n).map(|g| format!("gen{g}")).collect();
    let trajectory = Trajectory::new(measured.grid(), values, labels)
        .map_err(|e| TlsError::Dimension(e.to_string()))?;
    Ok(RotorEstimate { trajectory, degenerate, nongeneric })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceDetection {
    /// RMS of each estimated channel over non-degenerate samples, by generator id.
    pub generator_scores: BTreeMap<usize, f64>,
    pub detected: BTreeSet<usize>,
    pub threshold_ratio: f64,
}

/// Flags generators whose score reaches `threshold_ratio` of the largest score.
/// Channel `i` is generator `i + 1`.
pub fn detect_sources(
    estimated: &Trajectory,
    degenerate: &[bool],
    threshold_ratio: f64,
) -> Result<SourceDetection, TlsError> {
    if !(threshold_ratio > 0.0 && threshold_ratio <= 1.0) {
        return Err(TlsError::BadThreshold(threshold_ratio));
    }
    if degenerate.len() != estimated.samples() {
        return Err(TlsError::Dimension(format!(
            "mask has {} entries for {} samples",
            degenerate.len(),
            estimated.samples()
        )));
    }
    let valid: Vec<usize> = (0..estimated.samples()).filter(|&k| !degenerate[k]).collect();
    if valid.is_empty() {
        return Err(TlsError::AllDegenerate);
    }
    let generator_scores: BTreeMap<usize, f64> = estimated
        .values()
        .row_iter()
        .enumerate()
        .map(|(i, row)| {
            let ss: f64 = valid.iter().map(|&k| row[k] * row[k]).sum();
            (i + 1, (ss / valid.len() as f64).sqrt())
        })
        .collect();
    let best = generator_scores.values().cloned().fold(0.0, f64::max);
    let detected = if best > 0.0 {
        generator_scores
            .iter()
            .filter(|(_, &s)| s >= threshold_ratio * best)
            .map(|(&g, _)| g)
            .collect()
    } else {
        BTreeSet::new()
    };
    Ok(SourceDetection { generator_scores, detected, threshold_ratio })
}

/// Realized model error: assumed `B_BB⁺B_BG` minus the true one.
pub fn effective_model_error(
    true_mats: &DividerMatrices,
    assumed_mats: &DividerMatrices,
) -> Result<DMatrix<f64>, TlsError> {
    let (t, a) = (true_mats.transfer(), assumed_mats.transfer());
    if t.shape() != a.shape() {
        return Err(TlsError::Dimension(format!(
            "{:?} vs {:?}",
            t.shape(),
            a.shape()
        )));
    }
    // model = −transfer
    Ok(t - a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TimeGrid;

    #[test]
    fn one_dimensional_consistent() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let sol = tls_solve(&a, &b).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!(sol.sigma_min.abs() < 1e-12);
        assert!(sol.v_qq > 0.0);
    }

    #[test]
    fn consistent_system_exact() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 1.0, 0.0, 2.0]);
        let x0 = DVector::from_vec(vec![0.7, -1.3]);
        let sol = tls_solve(&a, &(&a * &x0)).unwrap();
        assert!((sol.x - &x0).amax() < 1e-10);
        let cf = tls_closed_form(&a, &(&a * &x0)).unwrap();
        assert!((cf - x0).amax() < 1e-10);
    }

    #[test]
    fn dimension_errors() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DVector::zeros(2);
        assert!(matches!(tls_solve(&a, &b), Err(TlsError::Dimension(_))));
        let b3 = DVector::zeros(3);
        assert!(matches!(tls_solve(&DMatrix::zeros(2, 1), &b3), Err(TlsError::Dimension(_))));
    }

    #[test]
    fn degenerate_instance_is_flagged() {
        // The zero column of A is the smallest right singular direction,
        // orthogonal to b, so v_qq = 0.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert!(matches!(tls_solve(&a, &b), Err(TlsError::Degenerate { .. })));
    }

    #[test]
    fn closed_form_rejects_repeated_singular_value() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert!(matches!(
            tls_closed_form(&a, &b),
            Err(TlsError::OracleInapplicable { .. })
        ));
        // tls_solve still answers, flagging the repeated singular value.
        let sol = tls_solve(&a, &b).unwrap();
        assert!(sol.nongeneric_multiplicity);
    }

    #[test]
    fn detection_on_exact_channels() {
        let g = TimeGrid::new(0.0, 0.1, 50);
        let values = DMatrix::from_fn(5, 50, |i, k| match i {
            0 => (0.3 * k as f64).sin(),
            4 => 0.5 * (0.7 * k as f64).cos(),
            _ => 0.0,
        });
        let labels = (1..=5).map(|i| format!("gen{i}")).collect();
        let t = Trajectory::new(g, values, labels).unwrap();
        let mask = vec![false; 50];
        let d = detect_sources(&t, &mask, 0.1).unwrap();
        assert_eq!(d.detected, BTreeSet::from([1, 5]));

        let single = t.select(&[0]).unwrap();
        for ratio in [0.01, 0.5, 1.0] {
            let d = detect_sources(&single, &mask, ratio).unwrap();
            assert_eq!(d.detected, BTreeSet::from([1]));
        }
        assert_eq!(detect_sources(&t, &mask, 0.0), Err(TlsError::BadThreshold(0.0)));
        assert_eq!(detect_sources(&t, &[true; 50], 0.1), Err(TlsError::AllDegenerate));
    }

    #[test]
    fn degenerate_samples_are_excluded_from_scores() {
        let g = TimeGrid::new(0.0, 0.1, 2);
        let values = DMatrix::from_row_slice(1, 2, &[1.0, 100.0]);
        let t = Trajectory::new(g, values, vec!["gen1".into()]).unwrap();
        let d = detect_sources(&t, &[false, true], 0.1).unwrap();
        assert_eq!(d.generator_scores[&1], 1.0);
    }
}
