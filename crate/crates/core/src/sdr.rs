//! Discretization–expectation estimation of the mean subspace with
//! surrogate predictors.
//!
//! Each observed response value `t` turns the problem into a binary one,
//! `I(y ≤ t)`, whose inverse-regression direction is the centered mean of the
//! standardized surrogates below the threshold. Averaging the outer products
//! over thresholds gives the candidate matrix; its leading eigenvectors span
//! the estimated subspace and a BIC-type criterion picks how many to keep.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::sample::{check_pairing, PrimarySample, ValidationSample};

const MAX_THRESHOLDS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrEstimate {
    /// `p × q̂`, orthonormal columns.
    pub b_hat: DMatrix<f64>,
    pub q_hat: usize,
    /// Spectrum of the candidate matrix, descending.
    pub eigenvalues: DVector<f64>,
    /// Candidate matrix in standardized coordinates.
    pub candidate_matrix: DMatrix<f64>,
}

/// `ζ_i = Ĉov(X, W) Σ̂_W⁻¹ w_i`, with both moments taken from the
/// validation rows.
pub fn surrogate_predictors(
    primary_w: &DMatrix<f64>,
    validation: &ValidationSample,
) -> Result<DMatrix<f64>> {
    let p = validation.p();
    if primary_w.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "primary has p = {} but validation has p = {p}",
            primary_w.ncols()
        )));
    }
    if primary_w.nrows() < 1 {
        return Err(Error::InvalidInput("surrogate predictors need n >= 1".into()));
    }
    if validation.len() < p + 2 {
        return Err(Error::InvalidInput(format!(
            "validation covariance needs N >= p + 2 = {}, got {}",
            p + 2,
            validation.len()
        )));
    }
    let sigma_w = linalg::cross_covariance(validation.w_tilde(), validation.w_tilde());
    let condition = linalg::sym_condition(&sigma_w);
    if condition > linalg::MAX_CONDITION {
        return Err(Error::SingularCovariance { condition });
    }
    let cov_xw = linalg::cross_covariance(validation.x_tilde(), validation.w_tilde());
    let sigma_w_inv = sigma_w
        .cholesky()
        .ok_or(Error::SingularCovariance {
            condition: f64::INFINITY,
        })?
        .inverse();
    let map = cov_xw * sigma_w_inv;
    Ok(primary_w * map.transpose())
}

/// Candidate matrix together with the standardizing transform used to
/// build it.
struct Candidate {
    matrix: DMatrix<f64>,
    inv_sqrt_cov: DMatrix<f64>,
}

fn thresholds(sorted_y: &[f64]) -> Vec<f64> {
    let n = sorted_y.len();
    if n <= MAX_THRESHOLDS {
        return sorted_y.to_vec();
    }
    (0..MAX_THRESHOLDS)
        .map(|k| {
            let idx = ((k as f64 + 0.5) * n as f64 / MAX_THRESHOLDS as f64).floor() as usize;
            sorted_y[idx.min(n - 1)]
        })
        .collect()
}

fn candidate(zeta: &DMatrix<f64>, y: &[f64]) -> Result<Candidate> {
    let n = zeta.nrows();
    let p = zeta.ncols();
    if n < 2 || y.len() != n {
        return Err(Error::InvalidInput(format!(
            "candidate matrix needs n >= 2 matching rows, got {n} predictors and {} responses",
            y.len()
        )));
    }
    let centered = linalg::center(zeta);
    let cov = centered.transpose() * &centered / n as f64;
    let condition = linalg::sym_condition(&cov);
    if condition > linalg::MAX_CONDITION {
        return Err(Error::SingularCovariance { condition });
    }
    let inv_sqrt_cov = linalg::sym_inverse_sqrt(&cov);
    let standardized = centered * &inv_sqrt_cov;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let sorted_y: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    // prefix[k] = Σ of standardized rows of the k smallest responses
    let mut prefix = vec![DVector::<f64>::zeros(p)];
    for &i in &order {
        let next = prefix.last().unwrap() + standardized.row(i).transpose();
        prefix.push(next);
    }

    let ts = thresholds(&sorted_y);
    let mut matrix = DMatrix::<f64>::zeros(p, p);
    for &t in &ts {
        let count = sorted_y.partition_point(|&v| v <= t);
        let m = &prefix[count] / n as f64;
        matrix += &m * m.transpose();
    }
    matrix /= ts.len() as f64;
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    Ok(Candidate {
        matrix,
        inv_sqrt_cov,
    })
}

/// Averaged SIR candidate matrix over the response thresholds, in
/// coordinates where `ζ` has identity sample covariance.
pub fn dee_candidate_matrix(zeta: &DMatrix<f64>, y: &[f64]) -> Result<DMatrix<f64>> {
    candidate(zeta, y).map(|c| c.matrix)
}

/// BIC-type choice of the structural dimension from a descending spectrum.
pub fn select_q(eigenvalues: &[f64], n: usize) -> Result<usize> {
    let p = eigenvalues.len();
    if p == 0 || n < 2 {
        return Err(Error::InvalidInput(format!(
            "select_q needs p >= 1 and n >= 2, got p = {p}, n = {n}"
        )));
    }
    let terms: Vec<f64> = eigenvalues.iter().map(|&l| (l + 1.0).ln() - l).collect();
    let total: f64 = terms.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::DegenerateSpectrum);
    }
    let nf = n as f64;
    let penalty = 2.0 * nf.sqrt();
    let mut best = 1;
    let mut best_value = f64::NEG_INFINITY;
    let mut partial = 0.0;
    for (l, term) in terms.iter().enumerate().map(|(i, t)| (i + 1, t)) {
        partial += term;
        let lf = l as f64;
        let value = nf / 2.0 * partial / total - penalty * lf * (lf + 1.0) / (2.0 * p as f64);
        if value > best_value {
            best_value = value;
            best = l;
        }
    }
    Ok(best)
}

/// Surrogate predictors → candidate matrix → eigen-decomposition → `q̂`.
pub fn estimate_b(primary: &PrimarySample, validation: &ValidationSample) -> Result<SdrEstimate> {
    check_pairing(primary, validation)?;
    let zeta = surrogate_predictors(primary.w(), validation)?;
    let cand = candidate(&zeta, primary.y().as_slice())?;
    let (eigenvalues, vectors) = linalg::sym_eigen_desc(&cand.matrix);
    let q_hat = match select_q(eigenvalues.as_slice(), primary.n()) {
        Ok(q) => q,
        Err(Error::DegenerateSpectrum) => 1,
        Err(e) => return Err(e),
    };
    let directions = &cand.inv_sqrt_cov * vectors.columns(0, q_hat);
    let mut b_hat = linalg::orthonormalize(&directions);
    linalg::fix_signs(&mut b_hat);
    Ok(SdrEstimate {
        b_hat,
        q_hat,
        eigenvalues,
        candidate_matrix: cand.matrix,
    })
}
