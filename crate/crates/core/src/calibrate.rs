//! Kernel calibration of `r(βᵀw, β) = E[g(βᵀX) | βᵀW = βᵀw]` from the
//! validation sample, and the residual sets built from it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::LinkFunction;
use crate::kernels::KernelSpec;
use crate::sample::{check_pairing, PrimarySample, ValidationSample};

/// Nadaraya–Watson smoother over stored `(abscissa, ordinate)` pairs, sorted
/// by abscissa so each query only visits its kernel window.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    kernel: KernelSpec,
    bandwidth: f64,
    abscissae: Vec<f64>,
    ordinates: Vec<f64>,
    /// `rank[s]` is the sorted position of input row `s`.
    rank: Vec<usize>,
}

impl Calibrator {
    pub fn new(
        kernel: KernelSpec,
        bandwidth: f64,
        abscissae: &[f64],
        ordinates: &[f64],
    ) -> Result<Self> {
        if abscissae.is_empty() || abscissae.len() != ordinates.len() {
            return Err(Error::InvalidInput(
                "calibration needs matching, nonempty abscissae and ordinates".into(),
            ));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidInput(format!(
                "calibration bandwidth must be positive, got {bandwidth}"
            )));
        }
        let mut order: Vec<usize> = (0..abscissae.len()).collect();
        order.sort_by(|&a, &b| abscissae[a].total_cmp(&abscissae[b]));
        let mut rank = vec![0; order.len()];
        for (pos, &s) in order.iter().enumerate() {
            rank[s] = pos;
        }
        Ok(Self {
            kernel,
            bandwidth,
            abscissae: order.iter().map(|&s| abscissae[s]).collect(),
            ordinates: order.iter().map(|&s| ordinates[s]).collect(),
            rank,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    /// Kernel estimate at `u`, or [`Error::EmptyWindow`].
    pub fn try_eval(&self, u: f64) -> Result<f64> {
        self.window_estimate(u, None).ok_or(Error::EmptyWindow { query: u })
    }

    /// Kernel estimate at `u`; falls back to the nearest ordinate when the
    /// window is empty.
    pub fn eval(&self, u: f64) -> f64 {
        self.window_estimate(u, None)
            .unwrap_or_else(|| self.nearest(u, None))
    }

    /// Estimate at `u` with input row `s` left out.
    pub fn eval_leave_out(&self, u: f64, s: usize) -> f64 {
        let skip = self.rank[s];
        if self.len() == 1 {
            return self.ordinates[0];
        }
        self.window_estimate(u, Some(skip))
            .unwrap_or_else(|| self.nearest(u, Some(skip)))
    }

    fn window_estimate(&self, u: f64, skip: Option<usize>) -> Option<f64> {
        let reach = self.bandwidth * self.kernel.support_radius;
        let lo = self.abscissae.partition_point(|&a| a < u - reach);
        let hi = self.abscissae.partition_point(|&a| a <= u + reach);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in lo..hi {
            if Some(i) == skip {
                continue;
            }
            let k = self.kernel.eval((u - self.abscissae[i]) / self.bandwidth) / self.bandwidth;
            num += k * self.ordinates[i];
            den += k;
        }
        (den > 0.0).then(|| num / den)
    }

    fn nearest(&self, u: f64, skip: Option<usize>) -> f64 {
        let pos = self.abscissae.partition_point(|&a| a < u);
        let mut best: Option<(f64, usize)> = None;
        // candidates around the insertion point, stepping over the skipped row
        let lo = pos.saturating_sub(2);
        let hi = (pos + 2).min(self.len());
        for i in lo..hi {
            if Some(i) == skip {
                continue;
            }
            let d = (self.abscissae[i] - u).abs();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map_or(self.ordinates[0], |(_, i)| self.ordinates[i])
    }
}

fn index_values(rows: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (rows * beta).iter().copied().collect()
}

fn check_beta(validation: &ValidationSample, beta: &DVector<f64>) -> Result<()> {
    if beta.len() != validation.p() {
        return Err(Error::DimensionMismatch(format!(
            "β has length {} but the data have p = {}",
            beta.len(),
            validation.p()
        )));
    }
    Ok(())
}

fn calibrator_for(
    validation: &ValidationSample,
    beta_hat: &DVector<f64>,
    link: &LinkFunction,
    v: f64,
) -> Result<Calibrator> {
    let abscissae = index_values(validation.w_tilde(), beta_hat);
    let ordinates: Vec<f64> = index_values(validation.x_tilde(), beta_hat)
        .into_iter()
        .map(|t| link.evaluate(t))
        .collect();
    Calibrator::new(KernelSpec::QUARTIC, v, &abscissae, &ordinates)
}

/// `r̂` from all validation rows.
pub fn fit_r_full(
    validation: &ValidationSample,
    beta_hat: &DVector<f64>,
    link: &LinkFunction,
    v: f64,
) -> Result<Calibrator> {
    check_beta(validation, beta_hat)?;
    calibrator_for(validation, beta_hat, link, v)
}

/// `(r̂₍₁₎, r̂₍₂₎)` from the first and second halves of the validation rows.
/// An odd trailing row is dropped first.
pub fn fit_r_split(
    validation: &ValidationSample,
    beta_hat: &DVector<f64>,
    link: &LinkFunction,
    v: f64,
) -> Result<(Calibrator, Calibrator)> {
    check_beta(validation, beta_hat)?;
    let even = validation.even();
    let half = even.len() / 2;
    Ok((
        calibrator_for(&even.rows(0..half), beta_hat, link, v)?,
        calibrator_for(&even.rows(half..2 * half), beta_hat, link, v)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    /// `y_i − r̂(β̂ᵀw_i)`.
    pub e_hat: Vec<f64>,
    /// `y_i − r̂₍₁₎(β̂ᵀw_i)`.
    pub e1: Vec<f64>,
    /// `y_i − r̂₍₂₎(β̂ᵀw_i)`.
    pub e2: Vec<f64>,
    /// First-half validation rows, calibrated by `r̂₍₂₎`.
    pub eta_first: Vec<f64>,
    /// Second-half validation rows, calibrated by `r̂₍₁₎`.
    pub eta_second: Vec<f64>,
    /// All (even-trimmed) validation rows, calibrated by the full estimator
    /// with the row itself left out.
    pub eta_full: Vec<f64>,
}

pub fn compute_residuals(
    primary: &PrimarySample,
    validation: &ValidationSample,
    beta_hat: &DVector<f64>,
    link: &LinkFunction,
    v: f64,
) -> Result<Residuals> {
    check_pairing(primary, validation)?;
    check_beta(validation, beta_hat)?;
    let even = validation.even();
    let half = even.len() / 2;

    let full = calibrator_for(&even, beta_hat, link, v)?;
    let (first, second) = fit_r_split(&even, beta_hat, link, v)?;

    let primary_index = index_values(primary.w(), beta_hat);
    let y = primary.y();
    let e_hat = primary_index.iter().zip(y.iter()).map(|(u, y)| y - full.eval(*u)).collect();
    let e1 = primary_index.iter().zip(y.iter()).map(|(u, y)| y - first.eval(*u)).collect();
    let e2 = primary_index.iter().zip(y.iter()).map(|(u, y)| y - second.eval(*u)).collect();

    let val_index = index_values(even.w_tilde(), beta_hat);
    let val_g: Vec<f64> = index_values(even.x_tilde(), beta_hat)
        .into_iter()
        .map(|t| link.evaluate(t))
        .collect();
    let eta_first = (0..half).map(|t| val_g[t] - second.eval(val_index[t])).collect();
    let eta_second = (half..2 * half).map(|s| val_g[s] - first.eval(val_index[s])).collect();
    let eta_full = (0..2 * half)
        .map(|s| val_g[s] - full.eval_leave_out(val_index[s], s))
        .collect();

    Ok(Residuals {
        e_hat,
        e1,
        e2,
        eta_first,
        eta_second,
        eta_full,
    })
}
