//! Kernel-weighted U-statistics on the reduced index, their bias and
//! variance plug-ins, and the standardized tests for each sample-ratio
//! regime.
//!
//! All double sums are accumulated row by row: each row's inner sum is
//! computed independently (possibly on another thread) and the row totals
//! are added in index order, so results do not depend on the worker count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibrate::compute_residuals;
use crate::error::{Error, Result};
use crate::estimators::{estimate_beta, BetaEstimate, LinkFunction};
use crate::kernels::{BandwidthPlan, BandwidthRegime, Bandwidths, KernelSpec, PointSet};
use crate::sample::{PrimarySample, ValidationSample};
use crate::sdr::{estimate_b, SdrEstimate};

const KERNEL: KernelSpec = KernelSpec::QUARTIC;
const MIN_VARIANCE: f64 = 1e-14;
#[cfg(feature = "parallel")]
const PARALLEL_THRESHOLD: usize = 1 << 16;

/// `h^{-d} ∏ K((a_k − b_k)/h)`.
#[inline]
fn pair_weight(a: &[f64], b: &[f64], h: f64) -> f64 {
    let mut value = 1.0;
    for (x, y) in a.iter().zip(b) {
        let k = KERNEL.eval((x - y) / h);
        if k == 0.0 {
            return 0.0;
        }
        value *= k / h;
    }
    value
}

/// `h^{-d} ∏ K²((a_k − b_k)/h)`.
#[inline]
fn pair_square_weight(a: &[f64], b: &[f64], h: f64) -> f64 {
    let mut value = 1.0;
    for (x, y) in a.iter().zip(b) {
        let k = KERNEL.eval((x - y) / h);
        if k == 0.0 {
            return 0.0;
        }
        value *= k * k / h;
    }
    value
}

/// `Σ_i row(i)`, rows evaluated independently and summed in order.
fn ordered_sum<F>(rows: usize, work: usize, row: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if work >= PARALLEL_THRESHOLD {
        use rayon::prelude::*;
        let parts: Vec<f64> = (0..rows).into_par_iter().map(&row).collect();
        return parts.iter().sum();
    }
    let _ = work;
    (0..rows).map(row).sum()
}

/// `Σ_i Σ_{j≠i} a_i b_j w(z_i, z_j)` over one point set.
fn within_sum<W>(a: &[f64], b: &[f64], z: &PointSet, weight: W) -> f64
where
    W: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    let n = z.len();
    ordered_sum(n, n * n, |i| {
        if a[i] == 0.0 {
            return 0.0;
        }
        let zi = z.row(i);
        let mut inner = 0.0;
        for j in 0..n {
            if j != i && b[j] != 0.0 {
                inner += weight(zi, z.row(j)) * b[j];
            }
        }
        a[i] * inner
    })
}

/// `Σ_i Σ_s a_i b_s w(z_i, z̃_s)` across two point sets.
fn cross_sum<W>(a: &[f64], za: &PointSet, b: &[f64], zb: &PointSet, weight: W) -> f64
where
    W: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    ordered_sum(za.len(), za.len() * zb.len(), |i| {
        if a[i] == 0.0 {
            return 0.0;
        }
        let zi = za.row(i);
        let mut inner = 0.0;
        for s in 0..zb.len() {
            if b[s] != 0.0 {
                inner += weight(zi, zb.row(s)) * b[s];
            }
        }
        a[i] * inner
    })
}

fn squares(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v * v).collect()
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")))
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} has length {got}, expected {want}"
        )))
    }
}

fn check_points(z: &PointSet, min: usize) -> Result<()> {
    if z.len() < min || z.dim() == 0 {
        return Err(Error::InvalidInput(format!(
            "need at least {min} points of positive dimension, got {} of dimension {}",
            z.len(),
            z.dim()
        )));
    }
    Ok(())
}

fn check_same_dim(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "index dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `Ṽ_n = [n(n−1)]⁻¹ Σ_i Σ_{j≠i} ê_i K_h(ẑ_i − ẑ_j) ê_j`.
pub fn v_tilde(e_hat: &[f64], z_hat: &PointSet, h: f64) -> Result<f64> {
    v_split(e_hat, e_hat, z_hat, h)
}

/// `V_n = [n(n−1)]⁻¹ Σ_i Σ_{j≠i} ê_{i(1)} K_h(ẑ_i − ẑ_j) ê_{j(2)}`.
pub fn v_split(e1: &[f64], e2: &[f64], z_hat: &PointSet, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    check_points(z_hat, 2)?;
    let n = z_hat.len();
    check_len("e1", e1.len(), n)?;
    check_len("e2", e2.len(), n)?;
    let total = within_sum(e1, e2, z_hat, |a, b| pair_weight(a, b, h));
    Ok(total / (n as f64 * (n - 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TildePlugins {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub mu: f64,
}

impl TildePlugins {
    /// `τ̂₁ + (2/λ)τ̂₂ + (1/λ²)τ̂₃`.
    pub fn combined(&self, lambda: f64) -> f64 {
        self.tau1 + 2.0 * self.tau2 / lambda + self.tau3 / (lambda * lambda)
    }
}

/// Variance and bias plug-ins for `Ṽ_n`. The index dimension `q̂` is the
/// dimension of `z_hat`.
pub fn variance_plugins_tilde(
    e_hat: &[f64],
    eta_full: &[f64],
    z_hat: &PointSet,
    z_tilde: &PointSet,
    h: f64,
) -> Result<TildePlugins> {
    check_bandwidth(h)?;
    check_points(z_hat, 2)?;
    check_points(z_tilde, 2)?;
    check_same_dim(z_hat, z_tilde)?;
    let n = z_hat.len();
    let big_n = z_tilde.len();
    check_len("e_hat", e_hat.len(), n)?;
    check_len("eta_full", eta_full.len(), big_n)?;
    let (nf, bnf) = (n as f64, big_n as f64);
    let e2 = squares(e_hat);
    let eta2 = squares(eta_full);
    let w2 = |a: &[f64], b: &[f64]| pair_square_weight(a, b, h);

    let tau1 = 2.0 * within_sum(&e2, &e2, z_hat, w2) / (nf * (nf - 1.0));
    let tau2 = cross_sum(&e2, z_hat, &eta2, z_tilde, w2) / (nf * bnf);
    let tau3 = 2.0 * within_sum(&eta2, &eta2, z_tilde, w2) / (bnf * (bnf - 1.0));
    let q = z_hat.dim() as i32;
    let mu = KERNEL.at_origin().powi(q) / (bnf * bnf * h.powi(q)) * eta2.iter().sum::<f64>();
    Ok(TildePlugins {
        tau1,
        tau2,
        tau3,
        mu,
    })
}

/// Four-term variance estimate for `V_n`. `z_tilde` holds the (even) validation
/// index values: the first half pairs with `eta_first` and `e2`, the second
/// half with `eta_second` and `e1`.
#[allow(clippy::too_many_arguments)]
pub fn variance_plugin_split(
    e1: &[f64],
    e2: &[f64],
    eta_first: &[f64],
    eta_second: &[f64],
    z_hat: &PointSet,
    z_tilde: &PointSet,
    h: f64,
    lambda_hat: f64,
) -> Result<f64> {
    check_bandwidth(h)?;
    if !(lambda_hat > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sample ratio must be positive, got {lambda_hat}"
        )));
    }
    check_points(z_hat, 2)?;
    check_points(z_tilde, 2)?;
    check_same_dim(z_hat, z_tilde)?;
    let n = z_hat.len();
    let big_n = z_tilde.len();
    if !big_n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "split validation index needs an even row count, got {big_n}"
        )));
    }
    let half = big_n / 2;
    check_len("e1", e1.len(), n)?;
    check_len("e2", e2.len(), n)?;
    check_len("eta_first", eta_first.len(), half)?;
    check_len("eta_second", eta_second.len(), half)?;

    let (nf, bnf) = (n as f64, big_n as f64);
    let first = z_tilde.slice(0..half);
    let second = z_tilde.slice(half..big_n);
    let e1s = squares(e1);
    let e2s = squares(e2);
    let eta_t = squares(eta_first);
    let eta_s = squares(eta_second);
    let w2 = |a: &[f64], b: &[f64]| pair_square_weight(a, b, h);

    let term1 = 2.0 / (nf * (nf - 1.0)) * within_sum(&e1s, &e2s, z_hat, w2);
    let term2 = 4.0 / (lambda_hat * nf * bnf) * cross_sum(&e1s, z_hat, &eta_s, &second, w2);
    let term3 = 4.0 / (lambda_hat * nf * bnf) * cross_sum(&e2s, z_hat, &eta_t, &first, w2);
    let term4 = 16.0 / (lambda_hat * lambda_hat * bnf * bnf)
        * cross_sum(&eta_t, &first, &eta_s, &second, w2);
    Ok(term1 + term2 + term3 + term4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallLambdaPlugins {
    /// Bias `ν̂` of the uncorrected statistic.
    pub nu: f64,
    /// Variance `τ̂` of the split statistic under the `Nv^{1/2}` scaling.
    pub tau: f64,
}

/// Plug-ins for the small-ratio regime. `u_first` and `u_second` are the
/// scalar calibration indices `β̂ᵀw̃` of the two validation halves, and
/// `beta_norm` is `‖β̂‖`.
pub fn small_lambda_plugins(
    eta_first: &[f64],
    eta_second: &[f64],
    u_first: &[f64],
    u_second: &[f64],
    v: f64,
    beta_norm: f64,
) -> Result<SmallLambdaPlugins> {
    check_bandwidth(v)?;
    let half = eta_first.len();
    if half == 0 {
        return Err(Error::InvalidInput("empty validation halves".into()));
    }
    check_len("eta_second", eta_second.len(), half)?;
    check_len("u_first", u_first.len(), half)?;
    check_len("u_second", u_second.len(), half)?;
    let big_n = 2 * half;
    let eta_t = squares(eta_first);
    let eta_s = squares(eta_second);
    let mean_eta2 = (eta_t.iter().sum::<f64>() + eta_s.iter().sum::<f64>()) / big_n as f64;
    let nu = beta_norm / (v * big_n as f64) * KERNEL.square_integral() * mean_eta2;

    let first = PointSet::from_scalars(u_first);
    let second = PointSet::from_scalars(u_second);
    let j_hat = cross_sum(&eta_t, &first, &eta_s, &second, |a, b| pair_weight(a, b, v))
        / (half as f64 * half as f64);
    let tau = 2.0 * (2.0 * beta_norm * convolution_constant() * j_hat);
    Ok(SmallLambdaPlugins { nu, tau })
}

fn convolution_constant() -> f64 {
    use std::sync::OnceLock;
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| KERNEL.convolution_square_integral())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Uncorrected `Ṽ_n` with bias `μ̂` removed.
    Tilde,
    /// Split `V_n` with the four-term variance.
    SplitFiniteLambda,
    /// Split `V_n` standardized by `τ̂₁` alone.
    SplitInfiniteLambda,
    /// Split `V_n` with `Nv^{1/2}` scaling.
    SmallLambda,
    /// Split `V_n` on the full covariate `w` instead of `B̂ᵀw`.
    Zheng,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Tilde => "tilde",
            Regime::SplitFiniteLambda => "split_finite_lambda",
            Regime::SplitInfiniteLambda => "split_infinite_lambda",
            Regime::SmallLambda => "small_lambda",
            Regime::Zheng => "zheng",
        }
    }

    /// Bandwidth rates used by this regime.
    pub fn bandwidth_regime(&self) -> BandwidthRegime {
        match self {
            Regime::SmallLambda => BandwidthRegime::SmallLambda,
            Regime::Zheng => BandwidthRegime::Zheng,
            _ => BandwidthRegime::Standard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeRequest {
    Auto,
    Tilde,
    Split,
    SmallLambda,
    InfiniteLambda,
    Zheng,
}

impl RegimeRequest {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "auto" => Self::Auto,
            "tilde" => Self::Tilde,
            "split" => Self::Split,
            "small-lambda" => Self::SmallLambda,
            "infinite-lambda" => Self::InfiniteLambda,
            "zheng" => Self::Zheng,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown regime '{other}' (expected auto, tilde, split, small-lambda, infinite-lambda or zheng)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::Tilde => "tilde",
            Self::Split => "split",
            Self::SmallLambda => "small-lambda",
            Self::InfiniteLambda => "infinite-lambda",
            Self::Zheng => "zheng",
        }
    }

    /// Auto picks small-ratio below 1, finite-ratio up to 6 and the
    /// infinite-ratio form above.
    pub fn resolve(&self, lambda_hat: f64) -> Regime {
        match self {
            Self::Auto if lambda_hat < 1.0 => Regime::SmallLambda,
            Self::Auto if lambda_hat <= 6.0 => Regime::SplitFiniteLambda,
            Self::Auto => Regime::SplitInfiniteLambda,
            Self::Tilde => Regime::Tilde,
            Self::Split => Regime::SplitFiniteLambda,
            Self::SmallLambda => Regime::SmallLambda,
            Self::InfiniteLambda => Regime::SplitInfiniteLambda,
            Self::Zheng => Regime::Zheng,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalConvention {
    /// Upper-α standard normal quantile.
    NormalQuantile,
    /// The fixed value 1.65, valid only at α = 0.05.
    Literal165,
}

impl CriticalConvention {
    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 0.5], got {alpha}"
            )));
        }
        match self {
            Self::NormalQuantile => Ok(Normal::standard().inverse_cdf(1.0 - alpha)),
            Self::Literal165 if (alpha - 0.05).abs() < 1e-12 => Ok(1.65),
            Self::Literal165 => Err(Error::InvalidConfig(format!(
                "the 1.65 critical value applies only at alpha = 0.05, got {alpha}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestConfig {
    pub link: LinkFunction,
    /// Only `c1` and `c2` are read; the rates follow the resolved regime.
    pub plan: BandwidthPlan,
    pub alpha: f64,
    pub regime: RegimeRequest,
    pub critical: CriticalConvention,
}

impl TestConfig {
    pub fn new(link: LinkFunction, c: f64) -> Result<Self> {
        Ok(Self {
            link,
            plan: BandwidthPlan::standard(c)?,
            alpha: 0.05,
            regime: RegimeRequest::Auto,
            critical: CriticalConvention::NormalQuantile,
        })
    }

    pub fn with_regime(mut self, regime: RegimeRequest) -> Self {
        self.regime = regime;
        self
    }

    pub fn with_critical(mut self, critical: CriticalConvention) -> Self {
        self.critical = critical;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    /// `Ṽ_n` or `V_n`.
    pub raw_statistic: f64,
    /// `nh^{1/2}`, `Nv^{1/2}`, or `nh^{p/2}` for the full-covariate form.
    pub scale_factor: f64,
    /// `μ̂` for the uncorrected statistic, otherwise 0.
    pub bias_hat: f64,
    pub variance_hat: f64,
    pub standardized: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub regime: Regime,
    pub lambda_hat: f64,
    pub q_hat: usize,
    pub beta_hat: Vec<f64>,
    pub h: f64,
    pub v: f64,
    /// `ν̂`, reported in the small-ratio regime only.
    pub nu_hat: Option<f64>,
}

/// The regime-independent estimates: `β̂` and the dimension reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub beta: BetaEstimate,
    pub sdr: SdrEstimate,
}

pub fn prepare(
    primary: &PrimarySample,
    validation: &ValidationSample,
    link: LinkFunction,
) -> Result<Prepared> {
    Ok(Prepared {
        beta: estimate_beta(primary, validation, link)?,
        sdr: estimate_b(primary, validation)?,
    })
}

fn project(rows: &DMatrix<f64>, basis: &DMatrix<f64>) -> PointSet {
    matrix_points(&(rows * basis))
}

fn matrix_points(m: &DMatrix<f64>) -> PointSet {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    PointSet::from_rows(&rows).expect("matrix rows share one dimension")
}

fn index(rows: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (rows * beta).iter().copied().collect()
}

/// Runs the chosen test on already estimated `β̂` and `B̂`.
pub fn evaluate(
    primary: &PrimarySample,
    validation: &ValidationSample,
    prepared: &Prepared,
    config: &TestConfig,
) -> Result<TestOutcome> {
    let critical_value = config.critical.critical_value(config.alpha)?;
    let n = primary.n();
    let p = primary.p();
    let even = validation.even();
    let big_n = even.len();
    if big_n < 2 {
        return Err(Error::InvalidInput(
            "validation sample needs at least two rows".into(),
        ));
    }
    let lambda_hat = validation.len() as f64 / n as f64;
    let regime = config.regime.resolve(lambda_hat);
    let plan = BandwidthPlan::new(config.plan.c1, config.plan.c2, regime.bandwidth_regime())?;
    let q_hat = prepared.sdr.q_hat;
    let beta_hat = &prepared.beta.beta_hat;
    let link = &config.link;

    let Bandwidths { h, v } = match regime {
        Regime::Tilde => plan.resolve_full_sample(n, big_n, q_hat, p)?,
        _ => plan.resolve(n, big_n, q_hat, p)?,
    };
    let residuals = compute_residuals(primary, &even, beta_hat, link, v)?;

    let (z_hat, z_tilde) = match regime {
        Regime::Zheng => (matrix_points(primary.w()), matrix_points(even.w_tilde())),
        _ => (
            project(primary.w(), &prepared.sdr.b_hat),
            project(even.w_tilde(), &prepared.sdr.b_hat),
        ),
    };
    let nf = n as f64;
    let mut nu_hat = None;

    let (raw, scale, bias, variance) = match regime {
        Regime::Tilde => {
            let raw = v_tilde(&residuals.e_hat, &z_hat, h)?;
            let plug =
                variance_plugins_tilde(&residuals.e_hat, &residuals.eta_full, &z_hat, &z_tilde, h)?;
            (raw, nf * h.sqrt(), plug.mu, plug.combined(lambda_hat))
        }
        Regime::SplitFiniteLambda | Regime::Zheng => {
            let raw = v_split(&residuals.e1, &residuals.e2, &z_hat, h)?;
            let tau = variance_plugin_split(
                &residuals.e1,
                &residuals.e2,
                &residuals.eta_first,
                &residuals.eta_second,
                &z_hat,
                &z_tilde,
                h,
                lambda_hat,
            )?;
            let dim = z_hat.dim() as f64;
            (raw, nf * h.powf(dim / 2.0), 0.0, tau)
        }
        Regime::SplitInfiniteLambda => {
            let raw = v_split(&residuals.e1, &residuals.e2, &z_hat, h)?;
            let e2 = squares(&residuals.e_hat);
            let tau1 = 2.0
                * within_sum(&e2, &e2, &z_hat, |a, b| pair_square_weight(a, b, h))
                / (nf * (nf - 1.0));
            (raw, nf * h.sqrt(), 0.0, tau1)
        }
        Regime::SmallLambda => {
            let raw = v_split(&residuals.e1, &residuals.e2, &z_hat, h)?;
            let u = index(even.w_tilde(), beta_hat);
            let half = big_n / 2;
            let plug = small_lambda_plugins(
                &residuals.eta_first,
                &residuals.eta_second,
                &u[..half],
                &u[half..],
                v,
                beta_hat.norm(),
            )?;
            nu_hat = Some(plug.nu);
            (raw, big_n as f64 * v.sqrt(), 0.0, plug.tau)
        }
    };

    if !(variance > MIN_VARIANCE) {
        return Err(Error::InsufficientVariance { variance });
    }
    let standardized = scale * (raw - bias) / variance.sqrt();
    if !standardized.is_finite() {
        return Err(Error::InsufficientVariance { variance });
    }
    Ok(TestOutcome {
        raw_statistic: raw,
        scale_factor: scale,
        bias_hat: bias,
        variance_hat: variance,
        standardized,
        critical_value,
        reject: standardized > critical_value,
        regime,
        lambda_hat,
        q_hat,
        beta_hat: beta_hat.iter().copied().collect(),
        h,
        v,
        nu_hat,
    })
}

/// Estimates `β̂` and `B̂`, then runs the configured test.
pub fn run_test(
    primary: &PrimarySample,
    validation: &ValidationSample,
    config: &TestConfig,
) -> Result<TestOutcome> {
    let prepared = prepare(primary, validation, config.link)?;
    evaluate(primary, validation, &prepared, config)
}
