//! Seeded generators for the simulation models.
//!
//! Each dataset draws from one ChaCha20 key (the seed) split into five
//! independent streams: primary covariates, primary measurement errors,
//! regression errors, validation covariates and validation measurement
//! errors.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LinkFunction;
use crate::sample::{PrimarySample, ValidationSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    H11,
    H12,
    H13,
    H14,
    H15,
    H16,
    H17,
    H18,
    H19,
    /// `g(βᵀx) + C_n (βᵀx)²` with `C_n = a n^{-1/2} h^{-1/4}`, `h = n^{-1/5}`.
    LocalAlt,
}

impl ModelId {
    pub const ALL: [ModelId; 10] = [
        ModelId::H11,
        ModelId::H12,
        ModelId::H13,
        ModelId::H14,
        ModelId::H15,
        ModelId::H16,
        ModelId::H17,
        ModelId::H18,
        ModelId::H19,
        ModelId::LocalAlt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelId::H11 => "H11",
            ModelId::H12 => "H12",
            ModelId::H13 => "H13",
            ModelId::H14 => "H14",
            ModelId::H15 => "H15",
            ModelId::H16 => "H16",
            ModelId::H17 => "H17",
            ModelId::H18 => "H18",
            ModelId::H19 => "H19",
            ModelId::LocalAlt => "local_alt",
        }
    }

    /// Link of the null model.
    pub fn null_link(&self) -> LinkFunction {
        match self {
            ModelId::H16 | ModelId::H17 | ModelId::H18 | ModelId::H19 => LinkFunction::Cubic,
            _ => LinkFunction::Linear,
        }
    }

    /// Smallest covariate dimension the model formula needs.
    pub fn min_p(&self) -> usize {
        match self {
            ModelId::H14 | ModelId::H15 | ModelId::H18 => 4,
            ModelId::H17 => 3,
            ModelId::H19 => 8,
            _ => 1,
        }
    }

    fn index(&self) -> u64 {
        ModelId::ALL.iter().position(|m| m == self).unwrap() as u64
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    /// `Σ₁ = I`.
    Identity,
    /// `Σ₂ = (0.3^{|i−j|})`.
    Ar03,
}

impl SigmaChoice {
    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        match self {
            SigmaChoice::Identity => DMatrix::identity(p, p),
            SigmaChoice::Ar03 => DMatrix::from_fn(p, p, |i, j| 0.3f64.powi(i.abs_diff(j) as i32)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SigmaChoice::Identity => "identity",
            SigmaChoice::Ar03 => "ar03",
        }
    }
}

impl FromStr for SigmaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "i" | "sigma1" => Ok(SigmaChoice::Identity),
            "ar03" | "ar" | "sigma2" => Ok(SigmaChoice::Ar03),
            other => Err(Error::InvalidConfig(format!(
                "unknown covariance '{other}' (expected identity or ar03)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub model: ModelId,
    pub p: usize,
    pub a: f64,
    pub sigma: SigmaChoice,
    /// Variance of each measurement-error coordinate.
    pub sigma_u: f64,
}

impl ModelSpec {
    pub fn new(model: ModelId, p: usize, a: f64, sigma: SigmaChoice) -> Result<Self> {
        let spec = Self {
            model,
            p,
            a,
            sigma,
            sigma_u: 0.5,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_sigma_u(mut self, sigma_u: f64) -> Result<Self> {
        self.sigma_u = sigma_u;
        self.validate()?;
        Ok(self)
    }

    pub fn with_a(&self, a: f64) -> Self {
        Self { a, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.p < self.model.min_p() {
            return Err(Error::InvalidConfig(format!(
                "model {} needs p >= {}, got {}",
                self.model,
                self.model.min_p(),
                self.p
            )));
        }
        if !(self.sigma_u >= 0.0) || !self.sigma_u.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "measurement-error variance must be nonnegative, got {}",
                self.sigma_u
            )));
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidConfig("alternative size a must be finite".into()));
        }
        Ok(())
    }

    pub fn link(&self) -> LinkFunction {
        self.model.null_link()
    }

    /// Index vector of the null model (the target of `β̂`).
    pub fn beta(&self) -> DVector<f64> {
        let p = self.p;
        match self.model {
            ModelId::H14 => self.beta1(),
            ModelId::H15 => self.beta1() * 2.0,
            ModelId::H16 | ModelId::H17 | ModelId::H18 | ModelId::H19 => {
                DVector::from_fn(p, |i, _| if i == 0 { 1.0 } else { 0.0 })
            }
            _ => DVector::from_element(p, 1.0 / (p as f64).sqrt()),
        }
    }

    /// `β₁ = (1, 1, 0, 0, …)/2`.
    pub fn beta1(&self) -> DVector<f64> {
        DVector::from_fn(self.p, |i, _| if i < 2 { 0.5 } else { 0.0 })
    }

    /// `β₂ = (0, 0, 1, 1, 0, …)/2`.
    pub fn beta2(&self) -> DVector<f64> {
        DVector::from_fn(self.p, |i, _| if i == 2 || i == 3 { 0.5 } else { 0.0 })
    }

    /// Local-alternative scale `C_n = a n^{-1/2} h^{-1/4}` with `h = n^{-1/5}`.
    pub fn local_scale(&self, n: usize) -> f64 {
        let nf = n as f64;
        let h = nf.powf(-0.2);
        self.a / nf.sqrt() / h.powf(0.25)
    }

    /// Regression function `μ(x)`; `n` only matters for the local alternative.
    pub fn mean(&self, x: &[f64], n: usize) -> f64 {
        let a = self.a;
        let dot = |b: &DVector<f64>| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        match self.model {
            ModelId::H11 => {
                let t = dot(&self.beta());
                t + a * t * t
            }
            ModelId::H12 => {
                let t = dot(&self.beta());
                t + a * (-t * t / 2.0).exp()
            }
            ModelId::H13 => {
                let t = dot(&self.beta());
                t + 2.0 * a * (0.6 * PI * t).cos()
            }
            ModelId::H14 => {
                let t2 = dot(&self.beta2());
                dot(&self.beta1()) + a * t2 * t2
            }
            ModelId::H15 => 2.0 * dot(&self.beta1()) + a * (2.0 * dot(&self.beta2())).powi(3),
            ModelId::H16 => x[0].powi(3) + a * x[0].abs(),
            ModelId::H17 => x[0].powi(3) + a * x[2] * x[2],
            ModelId::H18 => x[0].powi(3) + a * (x[1] / 4.0 + x[2] * x[2] + (PI * x[3]).cos()),
            ModelId::H19 => {
                x[0].powi(3)
                    + a * (x[1] / 2.0
                        + x[2] * x[2]
                        + (PI * x[3]).cos()
                        + x[4] * (x[5] / 2.0).exp()
                        + x[7] * x[6])
            }
            ModelId::LocalAlt => {
                let t = dot(&self.beta());
                t + self.local_scale(n) * t * t
            }
        }
    }
}

/// Multivariate normal draws through a lower-triangular factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {} with {}×{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let factor = cov.cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        Ok(Self { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }

    /// `rows × p` matrix of independent draws.
    pub fn sample_rows<R: Rng + ?Sized>(&self, rng: &mut R, rows: usize) -> DMatrix<f64> {
        let p = self.dim();
        let z = DMatrix::from_fn(p, rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut out = (&self.factor * z).transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

pub fn mvn_sample<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    Ok(MvnSampler::new(mean.clone(), cov.clone())?.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub primary: PrimarySample,
    pub validation: ValidationSample,
    pub spec: ModelSpec,
    pub seed: u64,
}

const STREAM_X: u64 = 0;
const STREAM_U: u64 = 1;
const STREAM_EPS: u64 = 2;
const STREAM_X_TILDE: u64 = 3;
const STREAM_U_TILDE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    // row-major draw order so the first rows do not depend on `rows`
    DMatrix::from_row_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| sd * rng.sample::<f64, _>(StandardNormal)),
    )
}

fn covariates(rng: &mut ChaCha20Rng, sampler: &MvnSampler, rows: usize) -> DMatrix<f64> {
    let z = normal_matrix(rng, rows, sampler.dim(), 1.0);
    z * sampler.factor.transpose()
}

pub fn generate(spec: &ModelSpec, n: usize, big_n: usize, seed: u64) -> Result<GeneratedData> {
    spec.validate()?;
    if n < 2 || big_n < 2 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 2 and N >= 2, got n = {n}, N = {big_n}"
        )));
    }
    let p = spec.p;
    let sampler = MvnSampler::new(DVector::zeros(p), spec.sigma.matrix(p))?;
    let sd_u = spec.sigma_u.sqrt();

    let x = covariates(&mut stream(seed, STREAM_X), &sampler, n);
    let u = normal_matrix(&mut stream(seed, STREAM_U), n, p, sd_u);
    let eps = normal_matrix(&mut stream(seed, STREAM_EPS), n, 1, 1.0);
    let x_tilde = covariates(&mut stream(seed, STREAM_X_TILDE), &sampler, big_n);
    let u_tilde = normal_matrix(&mut stream(seed, STREAM_U_TILDE), big_n, p, sd_u);

    let y = DVector::from_fn(n, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        spec.mean(&row, n) + eps[(i, 0)]
    });
    Ok(GeneratedData {
        primary: PrimarySample::new(y, x + u)?,
        validation: ValidationSample::new(&x_tilde + u_tilde, x_tilde)?,
        spec: spec.clone(),
        seed,
    })
}

/// Stable 64-bit mixing of a key tuple into a seed (SplitMix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x243F_6A88_85A3_08D3;
    for &part in parts {
        state ^= part;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Seed for one replication of a simulation cell.
pub fn replication_seed(master: u64, spec: &ModelSpec, n: usize, big_n: usize, rep: u64) -> u64 {
    derive_seed(&[
        master,
        spec.model.index(),
        spec.p as u64,
        n as u64,
        big_n as u64,
        spec.a.to_bits(),
        spec.sigma as u64,
        spec.sigma_u.to_bits(),
        rep,
    ])
}
