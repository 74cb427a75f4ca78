//! Projection least-squares estimation of the null index `β`.
//!
//! The surrogate design `D` (built from `w`) is regressed onto the validation
//! design `D_v` (built from `w̃`) so that `D (D_vᵀD_v)⁻¹ D_vᵀ g(X_v β)`
//! predicts `E[g(βᵀX) | W]` at the primary rows. `β̂` minimizes the squared
//! distance between this prediction and `Y`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::sample::{check_pairing, PrimarySample, ValidationSample};

/// Known link `g` of the null single-index model.
#[derive(Clone, Copy)]
pub enum LinkFunction {
    Linear,
    Cubic,
    Custom {
        name: &'static str,
        evaluate: fn(f64) -> f64,
        derivative: fn(f64) -> f64,
    },
}

impl fmt::Debug for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for LinkFunction {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl LinkFunction {
    pub fn name(&self) -> &'static str {
        match self {
            LinkFunction::Linear => "linear",
            LinkFunction::Cubic => "cubic",
            LinkFunction::Custom { name, .. } => name,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(LinkFunction::Linear),
            "cubic" => Ok(LinkFunction::Cubic),
            other => Err(Error::InvalidInput(format!("unknown link `{other}`"))),
        }
    }

    #[inline]
    pub fn evaluate(&self, t: f64) -> f64 {
        match self {
            LinkFunction::Linear => t,
            LinkFunction::Cubic => t * t * t,
            LinkFunction::Custom { evaluate, .. } => evaluate(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            LinkFunction::Linear => 1.0,
            LinkFunction::Cubic => 3.0 * t * t,
            LinkFunction::Custom { derivative, .. } => derivative(t),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, LinkFunction::Linear)
    }
}

impl Serialize for LinkFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaEstimate {
    pub beta_hat: DVector<f64>,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Linear link: the rows themselves. Otherwise a constant, the coordinates
/// and their squares (no cross products).
pub fn build_design(w_rows: &DMatrix<f64>, link: &LinkFunction) -> DMatrix<f64> {
    if link.is_linear() {
        return w_rows.clone();
    }
    let (m, p) = w_rows.shape();
    DMatrix::from_fn(m, 2 * p + 1, |i, j| match j {
        0 => 1.0,
        j if j <= p => w_rows[(i, j - 1)],
        j => w_rows[(i, j - 1 - p)].powi(2),
    })
}

/// Precomputed pieces of the least-squares objective.
#[derive(Debug, Clone)]
pub struct LsProblem {
    y: DVector<f64>,
    design: DMatrix<f64>,
    /// `(D_vᵀD_v)⁻¹ D_vᵀ`, `k × N`.
    projector: DMatrix<f64>,
    x_v: DMatrix<f64>,
    link: LinkFunction,
}

impl LsProblem {
    pub fn new(
        y: &DVector<f64>,
        design: DMatrix<f64>,
        design_v: &DMatrix<f64>,
        x_v: &DMatrix<f64>,
        link: LinkFunction,
    ) -> Result<Self> {
        if design.ncols() != design_v.ncols() || design.nrows() != y.len() {
            return Err(Error::DimensionMismatch("design matrices disagree".into()));
        }
        if design_v.nrows() != x_v.nrows() {
            return Err(Error::DimensionMismatch("validation design and x̃ rows differ".into()));
        }
        let gram = design_v.transpose() * design_v;
        let condition = linalg::sym_condition(&gram);
        if condition >= linalg::MAX_CONDITION {
            return Err(Error::SingularDesign { condition });
        }
        let gram_inv = gram
            .cholesky()
            .ok_or(Error::SingularDesign {
                condition: f64::INFINITY,
            })?
            .inverse();
        Ok(Self {
            y: y.clone(),
            design,
            projector: gram_inv * design_v.transpose(),
            x_v: x_v.clone(),
            link,
        })
    }

    pub fn from_samples(
        primary: &PrimarySample,
        validation: &ValidationSample,
        link: LinkFunction,
    ) -> Result<Self> {
        check_pairing(primary, validation)?;
        Self::new(
            primary.y(),
            build_design(primary.w(), &link),
            &build_design(validation.w_tilde(), &link),
            validation.x_tilde(),
            link,
        )
    }

    pub fn p(&self) -> usize {
        self.x_v.ncols()
    }

    /// `n⁻¹ ‖Y − D (D_vᵀD_v)⁻¹ D_vᵀ g(X_v β)‖²`.
    pub fn objective(&self, beta: &[f64]) -> f64 {
        let index = &self.x_v * DVector::from_column_slice(beta);
        let g = index.map(|t| self.link.evaluate(t));
        let fitted = &self.design * (&self.projector * g);
        (&self.y - fitted).norm_squared() / self.y.len() as f64
    }

    /// The `n × p` regressor `D (D_vᵀD_v)⁻¹ D_vᵀ X_v` whose OLS fit gives the
    /// linear-link estimate.
    fn linear_regressor(&self) -> DMatrix<f64> {
        &self.design * (&self.projector * &self.x_v)
    }

    /// Closed-form minimizer for a linear link (also the multistart anchor for
    /// other links).
    pub fn ols_on_surrogates(&self) -> Result<DVector<f64>> {
        linalg::least_squares(&self.linear_regressor(), &self.y)
            .ok_or(Error::SingularDesign {
                condition: f64::INFINITY,
            })
    }
}

/// Standalone objective evaluation.
pub fn ls_objective(
    beta: &[f64],
    y: &DVector<f64>,
    design: &DMatrix<f64>,
    design_v: &DMatrix<f64>,
    x_v: &DMatrix<f64>,
    link: LinkFunction,
) -> Result<f64> {
    if beta.len() != x_v.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "β has length {} but x̃ has {} columns",
            beta.len(),
            x_v.ncols()
        )));
    }
    let problem = LsProblem::new(y, design.clone(), design_v, x_v, link)?;
    Ok(problem.objective(beta))
}

pub fn estimate_beta(
    primary: &PrimarySample,
    validation: &ValidationSample,
    link: LinkFunction,
) -> Result<BetaEstimate> {
    let problem = LsProblem::from_samples(primary, validation, link)?;
    if link.is_linear() {
        let beta_hat = problem.ols_on_surrogates()?;
        let objective_value = problem.objective(beta_hat.as_slice());
        return Ok(BetaEstimate {
            beta_hat,
            objective_value,
            converged: true,
            iterations: 0,
        });
    }
    estimate_beta_numeric(&problem)
}

/// Nelder–Mead from five starts: the OLS-on-surrogates solution, zero, and
/// that solution scaled by 0.5, 1.5 and 2.
pub fn estimate_beta_numeric(problem: &LsProblem) -> Result<BetaEstimate> {
    let anchor = problem.ols_on_surrogates()?;
    let p = problem.p();
    let starts = [
        anchor.clone(),
        DVector::zeros(p),
        &anchor * 0.5,
        &anchor * 1.5,
        &anchor * 2.0,
    ];
    let runs: Vec<NelderMeadResult> = starts
        .iter()
        .map(|s| nelder_mead(|b| problem.objective(b), s.as_slice(), 2000 * p, 1e-8))
        .collect();
    // argmin, first index wins ties
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.value < runs[best].value {
            best = i;
        }
    }
    let run = &runs[best];
    let beta_hat = DVector::from_column_slice(&run.point);
    if beta_hat.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidInput("optimizer produced a non-finite β".into()));
    }
    Ok(BetaEstimate {
        objective_value: problem.objective(beta_hat.as_slice()),
        beta_hat,
        converged: run.converged,
        iterations: run.iterations,
    })
}

#[derive(Debug, Clone)]
pub(crate) struct NelderMeadResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Derivative-free simplex search. Converges when every vertex lies within
/// `tol` of the best one.
pub(crate) fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    start: &[f64],
    max_iter: usize,
    tol: f64,
) -> NelderMeadResult {
    let d = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(start.to_vec());
    for i in 0..d {
        let mut v = start.to_vec();
        let step = if start[i].abs() > 1e-8 { 0.1 * start[i].abs() } else { 0.1 };
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if diameter < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64)
            .collect();
        let towards = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = towards(1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = towards(2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
            continue;
        }
        if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[d] {
            let c = towards(0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = towards(-0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if fc < values[d].min(fr) {
            simplex[d] = contracted;
            values[d] = fc;
            continue;
        }
        // shrink towards the best vertex
        for i in 1..=d {
            let shrunk: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            values[i] = eval(&shrunk);
            simplex[i] = shrunk;
        }
    }
    let best = (0..=d)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    NelderMeadResult {
        point: simplex[best].clone(),
        value: values[best],
        converged,
        iterations,
    }
}
