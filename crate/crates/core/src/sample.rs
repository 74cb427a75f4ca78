use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Observed `(y_i, w_i)` pairs of the primary sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimarySample {
    y: DVector<f64>,
    w: DMatrix<f64>,
}

impl PrimarySample {
    pub fn new(y: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        if y.len() != w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} responses but {} surrogate rows",
                y.len(),
                w.nrows()
            )));
        }
        if y.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "primary sample needs n >= 2 rows, got {}",
                y.len()
            )));
        }
        if w.ncols() == 0 {
            return Err(Error::InvalidInput("surrogate must have p >= 1 columns".into()));
        }
        check_finite(y.as_slice(), 1, 0)?;
        check_matrix_finite(&w, 1)?;
        Ok(Self { y, w })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }
}

/// Observed `(w̃_s, x̃_s)` pairs of the validation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSample {
    w_tilde: DMatrix<f64>,
    x_tilde: DMatrix<f64>,
}

impl ValidationSample {
    pub fn new(w_tilde: DMatrix<f64>, x_tilde: DMatrix<f64>) -> Result<Self> {
        if w_tilde.shape() != x_tilde.shape() {
            return Err(Error::DimensionMismatch(format!(
                "w̃ is {:?} but x̃ is {:?}",
                w_tilde.shape(),
                x_tilde.shape()
            )));
        }
        if w_tilde.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "validation sample needs N >= 2 rows, got {}",
                w_tilde.nrows()
            )));
        }
        if w_tilde.ncols() == 0 {
            return Err(Error::InvalidInput("validation must have p >= 1 columns".into()));
        }
        check_matrix_finite(&w_tilde, 0)?;
        check_matrix_finite(&x_tilde, w_tilde.ncols())?;
        Ok(Self { w_tilde, x_tilde })
    }

    pub fn w_tilde(&self) -> &DMatrix<f64> {
        &self.w_tilde
    }

    pub fn x_tilde(&self) -> &DMatrix<f64> {
        &self.x_tilde
    }

    pub fn len(&self) -> usize {
        self.w_tilde.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w_tilde.nrows() == 0
    }

    pub fn p(&self) -> usize {
        self.w_tilde.ncols()
    }

    /// The sample with an odd trailing row dropped, so it halves evenly.
    pub fn even(&self) -> ValidationSample {
        let n = self.len() - self.len() % 2;
        self.rows(0..n)
    }

    pub fn rows(&self, range: std::ops::Range<usize>) -> ValidationSample {
        let len = range.end - range.start;
        ValidationSample {
            w_tilde: self.w_tilde.rows(range.start, len).into_owned(),
            x_tilde: self.x_tilde.rows(range.start, len).into_owned(),
        }
    }
}

pub(crate) fn check_pairing(primary: &PrimarySample, validation: &ValidationSample) -> Result<()> {
    if primary.p() != validation.p() {
        return Err(Error::DimensionMismatch(format!(
            "primary has p = {} but validation has p = {}",
            primary.p(),
            validation.p()
        )));
    }
    Ok(())
}

fn check_finite(values: &[f64], row_offset: usize, column: usize) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            row: i + row_offset,
            column,
        });
    }
    Ok(())
}

fn check_matrix_finite(m: &DMatrix<f64>, column_offset: usize) -> Result<()> {
    for (j, col) in m.column_iter().enumerate() {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: i + 1,
                column: j + column_offset,
            });
        }
    }
    Ok(())
}
