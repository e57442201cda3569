//! Sample container and the fitted-function abstraction shared by every
//! nuisance estimate.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// How the treatment column is constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentKind {
    /// Entries are exactly 0 or 1.
    Binary,
    /// Any finite real value (partially linear regression).
    Real,
}

/// Immutable columnar sample `(X, Y, D, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    z: Option<Vec<f64>>,
    treatment: TreatmentKind,
}

/// One row of a [`Dataset`]. `z` is 0 when the sample carries no instrument.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub x: &'a [f64],
    pub y: f64,
    pub d: f64,
    pub z: f64,
}

fn check_binary(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|&e| e != 0.0 && e != 1.0) {
        Some(i) => Err(Error::arg(format!(
            "{name}[{i}] = {} is not 0 or 1",
            v[i]
        ))),
        None => Ok(()),
    }
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|e| !e.is_finite()) {
        Some(i) => Err(Error::arg(format!("{name}[{i}] is not finite"))),
        None => Ok(()),
    }
}

impl Dataset {
    /// Sample with a binary treatment and an optional binary instrument.
    pub fn new(x: Array2<f64>, y: Vec<f64>, d: Vec<f64>, z: Option<Vec<f64>>) -> Result<Self> {
        let ds = Self::build(x, y, d, z, TreatmentKind::Binary)?;
        check_binary("d", &ds.d)?;
        Ok(ds)
    }

    /// Sample whose treatment is an arbitrary real regressor (no instrument).
    pub fn with_real_treatment(x: Array2<f64>, y: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        Self::build(x, y, d, None, TreatmentKind::Real)
    }

    fn build(
        x: Array2<f64>,
        y: Vec<f64>,
        d: Vec<f64>,
        z: Option<Vec<f64>>,
        treatment: TreatmentKind,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || d.len() != n || z.as_ref().is_some_and(|z| z.len() != n) {
            return Err(Error::arg("all columns must have the same length"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("covariates contain non-finite values"));
        }
        check_finite("y", &y)?;
        check_finite("d", &d)?;
        if let Some(z) = &z {
            check_binary("z", z)?;
        }
        let x = x.as_standard_layout().into_owned();
        Ok(Self {
            x,
            y,
            d,
            z,
            treatment,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x.as_slice().expect("standard layout")[i * p..(i + 1) * p]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn z(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }

    pub fn treatment_kind(&self) -> TreatmentKind {
        self.treatment
    }

    /// The instrument column, or an error naming the missing column.
    pub fn require_instrument(&self) -> Result<&[f64]> {
        self.z().ok_or_else(|| Error::MissingColumn("instrument".into()))
    }

    pub fn obs(&self, i: usize) -> Observation<'_> {
        Observation {
            x: self.x_row(i),
            y: self.y[i],
            d: self.d[i],
            z: self.z.as_ref().map_or(0.0, |z| z[i]),
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation<'_>> + '_ {
        (0..self.n()).map(move |i| self.obs(i))
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: pick(&self.y),
            d: pick(&self.d),
            z: self.z.as_deref().map(pick),
            treatment: self.treatment,
        }
    }

    /// Same rows with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Dataset> {
        if y.len() != self.n() {
            return Err(Error::arg("outcome length mismatch"));
        }
        check_finite("y", &y)?;
        Ok(Dataset { y, ..self.clone() })
    }
}

/// A fitted real-valued function of the covariate vector.
///
/// Every nuisance (log-odds, regression, correction direction) is handed
/// around as one of these. Implementations must be deterministic.
pub trait FunctionEstimate: Send + Sync {
    fn evaluate(&self, x: &[f64]) -> f64;

    fn evaluate_batch(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|row| match row.as_slice() {
                Some(s) => self.evaluate(s),
                None => self.evaluate(&row.to_vec()),
            })
            .collect()
    }
}

pub type SharedFn = Arc<dyn FunctionEstimate>;

impl fmt::Debug for dyn FunctionEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FunctionEstimate")
    }
}

/// Constant function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl FunctionEstimate for Constant {
    fn evaluate(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// `intercept + slopes · x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl FunctionEstimate for Affine {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Wraps a closure as a [`FunctionEstimate`].
pub struct FnEstimate<F>(pub F);

impl<F> FunctionEstimate for FnEstimate<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn evaluate(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

pub fn shared<F>(f: F) -> SharedFn
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(FnEstimate(f))
}

pub fn constant(c: f64) -> SharedFn {
    Arc::new(Constant(c))
}

/// `base + step · direction`, the path used for Gateaux derivatives.
pub struct Perturbed {
    pub base: SharedFn,
    pub direction: SharedFn,
    pub step: f64,
}

impl FunctionEstimate for Perturbed {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.base.evaluate(x) + self.step * self.direction.evaluate(x)
    }
}
