//! Shared test models.

#![allow(dead_code)]

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use orthoscore::late::kappa;
use orthoscore::learners::{expit, fit_least_squares, Regressor};
use orthoscore::ortho::SequentialCriterion;
use orthoscore::score::SolveKind;
use orthoscore::{FunctionEstimate, Observation, SharedFn};

/// The instrument model in sequential form: `psi = k1 mu - k0 y - beta`,
/// `m1` the cross-entropy of `z` in the log-odds `f`, `m2 = k1 (y - mu)^2`.
pub struct SequentialLate;

fn kappas(f: f64, o: &Observation<'_>) -> (f64, f64, f64) {
    let g = expit(f);
    let (k0, k1) = kappa(o.d, o.z, g).unwrap();
    (g, k0, k1)
}

/// `(d k0/df, d k1/df)`.
fn kappa_slopes(f: f64, o: &Observation<'_>) -> (f64, f64) {
    let g = expit(f);
    let v = g * (1.0 - g);
    let dk0 = (1.0 - o.d) * (v - (g - o.z) * (1.0 - 2.0 * g)) / v;
    let dk1 = o.d * (-v - (o.z - g) * (1.0 - 2.0 * g)) / v;
    (dk0, dk1)
}

impl SequentialCriterion for SequentialLate {
    fn psi(&self, beta: f64, mu: f64, f: f64, o: &Observation<'_>) -> f64 {
        let (_, k0, k1) = kappas(f, o);
        k1 * mu - k0 * o.y - beta
    }
    fn d_mu_psi(&self, _: f64, _: f64, f: f64, o: &Observation<'_>) -> f64 {
        kappas(f, o).2
    }
    fn d_f_psi(&self, _: f64, mu: f64, f: f64, o: &Observation<'_>) -> f64 {
        let (dk0, dk1) = kappa_slopes(f, o);
        dk1 * mu - dk0 * o.y
    }
    fn d_f_m1(&self, f: f64, o: &Observation<'_>) -> f64 {
        expit(f) - o.z
    }
    fn d2_ff_m1(&self, f: f64, _: &Observation<'_>) -> f64 {
        let g = expit(f);
        g * (1.0 - g)
    }
    fn d_mu_m2(&self, mu: f64, f: f64, o: &Observation<'_>) -> f64 {
        -2.0 * kappas(f, o).2 * (o.y - mu)
    }
    fn d2_mumu_m2(&self, _: f64, f: f64, o: &Observation<'_>) -> f64 {
        2.0 * kappas(f, o).2
    }
    fn d2_muf_m2(&self, mu: f64, f: f64, o: &Observation<'_>) -> f64 {
        -2.0 * kappa_slopes(f, o).1 * (o.y - mu)
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Linear
    }
}

/// Least squares on all monomials of degree 1 to 3 in two covariates.
pub struct Cubic;

fn cubic_features(x: &[f64]) -> [f64; 9] {
    let (a, b) = (x[0], x[1]);
    [a, b, a * a, a * b, b * b, a * a * a, a * a * b, a * b * b, b * b * b]
}

struct CubicFit(orthoscore::data::Affine);

impl FunctionEstimate for CubicFit {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.0.evaluate(&cubic_features(x))
    }
}

impl Regressor for Cubic {
    fn fit(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> orthoscore::Result<SharedFn> {
        let feats = Array2::from_shape_fn((x.nrows(), 9), |(i, j)| {
            cubic_features(x.row(i).as_slice().unwrap())[j]
        });
        Ok(Arc::new(CubicFit(fit_least_squares(feats.view(), y, None)?)))
    }
}
