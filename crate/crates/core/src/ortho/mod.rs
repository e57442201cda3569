//! Orthogonal-score builders.
//!
//! Each regime supplies per-observation derivative callbacks of its criterion.
//! The correction directions are conditional-mean ratios, estimated by
//! regressing the derivative pseudo-outcomes on the covariates.

mod check;

use std::sync::Arc;

use crate::data::{Constant, Dataset, FunctionEstimate, Observation, SharedFn};
use crate::error::{Error, Result};
use crate::learners::Regressor;
use crate::score::{ScoreFamily, SolveKind};

pub use check::{check_orthogonality, OrthoCheck, DEFAULT_FD_STEP, MC_SHARD};

/// Fitted denominators smaller than this in magnitude are pushed out to it.
pub const DENOMINATOR_FLOOR: f64 = 1e-3;

/// Criterion `m(beta, f; w)` whose minimizer jointly defines `beta` and `f`.
pub trait CoupledCriterion: Send + Sync {
    fn d_beta_m(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d_f_m(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d2_beta_f_m(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d2_ff_m(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64;
    fn solve_kind(&self) -> SolveKind;
}

/// Score `psi(beta, f; w)` with `f` defined by a separate criterion `m1(f; w)`.
pub trait DecoupledCriterion: Send + Sync {
    fn psi(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d_f_psi(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d_f_m1(&self, f: f64, o: &Observation<'_>) -> f64;
    fn d2_ff_m1(&self, f: f64, o: &Observation<'_>) -> f64;
    fn solve_kind(&self) -> SolveKind;
}

/// Score `psi(beta, mu, f; w)` where `f` minimizes `m1(f; w)` and `mu`
/// minimizes `m2(mu, f; w)` given `f`.
pub trait SequentialCriterion: Send + Sync {
    fn psi(&self, beta: f64, mu: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d_mu_psi(&self, beta: f64, mu: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d_f_psi(&self, beta: f64, mu: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d_f_m1(&self, f: f64, o: &Observation<'_>) -> f64;
    fn d2_ff_m1(&self, f: f64, o: &Observation<'_>) -> f64;
    fn d_mu_m2(&self, mu: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d2_mumu_m2(&self, mu: f64, f: f64, o: &Observation<'_>) -> f64;
    fn d2_muf_m2(&self, mu: f64, f: f64, o: &Observation<'_>) -> f64;
    fn solve_kind(&self) -> SolveKind;
}

macro_rules! forward_criterion {
    ($tr:ident { $($name:ident ( $($arg:ident : $ty:ty),* )),* $(,)? }) => {
        impl<T: $tr + ?Sized> $tr for &T {
            $(fn $name(&self, $($arg: $ty),*) -> f64 { (**self).$name($($arg),*) })*
            fn solve_kind(&self) -> SolveKind { (**self).solve_kind() }
        }
        impl<T: $tr + ?Sized> $tr for Arc<T> {
            $(fn $name(&self, $($arg: $ty),*) -> f64 { (**self).$name($($arg),*) })*
            fn solve_kind(&self) -> SolveKind { (**self).solve_kind() }
        }
    };
}

forward_criterion!(CoupledCriterion {
    d_beta_m(beta: f64, f: f64, o: &Observation<'_>),
    d_f_m(beta: f64, f: f64, o: &Observation<'_>),
    d2_beta_f_m(beta: f64, f: f64, o: &Observation<'_>),
    d2_ff_m(beta: f64, f: f64, o: &Observation<'_>),
});

forward_criterion!(DecoupledCriterion {
    psi(beta: f64, f: f64, o: &Observation<'_>),
    d_f_psi(beta: f64, f: f64, o: &Observation<'_>),
    d_f_m1(f: f64, o: &Observation<'_>),
    d2_ff_m1(f: f64, o: &Observation<'_>),
});

forward_criterion!(SequentialCriterion {
    psi(beta: f64, mu: f64, f: f64, o: &Observation<'_>),
    d_mu_psi(beta: f64, mu: f64, f: f64, o: &Observation<'_>),
    d_f_psi(beta: f64, mu: f64, f: f64, o: &Observation<'_>),
    d_f_m1(f: f64, o: &Observation<'_>),
    d2_ff_m1(f: f64, o: &Observation<'_>),
    d_mu_m2(mu: f64, f: f64, o: &Observation<'_>),
    d2_mumu_m2(mu: f64, f: f64, o: &Observation<'_>),
    d2_muf_m2(mu: f64, f: f64, o: &Observation<'_>),
});

/// A fitted correction direction.
#[derive(Debug, Clone)]
pub struct DirectionEstimate {
    pub h: SharedFn,
    /// Training rows where the fitted denominator hit [`DENOMINATOR_FLOOR`].
    pub clipped: usize,
}

/// The three directions of the sequential regime.
#[derive(Debug, Clone)]
pub struct SequentialDirections {
    pub h1: SharedFn,
    pub h2: SharedFn,
    pub h3: SharedFn,
    pub clipped: usize,
}

/// `v` moved out to `±DENOMINATOR_FLOOR` when smaller in magnitude; zero maps
/// to the positive floor.
pub fn clip_denominator(v: f64) -> f64 {
    if v.abs() >= DENOMINATOR_FLOOR {
        v
    } else if v < 0.0 {
        -DENOMINATOR_FLOOR
    } else {
        DENOMINATOR_FLOOR
    }
}

/// `-num(x) / clip(den(x))`.
struct NegRatio {
    num: SharedFn,
    den: SharedFn,
}

impl FunctionEstimate for NegRatio {
    fn evaluate(&self, x: &[f64]) -> f64 {
        -self.num.evaluate(x) / clip_denominator(self.den.evaluate(x))
    }
}

/// Conditional mean of `t` given `x`. Constant pseudo-outcomes skip the
/// regression and return that constant exactly.
fn conditional_mean(data: &Dataset, t: &[f64], regressor: &dyn Regressor) -> Result<SharedFn> {
    if let Some(i) = t.iter().position(|v| !v.is_finite()) {
        return Err(Error::arg(format!("pseudo-outcome {i} is not finite")));
    }
    match t.first() {
        None => Err(Error::EmptyFold),
        Some(&c) if t.iter().all(|&v| v == c) => Ok(Arc::new(Constant(c))),
        Some(_) => regressor.fit(data.x(), t),
    }
}

fn fit_denominator(data: &Dataset, t: &[f64], regressor: &dyn Regressor) -> Result<(SharedFn, usize)> {
    if t.iter().all(|&v| v == 0.0) {
        return Err(Error::DirectionUndefined);
    }
    let den = conditional_mean(data, t, regressor)?;
    let clipped = den
        .evaluate_batch(data.x())
        .iter()
        .filter(|v| v.abs() < DENOMINATOR_FLOOR)
        .count();
    Ok((den, clipped))
}

fn ratio_direction(
    data: &Dataset,
    num: &[f64],
    den: &SharedFn,
    regressor: &dyn Regressor,
) -> Result<SharedFn> {
    if num.iter().all(|&v| v == 0.0) {
        return Ok(Arc::new(Constant(0.0)));
    }
    let num = conditional_mean(data, num, regressor)?;
    Ok(Arc::new(NegRatio {
        num,
        den: den.clone(),
    }))
}

fn fitted_at(f: &SharedFn, data: &Dataset) -> Vec<f64> {
    f.evaluate_batch(data.x())
}

/// `h(x) = -E[d2_beta_f m | x] / E[d2_ff m | x]` at the pilot `beta`.
pub fn fit_coupled_direction<M: CoupledCriterion + ?Sized>(
    model: &M,
    beta_pilot: f64,
    f_hat: &SharedFn,
    data: &Dataset,
    regressor: &dyn Regressor,
) -> Result<DirectionEstimate> {
    let f = fitted_at(f_hat, data);
    let (num, den): (Vec<f64>, Vec<f64>) = data
        .observations()
        .zip(&f)
        .map(|(o, &fi)| (model.d2_beta_f_m(beta_pilot, fi, &o), model.d2_ff_m(beta_pilot, fi, &o)))
        .unzip();
    let (den, clipped) = fit_denominator(data, &den, regressor)?;
    Ok(DirectionEstimate {
        h: ratio_direction(data, &num, &den, regressor)?,
        clipped,
    })
}

/// `h(x) = -E[d_f psi | x] / E[d2_ff m1 | x]` at the pilot `beta`.
pub fn fit_decoupled_direction<M: DecoupledCriterion + ?Sized>(
    model: &M,
    beta_pilot: f64,
    f_hat: &SharedFn,
    data: &Dataset,
    regressor: &dyn Regressor,
) -> Result<DirectionEstimate> {
    let f = fitted_at(f_hat, data);
    let (num, den): (Vec<f64>, Vec<f64>) = data
        .observations()
        .zip(&f)
        .map(|(o, &fi)| (model.d_f_psi(beta_pilot, fi, &o), model.d2_ff_m1(fi, &o)))
        .unzip();
    let (den, clipped) = fit_denominator(data, &den, regressor)?;
    Ok(DirectionEstimate {
        h: ratio_direction(data, &num, &den, regressor)?,
        clipped,
    })
}

/// The three sequential directions, fitted in the order `h1`, `h2`, `h3`:
///
/// - `h1 = -E[d_f psi | x] / E[d2_ff m1 | x]`
/// - `h2 = -E[d_mu psi | x] / E[d2_mumu m2 | x]`
/// - `h3 = -E[d2_muf m2 * h2 | x] / E[d2_ff m1 | x]`
pub fn fit_sequential_directions<M: SequentialCriterion + ?Sized>(
    model: &M,
    beta_pilot: f64,
    mu_hat: &SharedFn,
    f_hat: &SharedFn,
    data: &Dataset,
    regressor: &dyn Regressor,
) -> Result<SequentialDirections> {
    let f = fitted_at(f_hat, data);
    let mu = fitted_at(mu_hat, data);
    let n = data.n();
    let (mut t1, mut d1) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut t2, mut d2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, o) in data.observations().enumerate() {
        t1.push(model.d_f_psi(beta_pilot, mu[i], f[i], &o));
        d1.push(model.d2_ff_m1(f[i], &o));
        t2.push(model.d_mu_psi(beta_pilot, mu[i], f[i], &o));
        d2.push(model.d2_mumu_m2(mu[i], f[i], &o));
    }
    let (den1, c1) = fit_denominator(data, &d1, regressor)?;
    let h1 = ratio_direction(data, &t1, &den1, regressor)?;

    let (h2, c2) = if t2.iter().all(|&v| v == 0.0) {
        (Arc::new(Constant(0.0)) as SharedFn, 0)
    } else {
        let (den2, c2) = fit_denominator(data, &d2, regressor)?;
        (ratio_direction(data, &t2, &den2, regressor)?, c2)
    };

    let h2_at = fitted_at(&h2, data);
    let t3: Vec<f64> = data
        .observations()
        .enumerate()
        .map(|(i, o)| {
            if h2_at[i] == 0.0 {
                0.0
            } else {
                model.d2_muf_m2(mu[i], f[i], &o) * h2_at[i]
            }
        })
        .collect();
    let h3 = ratio_direction(data, &t3, &den1, regressor)?;

    Ok(SequentialDirections {
        h1,
        h2,
        h3,
        clipped: c1 + c2,
    })
}

/// `psi*(beta; w) = d_beta m + d_f m * h(x)`.
pub struct CoupledScore<M> {
    pub model: M,
    pub f: SharedFn,
    pub h: SharedFn,
}

impl<M: CoupledCriterion> ScoreFamily for CoupledScore<M> {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let f = self.f.evaluate(o.x);
        let base = self.model.d_beta_m(beta, f, o);
        let h = self.h.evaluate(o.x);
        if h == 0.0 {
            return base;
        }
        base + self.model.d_f_m(beta, f, o) * h
    }
    fn solve_kind(&self) -> SolveKind {
        self.model.solve_kind()
    }
}

pub fn build_coupled_score<M: CoupledCriterion>(model: M, f_hat: SharedFn, h_hat: SharedFn) -> CoupledScore<M> {
    CoupledScore {
        model,
        f: f_hat,
        h: h_hat,
    }
}

/// `psi*(beta; w) = psi + d_f m1 * h(x)`.
pub struct DecoupledScore<M> {
    pub model: M,
    pub f: SharedFn,
    pub h: SharedFn,
}

impl<M: DecoupledCriterion> ScoreFamily for DecoupledScore<M> {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let f = self.f.evaluate(o.x);
        let base = self.model.psi(beta, f, o);
        let h = self.h.evaluate(o.x);
        if h == 0.0 {
            return base;
        }
        base + self.model.d_f_m1(f, o) * h
    }
    fn solve_kind(&self) -> SolveKind {
        self.model.solve_kind()
    }
}

pub fn build_decoupled_score<M: DecoupledCriterion>(
    model: M,
    f_hat: SharedFn,
    h_hat: SharedFn,
) -> DecoupledScore<M> {
    DecoupledScore {
        model,
        f: f_hat,
        h: h_hat,
    }
}

/// `psi*(beta; w) = psi + d_f m1 * (h1 + h3) + d_mu m2 * h2`.
pub struct SequentialScore<M> {
    pub model: M,
    pub mu: SharedFn,
    pub f: SharedFn,
    pub h1: SharedFn,
    pub h2: SharedFn,
    pub h3: SharedFn,
}

impl<M: SequentialCriterion> ScoreFamily for SequentialScore<M> {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let f = self.f.evaluate(o.x);
        let mu = self.mu.evaluate(o.x);
        let mut v = self.model.psi(beta, mu, f, o);
        let h13 = self.h1.evaluate(o.x) + self.h3.evaluate(o.x);
        if h13 != 0.0 {
            v += self.model.d_f_m1(f, o) * h13;
        }
        let h2 = self.h2.evaluate(o.x);
        if h2 != 0.0 {
            v += self.model.d_mu_m2(mu, f, o) * h2;
        }
        v
    }
    fn solve_kind(&self) -> SolveKind {
        self.model.solve_kind()
    }
}

pub fn build_sequential_score<M: SequentialCriterion>(
    model: M,
    mu_hat: SharedFn,
    f_hat: SharedFn,
    directions: &SequentialDirections,
) -> SequentialScore<M> {
    SequentialScore {
        model,
        mu: mu_hat,
        f: f_hat,
        h1: directions.h1.clone(),
        h2: directions.h2.clone(),
        h3: directions.h3.clone(),
    }
}
