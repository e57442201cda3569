//! Partially linear regression `Y = beta D + f(X) + e`.
//!
//! The orthogonal score partials out `m(x) = E[D | X=x]` and
//! `l(x) = E[Y | X=x]`:
//! `psi = (d - m(x)) (y - l(x) - beta (d - m(x)))`.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, SharedFn};
use crate::error::{Error, Result};
use crate::folds::{cross_fit, derive_seed, FoldFit, Rng};
use crate::inference::EstimationResult;
use crate::learners::Learner;
use crate::ortho::CoupledCriterion;
use crate::score::{ScoreFamily, SolveKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlrConfig {
    /// Learner for both `m` and `l`.
    pub learner: Learner,
    pub seed: u64,
}

impl PlrConfig {
    pub fn new(learner: Learner, seed: u64) -> Self {
        Self { learner, seed }
    }
}

/// Partialling-out score with fitted `m` and `l`.
pub struct PlrScore {
    pub m: SharedFn,
    pub l: SharedFn,
}

impl ScoreFamily for PlrScore {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let v = o.d - self.m.evaluate(o.x);
        v * (o.y - self.l.evaluate(o.x) - beta * v)
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Linear
    }
}

/// Non-orthogonal score `d (y - beta d - f(x))`, sensitive to `f`.
pub struct PlrNaiveScore {
    pub f: SharedFn,
}

impl ScoreFamily for PlrNaiveScore {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        o.d * (o.y - beta * o.d - self.f.evaluate(o.x))
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Linear
    }
}

/// Least-squares criterion `m = (beta d + f - y)^2 / 2` for the coupled
/// builder; its direction is `-E[D | X]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlrCriterion;

impl CoupledCriterion for PlrCriterion {
    fn d_beta_m(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64 {
        o.d * (beta * o.d + f - o.y)
    }
    fn d_f_m(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64 {
        beta * o.d + f - o.y
    }
    fn d2_beta_f_m(&self, _beta: f64, _f: f64, o: &Observation<'_>) -> f64 {
        o.d
    }
    fn d2_ff_m(&self, _beta: f64, _f: f64, _o: &Observation<'_>) -> f64 {
        1.0
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Linear
    }
}

/// Closed-form solve on one fold, `sum (d - m)(y - l) / sum (d - m)^2`,
/// and the sandwich variance `mean psi^2 / (mean (d - m)^2)^2`.
pub fn plr_fold_estimate(eval: &Dataset, m_hat: &SharedFn, l_hat: &SharedFn) -> Result<FoldFit> {
    if eval.n() == 0 {
        return Err(Error::EmptyFold);
    }
    let m = m_hat.evaluate_batch(eval.x());
    let l = l_hat.evaluate_batch(eval.x());
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..eval.n() {
        let v = eval.d()[i] - m[i];
        num += v * (eval.y()[i] - l[i]);
        den += v * v;
    }
    if den == 0.0 {
        return Err(Error::NoTreatmentVariation);
    }
    let beta = num / den;
    let n = eval.n() as f64;
    let mean_sq = (0..eval.n())
        .map(|i| {
            let v = eval.d()[i] - m[i];
            (v * (eval.y()[i] - l[i] - beta * v)).powi(2)
        })
        .sum::<f64>()
        / n;
    let j = den / n;
    Ok(FoldFit {
        beta,
        sigma2: mean_sq / (j * j),
    })
}

pub fn plr_crossfit(data: &Dataset, config: &PlrConfig) -> Result<EstimationResult> {
    cross_fit(data, derive_seed(config.seed, 0), "plr", |k, train, eval| {
        let seed = derive_seed(config.seed, 100 + k as u64);
        let m = config.learner.reseeded(derive_seed(seed, 0)).fit_regression(train.x(), train.d(), None)?;
        let l = config.learner.reseeded(derive_seed(seed, 1)).fit_regression(train.x(), train.y(), None)?;
        plr_fold_estimate(eval, &m, &l)
    })
}

/// Gaussian design with known nuisances, for checks and tests:
/// `X ~ N(0, I_2)`, `D = m0(X) + N(0,1)`, `Y = beta0 D + f0(X) + N(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlrDesign {
    pub beta0: f64,
}

impl Default for PlrDesign {
    fn default() -> Self {
        Self { beta0: 1.0 }
    }
}

impl PlrDesign {
    pub const P: usize = 2;

    pub fn m0(x: &[f64]) -> f64 {
        0.5 + x[0].tanh() + 0.25 * x[1]
    }

    pub fn f0(x: &[f64]) -> f64 {
        x[0].sin() + 0.5 * x[1] * x[1]
    }

    /// `E[Y | X=x] = beta0 m0(x) + f0(x)`.
    pub fn l0(&self, x: &[f64]) -> f64 {
        self.beta0 * Self::m0(x) + Self::f0(x)
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Result<Dataset> {
        let x = Array2::from_shape_fn((n, Self::P), |_| StandardNormal.sample(rng));
        let (mut y, mut d) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for row in x.rows() {
            let xi = row.as_slice().expect("standard layout");
            let v: f64 = StandardNormal.sample(rng);
            let e: f64 = StandardNormal.sample(rng);
            let di = Self::m0(xi) + v;
            d.push(di);
            y.push(self.beta0 * di + Self::f0(xi) + e);
        }
        Dataset::with_real_treatment(x, y, d)
    }
}
