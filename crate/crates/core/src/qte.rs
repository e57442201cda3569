//! Robust inverse-propensity estimator of the `tau`-quantile of the treated
//! potential outcome `Y(1)`.
//!
//! With `g(x) = P(D=1 | X=x) = expit(f(x))` the orthogonal score is
//! `psi* = d/g (I(y <= beta) - tau) + (g - d) h(x)` where
//! `h(x) = E[D (I(Y <= beta) - tau) | X=x] / g(x)^2`.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::{Dataset, FunctionEstimate, Observation, SharedFn};
use crate::error::{Error, Result};
use crate::folds::{cross_fit, derive_seed, FoldFit, Rng};
use crate::inference::EstimationResult;
use crate::learners::{expit, Learner};
use crate::ortho::DecoupledCriterion;
use crate::score::{mean_score, solve_monotone, ScoreFamily, SolveKind};

pub const DEFAULT_CLIP: f64 = 0.01;
pub const DEFAULT_BISECTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QteConfig {
    pub tau: f64,
    pub clip_epsilon: f64,
    /// Treatment log-odds learner.
    pub propensity: Learner,
    /// Learner for the correction direction `h`.
    pub direction: Learner,
    pub bisection_tol: f64,
    pub seed: u64,
}

impl QteConfig {
    pub fn new(tau: f64, seed: u64) -> Self {
        Self {
            tau,
            clip_epsilon: DEFAULT_CLIP,
            propensity: Learner::Linear,
            direction: Learner::Linear,
            bisection_tol: DEFAULT_BISECTION_TOL,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::arg(format!("tau = {} outside (0, 1)", self.tau)));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 0.5) {
            return Err(Error::arg("clip_epsilon must lie in (0, 0.5)"));
        }
        if !(self.bisection_tol > 0.0 && self.bisection_tol.is_finite()) {
            return Err(Error::arg("bisection_tol must be positive"));
        }
        Ok(())
    }
}

fn indicator_gap(y: f64, beta: f64, tau: f64) -> f64 {
    if y <= beta {
        1.0 - tau
    } else {
        -tau
    }
}

/// Orthogonal score with the propensity `g` given directly.
pub struct QteScore {
    pub g: SharedFn,
    pub h: SharedFn,
    pub tau: f64,
}

impl QteScore {
    /// Propensity `expit(f)` clipped to `[eps, 1 - eps]`.
    pub fn from_log_odds(f: SharedFn, h: SharedFn, tau: f64, eps: f64) -> Self {
        Self {
            g: clipped_propensity(f, eps),
            h,
            tau,
        }
    }
}

impl ScoreFamily for QteScore {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let g = self.g.evaluate(o.x);
        let base = o.d / g * indicator_gap(o.y, beta, self.tau);
        let h = self.h.evaluate(o.x);
        if h == 0.0 {
            return base;
        }
        base + (g - o.d) * h
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Monotone { increasing: true }
    }
}

/// IPW score without correction; not orthogonal in `f`.
pub struct IpwScore {
    pub g: SharedFn,
    pub tau: f64,
}

impl ScoreFamily for IpwScore {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        o.d / self.g.evaluate(o.x) * indicator_gap(o.y, beta, self.tau)
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Monotone { increasing: true }
    }
}

/// The quantile model as a decoupled criterion: `psi = d (1 + e^{-f}) (I - tau)`
/// with cross-entropy `m1 = log(1 + e^f) - d f`.
#[derive(Debug, Clone, Copy)]
pub struct QteCriterion {
    pub tau: f64,
}

impl DecoupledCriterion for QteCriterion {
    fn psi(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64 {
        o.d * (1.0 + (-f).exp()) * indicator_gap(o.y, beta, self.tau)
    }
    fn d_f_psi(&self, beta: f64, f: f64, o: &Observation<'_>) -> f64 {
        -o.d * (-f).exp() * indicator_gap(o.y, beta, self.tau)
    }
    fn d_f_m1(&self, f: f64, o: &Observation<'_>) -> f64 {
        expit(f) - o.d
    }
    fn d2_ff_m1(&self, f: f64, _o: &Observation<'_>) -> f64 {
        let g = expit(f);
        g * (1.0 - g)
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Monotone { increasing: true }
    }
}

struct ClippedExpit {
    f: SharedFn,
    eps: f64,
}

impl FunctionEstimate for ClippedExpit {
    fn evaluate(&self, x: &[f64]) -> f64 {
        expit(self.f.evaluate(x)).clamp(self.eps, 1.0 - self.eps)
    }
}

pub fn clipped_propensity(f: SharedFn, eps: f64) -> SharedFn {
    std::sync::Arc::new(ClippedExpit { f, eps })
}

fn outcome_range(data: &Dataset) -> (f64, f64) {
    data.y()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Bisection root of the empirical mean of `score` over `data`, started at
/// the outcome range.
pub fn solve_quantile_score<S: ScoreFamily + ?Sized>(score: &S, data: &Dataset, tol: f64) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::EmptyFold);
    }
    solve_monotone(|b| mean_score(score, data, b), outcome_range(data), tol)
}

/// Pseudo-outcomes `d (I(y <= beta) - tau) / g^2` for the direction regression.
pub fn h_pseudo_outcomes(data: &Dataset, g: &SharedFn, beta: f64, tau: f64) -> Vec<f64> {
    data.observations()
        .map(|o| {
            let gi = g.evaluate(o.x);
            o.d * indicator_gap(o.y, beta, tau) / (gi * gi)
        })
        .collect()
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    if lo + 1 < s.len() {
        s[lo] + frac * (s[lo + 1] - s[lo])
    } else {
        s[lo]
    }
}

/// Gaussian-kernel density at `at` of the treated outcomes weighted by `d/g`,
/// bandwidth `0.9 min(sd, IQR/1.34) m^{-1/5}` over the `m` treated outcomes.
pub fn ipw_density(data: &Dataset, g: &SharedFn, at: f64) -> Result<f64> {
    let treated: Vec<(f64, f64)> = data
        .observations()
        .filter(|o| o.d == 1.0)
        .map(|o| (o.y, 1.0 / g.evaluate(o.x)))
        .collect();
    if treated.len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let m = treated.len() as f64;
    let mean = treated.iter().map(|t| t.0).sum::<f64>() / m;
    let sd = (treated.iter().map(|t| (t.0 - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let mut ys: Vec<f64> = treated.iter().map(|t| t.0).collect();
    ys.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&ys, 0.75) - quantile_sorted(&ys, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Internal("treated outcomes have no spread".into()));
    }
    let bw = 0.9 * spread * m.powf(-0.2);
    let kernel = Normal::standard();
    let (num, den) = treated.iter().fold((0.0, 0.0), |(a, b), &(y, w)| {
        (a + w * kernel.pdf((at - y) / bw), b + w)
    });
    Ok(num / (den * bw))
}

fn check_arms(data: &Dataset) -> Result<()> {
    let treated = data.d().iter().filter(|&&d| d == 1.0).count();
    if treated == 0 || treated == data.n() {
        return Err(Error::DegenerateLabels);
    }
    Ok(())
}

/// One fold: propensity, pilot and direction on `train`; solve and variance
/// on `eval`.
pub fn qte_fold(k: usize, train: &Dataset, eval: &Dataset, config: &QteConfig) -> Result<FoldFit> {
    check_arms(train)?;
    check_arms(eval)?;
    let seed = derive_seed(config.seed, 100 + k as u64);
    let f = config
        .propensity
        .reseeded(derive_seed(seed, 0))
        .fit_log_odds(train.x(), train.d())?;
    let g = clipped_propensity(f, config.clip_epsilon);
    let pilot = solve_quantile_score(
        &IpwScore { g: g.clone(), tau: config.tau },
        train,
        config.bisection_tol,
    )?;
    let t = h_pseudo_outcomes(train, &g, pilot, config.tau);
    let h = config
        .direction
        .reseeded(derive_seed(seed, 1))
        .fit_regression(train.x(), &t, None)?;
    let score = QteScore { g: g.clone(), h, tau: config.tau };
    let beta = solve_quantile_score(&score, eval, config.bisection_tol)?;
    let psi2 = eval.observations().map(|o| score.eval(beta, &o).powi(2)).sum::<f64>() / eval.n() as f64;
    let dens = ipw_density(eval, &g, beta)?;
    Ok(FoldFit {
        beta,
        sigma2: psi2 / (dens * dens),
    })
}

pub fn qte_crossfit(data: &Dataset, config: &QteConfig) -> Result<EstimationResult> {
    config.validate()?;
    check_arms(data)?;
    cross_fit(data, derive_seed(config.seed, 0), "qte", |k, train, eval| {
        qte_fold(k, train, eval, config)
    })
}

/// Synthetic design with closed-form nuisances: `X ~ U(-1,1)^2`,
/// `D ~ Bernoulli(expit(x1/2 - x2/2))`, `Y(1) = x1 + N(0,1)`, `Y(0) ~ N(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QteDesign {
    pub tau: f64,
}

impl QteDesign {
    pub const P: usize = 2;

    pub fn f0(x: &[f64]) -> f64 {
        0.5 * x[0] - 0.5 * x[1]
    }

    pub fn g0(x: &[f64]) -> f64 {
        expit(Self::f0(x))
    }

    /// Marginal CDF of `Y(1)`: `(G(b+1) - G(b-1)) / 2`, `G(t) = t Phi(t) + phi(t)`.
    pub fn cdf_treated(b: f64) -> f64 {
        let n = Normal::standard();
        let big_g = |t: f64| t * n.cdf(t) + n.pdf(t);
        0.5 * (big_g(b + 1.0) - big_g(b - 1.0))
    }

    /// Density of `Y(1)`: `(Phi(b+1) - Phi(b-1)) / 2`.
    pub fn density_treated(b: f64) -> f64 {
        let n = Normal::standard();
        0.5 * (n.cdf(b + 1.0) - n.cdf(b - 1.0))
    }

    /// True `tau`-quantile of `Y(1)`.
    pub fn beta0(&self) -> f64 {
        solve_monotone(|b| Self::cdf_treated(b) - self.tau, (-5.0, 5.0), 1e-13)
            .expect("cdf is continuous and spans (0, 1)")
    }

    /// `h0(x) = (Phi(beta0 - x1) - tau) / g0(x)`.
    pub fn h0(&self, x: &[f64], beta0: f64) -> f64 {
        (Normal::standard().cdf(beta0 - x[0]) - self.tau) / Self::g0(x)
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Result<Dataset> {
        let x = Array2::from_shape_fn((n, Self::P), |_| rng.random_range(-1.0..1.0));
        let (mut y, mut d) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for row in x.rows() {
            let xi = row.as_slice().expect("standard layout");
            let treated = rng.random::<f64>() < Self::g0(xi);
            let e: f64 = StandardNormal.sample(rng);
            d.push(if treated { 1.0 } else { 0.0 });
            y.push(if treated { xi[0] + e } else { e });
        }
        Dataset::new(x, y, d, None)
    }
}
