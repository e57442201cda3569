//! Binary-instrument causal estimator built on kappa weights.
//!
//! The target is `E[(Y(1) - Y(0)) 1{complier}]`. With `g(x) = P(Z=1 | X=x)`
//! and `f` its log-odds, the available scores are
//!
//! - robust: `(k1 - k0) y - (g - z) / (g (1 - g)) * h(x) - beta`
//! - moment: `(k1 - k0) y - beta`
//! - regression imputation: `k1 mu1(x) - k0 mu0(x) - beta`
//!
//! where `k0`, `k1` are the kappa weights from [`kappa`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, SharedFn};
use crate::error::{Error, Result};
use crate::folds::{cross_fit, derive_seed, FoldFit};
use crate::inference::EstimationResult;
use crate::learners::{expit, logit, Learner};
use crate::score::{estimate_variance, solve_beta_linear, ScoreFamily, SolveKind};

pub const DEFAULT_CLIP: f64 = 0.01;

const ROLE_LOG_ODDS: u64 = 0;
const ROLE_DIRECTION: u64 = 1;
const ROLE_LARF: u64 = 2;

/// Estimator variants, labelled as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LateMethod {
    RobustNp,
    RobustLr,
    Moment,
    RegNp,
    RegLr,
}

impl LateMethod {
    pub const ALL: [LateMethod; 5] = [
        LateMethod::RobustNp,
        LateMethod::RobustLr,
        LateMethod::Moment,
        LateMethod::RegNp,
        LateMethod::RegLr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LateMethod::RobustNp => "r-np",
            LateMethod::RobustLr => "r-lr",
            LateMethod::Moment => "m",
            LateMethod::RegNp => "reg-np",
            LateMethod::RegLr => "reg-lr",
        }
    }

    /// Whether the default nuisance learners are networks.
    pub fn is_nonparametric(self) -> bool {
        matches!(self, LateMethod::RobustNp | LateMethod::RegNp)
    }
}

impl fmt::Display for LateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LateMethod::ALL
            .into_iter()
            .find(|m| m.label() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::arg(format!("unknown method '{s}' (expected r-np, r-lr, m, reg-np, reg-lr)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateConfig {
    pub method: LateMethod,
    pub clip_epsilon: f64,
    /// Learner for the instrument log-odds.
    pub propensity: Learner,
    /// Learner for the correction direction (robust) or the response
    /// functions (regression imputation).
    pub nuisance: Learner,
    pub seed: u64,
}

impl LateConfig {
    /// Affine models for the parametric methods. The nonparametric methods
    /// use networks with validation early stopping, except for the
    /// signed-weight response fits, which train for the fixed epoch budget.
    pub fn new(method: LateMethod, seed: u64) -> Self {
        let (propensity, nuisance) = match method {
            LateMethod::RobustNp => (Learner::mlp_early_stopping(seed), Learner::mlp_early_stopping(seed)),
            LateMethod::RegNp => (Learner::mlp_early_stopping(seed), Learner::mlp_signed_weights(seed)),
            _ => (Learner::Linear, Learner::Linear),
        };
        Self {
            method,
            clip_epsilon: DEFAULT_CLIP,
            propensity,
            nuisance,
            seed,
        }
    }

    pub fn with_propensity(mut self, learner: Learner) -> Self {
        self.propensity = learner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 0.5) {
            return Err(Error::arg("clip_epsilon must lie in (0, 0.5)"));
        }
        Ok(())
    }

    fn role_seed(&self, role: u64) -> u64 {
        derive_seed(self.seed, role)
    }

    fn for_fold(&self, fold: usize) -> Self {
        Self {
            seed: derive_seed(self.seed, 100 + fold as u64),
            ..self.clone()
        }
    }
}

/// `(k0, k1)`:
///
/// - `k0 = (1 - d) ((1 - z) - (1 - g)) / ((1 - g) g)`
/// - `k1 = d (z - g) / ((1 - g) g)`
pub fn kappa(d: f64, z: f64, g: f64) -> Result<(f64, f64)> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::arg(format!("propensity {g} outside (0, 1)")));
    }
    Ok(kappa_unchecked(d, z, g))
}

fn kappa_unchecked(d: f64, z: f64, g: f64) -> (f64, f64) {
    let den = (1.0 - g) * g;
    ((1.0 - d) * ((1.0 - z) - (1.0 - g)) / den, d * (z - g) / den)
}

pub fn clip_propensity(g: f64, eps: f64) -> f64 {
    g.clamp(eps, 1.0 - eps)
}

/// Clipped `expit(f(x))`.
pub fn propensity_at(f_hat: &SharedFn, x: &[f64], eps: f64) -> f64 {
    clip_propensity(expit(f_hat.evaluate(x)), eps)
}

/// Instrument log-odds fitted on `train`.
pub fn estimate_log_odds(train: &Dataset, config: &LateConfig) -> Result<SharedFn> {
    let z = train.require_instrument()?;
    config
        .propensity
        .reseeded(config.role_seed(ROLE_LOG_ODDS))
        .fit_log_odds(train.x(), z)
}

/// `y ((e^{2f} - 1) / e^f z - e^f)` with `f` clipped to the log-odds range
/// of the clipped propensity.
pub fn h_pseudo_outcome(y: f64, z: f64, f: f64, eps: f64) -> f64 {
    let f = f.clamp(logit(eps), logit(1.0 - eps));
    let e = f.exp();
    y * ((e - 1.0 / e) * z - e)
}

/// Correction direction: regression of [`h_pseudo_outcome`] on `x`.
pub fn estimate_h(train: &Dataset, f_hat: &SharedFn, config: &LateConfig) -> Result<SharedFn> {
    let learner = config.nuisance.reseeded(config.role_seed(ROLE_DIRECTION));
    fit_direction(train, f_hat, config.clip_epsilon, &learner)
}

fn fit_direction(train: &Dataset, f_hat: &SharedFn, eps: f64, learner: &Learner) -> Result<SharedFn> {
    let z = train.require_instrument()?;
    let f = f_hat.evaluate_batch(train.x());
    let t: Vec<f64> = (0..train.n())
        .map(|i| h_pseudo_outcome(train.y()[i], z[i], f[i], eps))
        .collect();
    if let Some(i) = t.iter().position(|v| !v.is_finite()) {
        return Err(Error::Internal(format!("non-finite pseudo-outcome at row {i}")));
    }
    learner.fit_regression(train.x(), &t, None)
}

/// Local average response function for arm `t`: kappa-weighted least
/// squares of `y` on `x` with signed weights `k_t`.
pub fn fit_larf(train: &Dataset, f_hat: &SharedFn, arm: u8, config: &LateConfig) -> Result<SharedFn> {
    if arm > 1 {
        return Err(Error::arg("arm must be 0 or 1"));
    }
    let z = train.require_instrument()?;
    let w: Vec<f64> = (0..train.n())
        .map(|i| {
            let g = propensity_at(f_hat, train.x_row(i), config.clip_epsilon);
            let (k0, k1) = kappa_unchecked(train.d()[i], z[i], g);
            if arm == 0 {
                k0
            } else {
                k1
            }
        })
        .collect();
    config
        .nuisance
        .reseeded(config.role_seed(ROLE_LARF + arm as u64))
        .fit_regression(train.x(), train.y(), Some(&w))
}

fn kappas(f_hat: &SharedFn, o: &Observation<'_>, eps: f64) -> (f64, f64, f64) {
    let g = propensity_at(f_hat, o.x, eps);
    let (k0, k1) = kappa_unchecked(o.d, o.z, g);
    (g, k0, k1)
}

/// Orthogonal score.
pub struct RobustScore {
    pub f: SharedFn,
    pub h: SharedFn,
    pub clip_epsilon: f64,
}

impl ScoreFamily for RobustScore {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let (g, k0, k1) = kappas(&self.f, o, self.clip_epsilon);
        (k1 - k0) * o.y - (g - o.z) / (g * (1.0 - g)) * self.h.evaluate(o.x) - beta
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Linear
    }
}

/// Kappa-weighted moment score, first-order sensitive to `f`.
pub struct MomentScore {
    pub f: SharedFn,
    pub clip_epsilon: f64,
}

impl ScoreFamily for MomentScore {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let (_, k0, k1) = kappas(&self.f, o, self.clip_epsilon);
        (k1 - k0) * o.y - beta
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Linear
    }
}

/// Regression-imputation score.
pub struct RegressionScore {
    pub f: SharedFn,
    pub mu0: SharedFn,
    pub mu1: SharedFn,
    pub clip_epsilon: f64,
}

impl ScoreFamily for RegressionScore {
    fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
        let (_, k0, k1) = kappas(&self.f, o, self.clip_epsilon);
        k1 * self.mu1.evaluate(o.x) - k0 * self.mu0.evaluate(o.x) - beta
    }
    fn solve_kind(&self) -> SolveKind {
        SolveKind::Linear
    }
}

fn late_fold(train: &Dataset, eval: &Dataset, config: &LateConfig) -> Result<FoldFit> {
    let eps = config.clip_epsilon;
    let f = estimate_log_odds(train, config)?;
    match config.method {
        LateMethod::RobustNp | LateMethod::RobustLr => {
            let score = RobustScore {
                f: f.clone(),
                h: estimate_h(train, &f, config)?,
                clip_epsilon: eps,
            };
            let beta = solve_beta_linear(&score, eval)?;
            Ok(FoldFit {
                beta,
                sigma2: estimate_variance(&score, beta, eval),
            })
        }
        LateMethod::Moment => {
            let beta = solve_beta_linear(&MomentScore { f: f.clone(), clip_epsilon: eps }, eval)?;
            // interval from the orthogonal score, with an affine direction
            let robust = RobustScore {
                h: fit_direction(train, &f, eps, &Learner::Linear)?,
                f,
                clip_epsilon: eps,
            };
            Ok(FoldFit {
                beta,
                sigma2: estimate_variance(&robust, beta, eval),
            })
        }
        LateMethod::RegNp | LateMethod::RegLr => {
            let score = RegressionScore {
                mu0: fit_larf(train, &f, 0, config)?,
                mu1: fit_larf(train, &f, 1, config)?,
                f,
                clip_epsilon: eps,
            };
            let beta = solve_beta_linear(&score, eval)?;
            Ok(FoldFit {
                beta,
                sigma2: estimate_variance(&score, beta, eval),
            })
        }
    }
}

/// Two-fold cross-fitted estimate of the complier-weighted effect.
pub fn late_crossfit(data: &Dataset, config: &LateConfig) -> Result<EstimationResult> {
    config.validate()?;
    let z = data.require_instrument()?;
    if z.iter().all(|&v| v == z[0]) {
        return Err(Error::DegenerateLabels);
    }
    cross_fit(data, derive_seed(config.seed, 0), config.method.label(), |k, train, eval| {
        late_fold(train, eval, &config.for_fold(k))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::constant;
    use approx::assert_abs_diff_eq;

    fn obs(x: &[f64], y: f64, d: f64, z: f64) -> Observation<'_> {
        Observation { x, y, d, z }
    }

    #[test]
    fn kappa_hand_values() {
        assert_eq!(kappa(1.0, 1.0, 0.5).unwrap(), (0.0, 2.0));
        assert_eq!(kappa(0.0, 0.0, 0.5).unwrap(), (2.0, 0.0));
        assert_eq!(kappa(1.0, 0.0, 0.5).unwrap().1, -2.0);
        assert!(kappa(1.0, 0.0, 0.0).is_err());
        assert!(kappa(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn kappa_difference_identity() {
        for &(d, z) in &[(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            for g in [0.05, 0.3, 0.5, 0.77] {
                let (k0, k1) = kappa(d, z, g).unwrap();
                assert_abs_diff_eq!(k1 - k0, (z - g) / (g * (1.0 - g)), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn clipping_is_identity_inside() {
        assert_eq!(clip_propensity(0.3, 0.01), 0.3);
        assert_eq!(clip_propensity(0.001, 0.01), 0.01);
        assert_eq!(clip_propensity(0.9999, 0.01), 0.99);
    }

    #[test]
    fn robust_score_hand_value() {
        // g = 0.5: 2·3 − ((0.5 − 1)/0.25)·1 = 8
        let s = RobustScore { f: constant(0.0), h: constant(1.0), clip_epsilon: 0.01 };
        assert_abs_diff_eq!(s.eval(0.0, &obs(&[0.0], 3.0, 1.0, 1.0)), 8.0, epsilon = 1e-12);
        let m = MomentScore { f: constant(0.0), clip_epsilon: 0.01 };
        assert_abs_diff_eq!(m.eval(0.0, &obs(&[0.0], 3.0, 1.0, 1.0)), 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.eval(0.7, &obs(&[0.0], 0.0, 1.0, 0.0)), -0.7, epsilon = 1e-12);
    }

    #[test]
    fn regression_score_hand_value() {
        // g = 0.5, d = 1, z = 1: k1 = 2, k0 = 0
        let s = RegressionScore { f: constant(0.0), mu0: constant(5.0), mu1: constant(1.5), clip_epsilon: 0.01 };
        assert_abs_diff_eq!(s.eval(0.5, &obs(&[0.0], 9.0, 1.0, 1.0)), 2.5, epsilon = 1e-12);
        let zero = RegressionScore { f: constant(0.3), mu0: constant(0.0), mu1: constant(0.0), clip_epsilon: 0.01 };
        assert_eq!(zero.eval(1.25, &obs(&[0.0], 9.0, 0.0, 1.0)), -1.25);
    }

    #[test]
    fn pseudo_outcome_at_zero_log_odds() {
        assert_abs_diff_eq!(h_pseudo_outcome(2.5, 1.0, 0.0, 0.01), -2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(h_pseudo_outcome(2.5, 0.0, 0.0, 0.01), -2.5, epsilon = 1e-15);
        assert_eq!(h_pseudo_outcome(0.0, 1.0, 0.4, 0.01), 0.0);
        assert!(h_pseudo_outcome(1.0, 1.0, 1e6, 0.01).is_finite());
    }

    #[test]
    fn method_labels_round_trip() {
        for m in LateMethod::ALL {
            assert_eq!(m.label().parse::<LateMethod>().unwrap(), m);
        }
        assert_eq!("R-LR".parse::<LateMethod>().unwrap(), LateMethod::RobustLr);
        assert!("ipw".parse::<LateMethod>().is_err());
    }
}
