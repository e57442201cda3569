//! Nuisance-function learners.

mod linear;
mod logistic;
mod mlp;

use std::sync::Arc;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use linear::{fit_least_squares, MAX_CONDITION};
pub use logistic::{
    expit, fit_logistic, logit, softplus, LogisticModel, GRAD_TOL, LOGIT_CAP, MAX_NEWTON_ITER,
};
pub use mlp::{
    fit_mlp, gradient_check, gradient_check_at, EarlyStopping, LossKind, Mlp, MlpArchitecture,
    TrainConfig,
    FD_STEP,
};

use crate::data::SharedFn;
use crate::error::Result;

pub const SIGNED_WEIGHT_EPOCHS: usize = 10;

/// Fits a conditional-mean function of the covariates.
pub trait Regressor: Send + Sync {
    fn fit(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<SharedFn>;
}

/// Either an affine model or a ReLU network; used for regressions (plain or
/// weighted least squares) and for log-odds (cross-entropy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Learner {
    Linear,
    Mlp {
        arch: MlpArchitecture,
        config: TrainConfig,
    },
}

impl Learner {
    pub fn mlp_default(seed: u64) -> Self {
        Learner::Mlp {
            arch: MlpArchitecture::default(),
            config: TrainConfig::default().with_seed(seed),
        }
    }

    /// Default network trained with validation early stopping.
    pub fn mlp_early_stopping(seed: u64) -> Self {
        Learner::Mlp {
            arch: MlpArchitecture::default(),
            config: TrainConfig {
                early_stopping: Some(EarlyStopping::default()),
                ..TrainConfig::default().with_seed(seed)
            },
        }
    }

    /// Default network for signed-weight least squares, whose loss is
    /// unbounded below: a short fixed budget of [`SIGNED_WEIGHT_EPOCHS`].
    pub fn mlp_signed_weights(seed: u64) -> Self {
        Learner::Mlp {
            arch: MlpArchitecture::default(),
            config: TrainConfig {
                epochs: SIGNED_WEIGHT_EPOCHS,
                ..TrainConfig::default().with_seed(seed)
            },
        }
    }

    /// Same learner with its training seed replaced (no-op for linear).
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Learner::Linear => Learner::Linear,
            Learner::Mlp { arch, config } => Learner::Mlp {
                arch: *arch,
                config: config.with_seed(seed),
            },
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Learner::Linear)
    }

    /// (Weighted) least-squares regression of `y` on `x`.
    pub fn fit_regression(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<SharedFn> {
        match self {
            Learner::Linear => Ok(Arc::new(fit_least_squares(x, y, weights)?)),
            Learner::Mlp { arch, config } => {
                let loss = match weights {
                    Some(w) => LossKind::WeightedSquaredError(w.to_vec()),
                    None => LossKind::SquaredError,
                };
                Ok(Arc::new(fit_mlp(x, y, &loss, arch, config)?))
            }
        }
    }

    /// Log-odds of a binary label.
    pub fn fit_log_odds(&self, x: ArrayView2<'_, f64>, labels: &[f64]) -> Result<SharedFn> {
        let ones = labels.iter().filter(|&&z| z == 1.0).count();
        if ones == 0 || ones == labels.len() {
            return Err(crate::error::Error::DegenerateLabels);
        }
        match self {
            Learner::Linear => Ok(Arc::new(fit_logistic(x, labels)?)),
            Learner::Mlp { arch, config } => Ok(Arc::new(fit_mlp(
                x,
                labels,
                &LossKind::CrossEntropyOnLogits,
                arch,
                config,
            )?)),
        }
    }
}

impl Regressor for Learner {
    fn fit(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<SharedFn> {
        self.fit_regression(x, y, None)
    }
}
