use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use crate::data::{Affine, FunctionEstimate};
use crate::error::{Error, Result};

pub const MAX_NEWTON_ITER: usize = 100;
pub const GRAD_TOL: f64 = 1e-8;
/// Newton stops once any fitted log-odds exceeds this magnitude; on
/// separable data the optimum is at infinity.
pub const LOGIT_CAP: f64 = 30.0;

/// `log(1 + e^v)` without overflow.
pub fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

pub fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Affine log-odds model fitted by damped Newton iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coef: Affine,
    /// Mean cross-entropy after each accepted iterate, starting with the
    /// initial point.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

impl FunctionEstimate for LogisticModel {
    fn evaluate(&self, x: &[f64]) -> f64 {
        self.coef.evaluate(x)
    }
}

fn design(x: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (n, p) = x.dim();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] })
}

fn mean_loss(eta: &DVector<f64>, labels: &[f64]) -> f64 {
    eta.iter()
        .zip(labels)
        .map(|(&e, &z)| softplus(e) - z * e)
        .sum::<f64>()
        / labels.len() as f64
}

/// Minimize the mean cross-entropy `log(1 + e^f) - z f` over affine `f`.
pub fn fit_logistic(x: ArrayView2<'_, f64>, labels: &[f64]) -> Result<LogisticModel> {
    let (n, p) = x.dim();
    if labels.len() != n {
        return Err(Error::arg("logistic: length mismatch"));
    }
    if labels.iter().any(|&z| z != 0.0 && z != 1.0) {
        return Err(Error::arg("logistic: labels must be 0 or 1"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("logistic: non-finite covariates"));
    }
    let ones = labels.iter().filter(|&&z| z == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateLabels);
    }

    let zmat = design(x);
    let z = DVector::from_column_slice(labels);
    let mut beta = DVector::<f64>::zeros(p + 1);
    beta[0] = logit(ones as f64 / n as f64);
    let mut eta = &zmat * &beta;
    let mut loss = mean_loss(&eta, labels);
    let mut history = vec![loss];
    let mut converged = false;

    for _ in 0..MAX_NEWTON_ITER {
        let prob = eta.map(expit);
        let grad = zmat.tr_mul(&(&prob - &z)) / n as f64;
        if grad.norm() <= GRAD_TOL {
            converged = true;
            break;
        }
        let curv = prob.map(|q| q * (1.0 - q));
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        for (i, row) in zmat.row_iter().enumerate() {
            hess.ger(curv[i] / n as f64, &row.transpose(), &row.transpose(), 1.0);
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => {
                let ridge = 1e-10 * hess.trace().max(1e-300);
                for j in 0..=p {
                    hess[(j, j)] += ridge;
                }
                hess.lu()
                    .solve(&grad)
                    .ok_or_else(|| Error::Internal("singular Hessian".into()))?
            }
        };

        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = &beta - &step * t;
            let cand_eta = &zmat * &cand;
            let cand_loss = mean_loss(&cand_eta, labels);
            if cand_loss.is_finite() && cand_loss <= loss {
                accepted = Some((cand, cand_eta, cand_loss));
                break;
            }
            t *= 0.5;
        }
        let Some((b, e, l)) = accepted else {
            converged = true;
            break;
        };
        let stalled = l == loss;
        beta = b;
        eta = e;
        loss = l;
        history.push(loss);
        if stalled || eta.iter().any(|v| v.abs() > LOGIT_CAP) {
            break;
        }
    }

    Ok(LogisticModel {
        coef: Affine {
            intercept: beta[0],
            slopes: beta.iter().skip(1).copied().collect(),
        },
        loss_history: history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    #[test]
    fn stable_helpers() {
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_eq!(expit(0.0), 0.5);
        assert_abs_diff_eq!(logit(expit(1.3)), 1.3, epsilon = 1e-12);
    }

    #[test]
    fn no_signal_gives_intercept_only() {
        // labels alternate while x follows an unrelated pattern balanced within each class
        let n = 400;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 });
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let m = fit_logistic(x.view(), &labels).unwrap();
        assert!(m.converged);
        assert_abs_diff_eq!(m.coef.intercept, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.coef.slopes[0], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn unbalanced_intercept_is_logit_of_mean() {
        let n = 500;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| if i % 2 == 0 { 0.5 } else { -0.5 });
        // 30% ones in each x-group
        let labels: Vec<f64> = (0..n).map(|i| (((i / 2) % 10) < 3) as u8 as f64).collect();
        let m = fit_logistic(x.view(), &labels).unwrap();
        let mean = labels.iter().sum::<f64>() / n as f64;
        assert_abs_diff_eq!(m.coef.intercept, logit(mean), epsilon = 1e-6);
        assert_abs_diff_eq!(m.coef.slopes[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn separable_data_stays_finite() {
        let x = Array2::from_shape_fn((200, 1), |(i, _)| if i % 2 == 0 { -1.0 } else { 1.0 });
        let labels: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let m = fit_logistic(x.view(), &labels).unwrap();
        assert!(m.coef.intercept.is_finite() && m.coef.slopes[0].is_finite());
        assert!(m.evaluate(&[1.0]).is_finite());
        // brute-force sign check: the loss over a slope grid decreases towards positive slopes
        let loss_at = |s: f64| {
            (0..200)
                .map(|i| {
                    let xv = if i % 2 == 0 { -1.0 } else { 1.0 };
                    softplus(s * xv) - (i % 2) as f64 * s * xv
                })
                .sum::<f64>()
        };
        let best = (-50..=50)
            .map(|k| k as f64 * 0.2)
            .min_by(|a, b| loss_at(*a).total_cmp(&loss_at(*b)))
            .unwrap();
        assert!(best > 0.0);
        assert!(m.coef.slopes[0] > 0.0);
        assert!(m.evaluate(&[1.0]) > m.evaluate(&[-1.0]));
    }

    #[test]
    fn loss_never_increases() {
        let n = 300;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (((i * 13 + j * 7) % 17) as f64 - 8.0) / 4.0);
        let labels: Vec<f64> = (0..n)
            .map(|i| ((x[[i, 0]] - 0.5 * x[[i, 1]] + ((i * 37) % 5) as f64 - 2.0) > 0.0) as u8 as f64)
            .collect();
        let m = fit_logistic(x.view(), &labels).unwrap();
        assert!(m.loss_history.len() >= 2);
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn degenerate() {
        let x = Array2::zeros((10, 1));
        assert_eq!(fit_logistic(x.view(), &[1.0; 10]), Err(Error::DegenerateLabels));
        assert_eq!(fit_logistic(x.view(), &[0.0; 10]), Err(Error::DegenerateLabels));
    }
}
