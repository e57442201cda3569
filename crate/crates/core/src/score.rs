//! Per-observation score functions and the estimating-equation solvers.

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};

/// How the empirical estimating equation in `beta` is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    /// `psi(beta; w) = a(w) + b(w) * beta`; solved in closed form.
    Linear,
    /// Mean score is monotone in `beta`; solved by bisection.
    Monotone { increasing: bool },
}

/// A score `psi(beta; w)` with its nuisances already plugged in.
pub trait ScoreFamily: Send + Sync {
    fn eval(&self, beta: f64, obs: &Observation<'_>) -> f64;
    fn solve_kind(&self) -> SolveKind;
}

impl<S: ScoreFamily + ?Sized> ScoreFamily for Box<S> {
    fn eval(&self, beta: f64, obs: &Observation<'_>) -> f64 {
        (**self).eval(beta, obs)
    }
    fn solve_kind(&self) -> SolveKind {
        (**self).solve_kind()
    }
}

impl<S: ScoreFamily + ?Sized> ScoreFamily for std::sync::Arc<S> {
    fn eval(&self, beta: f64, obs: &Observation<'_>) -> f64 {
        (**self).eval(beta, obs)
    }
    fn solve_kind(&self) -> SolveKind {
        (**self).solve_kind()
    }
}

pub fn score_values<S: ScoreFamily + ?Sized>(score: &S, data: &Dataset, beta: f64) -> Vec<f64> {
    data.observations().map(|o| score.eval(beta, &o)).collect()
}

pub fn mean_score<S: ScoreFamily + ?Sized>(score: &S, data: &Dataset, beta: f64) -> f64 {
    let n = data.n().max(1) as f64;
    data.observations().map(|o| score.eval(beta, &o)).sum::<f64>() / n
}

/// Empirical second moment of the score at `beta_hat`, i.e. the plug-in
/// asymptotic variance when the score has unit slope in `beta`.
pub fn estimate_variance<S: ScoreFamily + ?Sized>(score: &S, beta_hat: f64, fold: &Dataset) -> f64 {
    let n = fold.n().max(1) as f64;
    fold.observations()
        .map(|o| score.eval(beta_hat, &o).powi(2))
        .sum::<f64>()
        / n
}

/// Solve `sum_i (A(w_i) - beta) = 0` for a score with slope exactly -1,
/// reading `A(w) = psi(0; w)`.
pub fn solve_beta_linear<S: ScoreFamily + ?Sized>(score: &S, fold: &Dataset) -> Result<f64> {
    if fold.n() == 0 {
        return Err(Error::EmptyFold);
    }
    let a: Vec<f64> = score_values(score, fold, 0.0);
    Ok(a.iter().sum::<f64>() / a.len() as f64)
}

/// Generic closed-form solve for a score affine in `beta`.
pub fn solve_affine<S: ScoreFamily + ?Sized>(score: &S, fold: &Dataset) -> Result<f64> {
    if fold.n() == 0 {
        return Err(Error::EmptyFold);
    }
    let (mut sa, mut sb) = (0.0, 0.0);
    for o in fold.observations() {
        let a = score.eval(0.0, &o);
        sa += a;
        sb += score.eval(1.0, &o) - a;
    }
    if sb == 0.0 || !sb.is_finite() || !sa.is_finite() {
        return Err(Error::Internal("score has no slope in beta".into()));
    }
    Ok(-sa / sb)
}

/// Maximum number of bracket doublings in [`solve_monotone`].
pub const MAX_EXPANSIONS: usize = 60;

/// Bisection for a nondecreasing function.
///
/// Returns the midpoint of a final bracket `[lo, hi]` of width at most `tol`
/// with `f(lo) < 0 <= f(hi)`, so for a step function the result is within
/// `tol` of the smallest point where `f` becomes non-negative. The initial
/// bracket is widened by doubling until it straddles a sign change.
pub fn solve_monotone<F>(f: F, bracket: (f64, f64), tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && tol > 0.0) {
        return Err(Error::arg("bracket must be finite and tol positive"));
    }
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut width = (hi - lo).max(1e-8);
    let mut expansions = 0;
    loop {
        let (flo, fhi) = (f(lo), f(hi));
        if flo.is_nan() || fhi.is_nan() {
            return Err(Error::Internal("score evaluated to NaN".into()));
        }
        let lo_ok = flo < 0.0;
        let hi_ok = fhi >= 0.0;
        if lo_ok && hi_ok {
            break;
        }
        if expansions == MAX_EXPANSIONS {
            return Err(Error::RootNotBracketed { expansions });
        }
        if !lo_ok {
            lo -= width;
        }
        if !hi_ok {
            hi += width;
        }
        width *= 2.0;
        expansions += 1;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solve the empirical estimating equation of `score` over `fold`.
pub fn solve_score<S: ScoreFamily + ?Sized>(
    score: &S,
    fold: &Dataset,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    if fold.n() == 0 {
        return Err(Error::EmptyFold);
    }
    match score.solve_kind() {
        SolveKind::Linear => solve_affine(score, fold),
        SolveKind::Monotone { increasing } => {
            let sign = if increasing { 1.0 } else { -1.0 };
            solve_monotone(|b| sign * mean_score(score, fold, b), bracket, tol)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    /// `psi = y - beta`.
    struct Centered;
    impl ScoreFamily for Centered {
        fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
            o.y - beta
        }
        fn solve_kind(&self) -> SolveKind {
            SolveKind::Linear
        }
    }

    fn fold(y: &[f64]) -> Dataset {
        let n = y.len();
        Dataset::new(Array2::zeros((n, 1)), y.to_vec(), vec![0.0; n], None).unwrap()
    }

    #[test]
    fn linear_solve_is_mean() {
        assert_eq!(solve_beta_linear(&Centered, &fold(&[1.0, 2.0, 3.0])).unwrap(), 2.0);
        assert_eq!(solve_beta_linear(&Centered, &fold(&[5.0])).unwrap(), 5.0);
        assert_eq!(solve_beta_linear(&Centered, &fold(&[])), Err(Error::EmptyFold));
    }

    #[test]
    fn linear_residual_vanishes() {
        let ys: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 113) as f64 * 0.37 - 11.0).collect();
        let f = fold(&ys);
        let b = solve_beta_linear(&Centered, &f).unwrap();
        let resid: f64 = score_values(&Centered, &f, b).iter().sum();
        assert!(resid.abs() <= 1e-10 * ys.len() as f64);
        assert_abs_diff_eq!(solve_affine(&Centered, &f).unwrap(), b, epsilon = 1e-12);
    }

    #[test]
    fn variance_is_mean_square() {
        assert_eq!(estimate_variance(&Centered, 0.0, &fold(&[0.0, 0.0])), 0.0);
        assert_eq!(estimate_variance(&Centered, 0.0, &fold(&[-1.0, 1.0])), 1.0);
    }

    #[test]
    fn bisection_linear_root() {
        let r = solve_monotone(|b| b - 2.0, (0.0, 10.0), 1e-8).unwrap();
        assert_abs_diff_eq!(r, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn bisection_step_root() {
        let sign = |b: f64| if b > 0.0 { 1.0 } else if b < 0.0 { -1.0 } else { 0.0 };
        let r = solve_monotone(sign, (-1.0, 3.0), 1e-8).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn bisection_expands_bracket() {
        let r = solve_monotone(|b| b - 1000.0, (0.0, 1.0), 1e-9).unwrap();
        assert_abs_diff_eq!(r, 1000.0, epsilon = 1e-8);
        let r = solve_monotone(|b| b + 77.0, (0.0, 1.0), 1e-9).unwrap();
        assert_abs_diff_eq!(r, -77.0, epsilon = 1e-8);
    }

    #[test]
    fn bisection_unbracketed() {
        let e = solve_monotone(|_| 1.0, (0.0, 1.0), 1e-8).unwrap_err();
        assert_eq!(e, Error::RootNotBracketed { expansions: MAX_EXPANSIONS });
    }

    #[test]
    fn sample_median_by_bisection() {
        let ys = [1.0, 2.0, 3.0, 4.0, 5.0];
        let score = |b: f64| ys.iter().map(|&y| (y <= b) as u8 as f64 - 0.5).sum::<f64>();
        // brute force: smallest grid point where the score turns non-negative
        let grid: Vec<f64> = (0..=600).map(|i| i as f64 * 0.01).collect();
        let oracle = *grid.iter().find(|&&b| score(b) >= 0.0).unwrap();
        assert_abs_diff_eq!(oracle, 3.0, epsilon = 1e-12);
        let r = solve_monotone(score, (1.0, 5.0), 1e-8).unwrap();
        assert_abs_diff_eq!(r, 3.0, epsilon = 1e-8);
    }

    #[test]
    fn decreasing_score_through_solve_score() {
        struct Dec;
        impl ScoreFamily for Dec {
            fn eval(&self, beta: f64, o: &Observation<'_>) -> f64 {
                o.y - beta
            }
            fn solve_kind(&self) -> SolveKind {
                SolveKind::Monotone { increasing: false }
            }
        }
        let f = fold(&[1.0, 2.0, 6.0]);
        let r = solve_score(&Dec, &f, (0.0, 1.0), 1e-10).unwrap();
        assert_abs_diff_eq!(r, 3.0, epsilon = 1e-9);
    }
}
