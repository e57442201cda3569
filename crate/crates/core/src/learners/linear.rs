use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use crate::data::Affine;
use crate::error::{Error, Result};

/// Gram matrices with a condition estimate above this get a small ridge.
pub const MAX_CONDITION: f64 = 1e12;

/// Weighted least squares with intercept.
///
/// Minimizes `sum_i w_i (y_i - b0 - x_i' b)^2`. Weights may be negative;
/// the normal equations are solved by LU, and a ridge of
/// `1e-8 * |trace| / k` is added when the Gram matrix is ill-conditioned.
pub fn fit_least_squares(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    weights: Option<&[f64]>,
) -> Result<Affine> {
    let (n, p) = x.dim();
    if y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::arg("least squares: length mismatch"));
    }
    if n <= p {
        return Err(Error::Underdetermined { n, p });
    }
    if x.iter().chain(y).chain(weights.unwrap_or(&[])).any(|v| !v.is_finite()) {
        return Err(Error::arg("least squares: non-finite input"));
    }

    let k = p + 1;
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for (i, xi) in x.rows().into_iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        row[0] = 1.0;
        for (j, v) in xi.iter().enumerate() {
            row[j + 1] = *v;
        }
        for a in 0..k {
            let wa = w * row[a];
            rhs[a] += wa * y[i];
            for b in a..k {
                gram[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }

    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if max == 0.0 {
        return Err(Error::arg("least squares: all weights are zero"));
    }
    if min == 0.0 || max / min > MAX_CONDITION {
        let ridge = 1e-8 * gram.trace().abs().max(f64::MIN_POSITIVE) / k as f64;
        for a in 0..k {
            gram[(a, a)] += ridge;
        }
    }

    let coef = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("singular normal equations".into()))?;
    Ok(Affine {
        intercept: coef[0],
        slopes: coef.iter().skip(1).copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FunctionEstimate;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn exact_line() {
        let f = fit_least_squares(array![[1.0], [2.0]].view(), &[2.0, 4.0], None).unwrap();
        assert_abs_diff_eq!(f.evaluate(&[3.0]), 6.0, epsilon = 1e-10);
    }

    #[test]
    fn constant_target() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 31 + j * 17) % 11) as f64 - 5.0);
        let f = fit_least_squares(x.view(), &[4.25; 30], None).unwrap();
        assert_abs_diff_eq!(f.intercept, 4.25, epsilon = 1e-10);
        for s in &f.slopes {
            assert_abs_diff_eq!(*s, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_weight_drops_row() {
        let x = array![[0.0], [1.0], [2.0]];
        let f = fit_least_squares(x.view(), &[0.0, 1.0, 4.0], Some(&[1.0, 1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(f.evaluate(&[2.0]), 2.0, epsilon = 1e-10);
    }

    #[test]
    fn unit_weights_match_unweighted() {
        let x = Array2::from_shape_fn((50, 2), |(i, j)| ((i * 7 + j * 3) % 13) as f64 / 13.0);
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = fit_least_squares(x.view(), &y, None).unwrap();
        let b = fit_least_squares(x.view(), &y, Some(&[1.0; 50])).unwrap();
        assert_abs_diff_eq!(a.intercept, b.intercept, epsilon = 1e-10);
        for (u, v) in a.slopes.iter().zip(&b.slopes) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-10);
        }
    }

    #[test]
    fn errors() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(
            fit_least_squares(x.view(), &[1.0, 2.0], None),
            Err(Error::Underdetermined { n: 2, p: 2 })
        );
        let x = array![[1.0], [f64::INFINITY], [0.0]];
        assert!(matches!(
            fit_least_squares(x.view(), &[1.0, 2.0, 3.0], None),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn collinear_columns_get_ridge() {
        // second column duplicates the first
        let x = Array2::from_shape_fn((20, 2), |(i, _)| i as f64);
        let y: Vec<f64> = (0..20).map(|i| 1.0 + 2.0 * i as f64).collect();
        let f = fit_least_squares(x.view(), &y, None).unwrap();
        assert!(f.slopes.iter().all(|s| s.is_finite()));
        assert_abs_diff_eq!(f.evaluate(&[5.0, 5.0]), 11.0, epsilon = 1e-4);
    }
}
