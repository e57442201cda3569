use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{Dataset, Perturbed, SharedFn};
use crate::error::{Error, Result};
use crate::folds::{derive_seed, rng_from_seed, Rng};
use crate::score::ScoreFamily;

pub const DEFAULT_FD_STEP: f64 = 1e-3;
/// Draws per Monte Carlo shard.
pub const MC_SHARD: usize = 1 << 16;

/// Finite-difference Gateaux derivative of the mean score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthoCheck {
    pub derivative: f64,
    pub mc_std_err: f64,
    pub n_mc: usize,
}

impl OrthoCheck {
    /// `|derivative| / mc_std_err`; 0 when both vanish.
    pub fn z_ratio(&self) -> f64 {
        if self.derivative == 0.0 {
            0.0
        } else {
            self.derivative.abs() / self.mc_std_err
        }
    }

    pub fn within(&self, k: f64) -> bool {
        self.derivative.abs() <= k * self.mc_std_err
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (v - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * o.n / n,
            m2: self.m2 + o.m2 + delta * delta * self.n * o.n / n,
        }
    }
}

/// Central finite difference of `beta -> mean psi*(beta0; nuisance ± eps·direction)`
/// over `n_mc` draws from `sample`.
///
/// `build` turns a (perturbed) value of the nuisance under test into a score;
/// every other nuisance stays fixed inside the closure. Both sides of the
/// stencil see the same draws, and the standard error is that of the
/// per-draw difference quotient. Draws are generated in shards of
/// [`MC_SHARD`] with seeds derived from `seed` and reduced in shard order.
#[allow(clippy::too_many_arguments)]
pub fn check_orthogonality<B, S, G>(
    build: B,
    sample: G,
    beta0: f64,
    nuisance: &SharedFn,
    direction: &SharedFn,
    epsilon: f64,
    n_mc: usize,
    seed: u64,
) -> Result<OrthoCheck>
where
    B: Fn(SharedFn) -> S + Sync,
    S: ScoreFamily,
    G: Fn(&mut Rng, usize) -> Result<Dataset> + Sync,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    if n_mc == 0 {
        return Err(Error::arg("n_mc must be positive"));
    }
    let shift = |step: f64| -> SharedFn {
        Arc::new(Perturbed {
            base: nuisance.clone(),
            direction: direction.clone(),
            step,
        })
    };
    let up = build(shift(epsilon));
    let down = build(shift(-epsilon));

    let shards = n_mc.div_ceil(MC_SHARD);
    let parts: Vec<Result<Moments>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let size = MC_SHARD.min(n_mc - s * MC_SHARD);
            let mut rng = rng_from_seed(derive_seed(seed, s as u64));
            let data = sample(&mut rng, size)?;
            let mut acc = Moments::default();
            for o in data.observations() {
                acc.push((up.eval(beta0, &o) - down.eval(beta0, &o)) / (2.0 * epsilon));
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::default();
    for p in parts {
        total = total.merge(p?);
    }
    let var = if total.n > 1.0 { total.m2 / (total.n - 1.0) } else { 0.0 };
    Ok(OrthoCheck {
        derivative: total.mean,
        mc_std_err: (var / total.n).sqrt(),
        n_mc,
    })
}
