//! Synthetic binary-instrument design and the replication engine.
//!
//! Covariates are standard normal truncated to `[-1, 1]`. The instrument has
//! log-odds [`f0_true`]; a latent stratum picks always-takers, compliers and
//! never-takers with probabilities 0.2, 0.6, 0.2; compliers follow the
//! scenario's response functions, whose arm difference is 3, so the target
//! is `0.6 * 3 = 1.8`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::{derive_seed, rng_from_seed, Rng};
use crate::inference::EstimationResult;
use crate::late::{late_crossfit, LateConfig};
use crate::learners::expit;

pub const BETA0: f64 = 1.8;
/// Probabilities of always-taker, complier, never-taker.
pub const STRATUM_PROBS: [f64; 3] = [0.2, 0.6, 0.2];
/// Structural functions read `x1..x4`.
pub const MIN_P: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s1" => Ok(Scenario::S1),
            "s2" => Ok(Scenario::S2),
            _ => Err(Error::arg(format!("unknown scenario '{s}' (expected s1 or s2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stratum {
    AlwaysTaker,
    Complier,
    NeverTaker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < MIN_P {
            return Err(Error::arg(format!("p = {} but the design needs p >= {MIN_P}", self.p)));
        }
        if self.n == 0 {
            return Err(Error::arg("n must be positive"));
        }
        Ok(())
    }
}

/// Latent quantities behind a generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta0: f64,
    pub strata: Vec<Stratum>,
}

/// Standard normal drawn until it lands in `[-1, 1]`.
fn truncated_normal(rng: &mut Rng) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if (-1.0..=1.0).contains(&v) {
            return v;
        }
    }
}

pub fn gen_covariates(n: usize, p: usize, rng: &mut Rng) -> Array2<f64> {
    let mut x = Array2::zeros((n, p));
    x.iter_mut().for_each(|v| *v = truncated_normal(rng));
    x
}

/// `x1^2 x2^3 + log(x2 x3 + 4) - exp(x3 x4 / 2) - 0.5`.
pub fn f0_true(x: &[f64]) -> f64 {
    x[0].powi(2) * x[1].powi(3) + (x[1] * x[2] + 4.0).ln() - (x[2] * x[3] / 2.0).exp() - 0.5
}

pub fn g0_true(x: &[f64]) -> f64 {
    expit(f0_true(x))
}

/// Complier response function for arm `t`.
pub fn mu_true(x: &[f64], t: f64, scenario: Scenario) -> f64 {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    let base = match scenario {
        Scenario::S1 => {
            (PI * x1 * x2).cos() + x1 * x2 * x3.powi(3) + (x2 * x3 - 1.0).exp() + (3.0 + x3 * x4).ln()
        }
        Scenario::S2 => (PI * x1 * x2 / 2.0).sin() + (x2 * x3 + 1.5).ln() + (x3 * x4 / 2.0).exp(),
    };
    base + 3.0 * t
}

fn always_taker_mean(x: &[f64], d: f64) -> f64 {
    x[0] + x[1] + x[2] + x[3] + 2.0 * d
}

fn never_taker_mean(x: &[f64], d: f64) -> f64 {
    0.6 * x[0] + 0.8 * x[1] + x[2] + 1.2 * x[3] - 2.0 * d
}

/// `E[Y | X = x, Z = z]`.
pub fn outcome_mean_given_instrument(x: &[f64], z: f64, scenario: Scenario) -> f64 {
    let [pa, pc, pn] = STRATUM_PROBS;
    pa * always_taker_mean(x, 1.0) + pc * mu_true(x, z, scenario) + pn * never_taker_mean(x, 0.0)
}

/// The correction direction at the truth, `-[(1 - g) E[Y|x, Z=1] + g E[Y|x, Z=0]]`.
pub fn h0_true(x: &[f64], scenario: Scenario) -> f64 {
    let g = g0_true(x);
    -((1.0 - g) * outcome_mean_given_instrument(x, 1.0, scenario)
        + g * outcome_mean_given_instrument(x, 0.0, scenario))
}

fn draw_stratum(rng: &mut Rng) -> Stratum {
    let u: f64 = rng.random();
    if u < STRATUM_PROBS[0] {
        Stratum::AlwaysTaker
    } else if u < STRATUM_PROBS[0] + STRATUM_PROBS[1] {
        Stratum::Complier
    } else {
        Stratum::NeverTaker
    }
}

/// `n` draws of `(X, Z, D, Y)` from `rng`.
pub fn sample(rng: &mut Rng, n: usize, p: usize, scenario: Scenario) -> Result<(Dataset, Vec<Stratum>)> {
    if p < MIN_P {
        return Err(Error::arg(format!("p = {p} but the design needs p >= {MIN_P}")));
    }
    let x = gen_covariates(n, p, rng);
    let (mut y, mut d, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut strata = Vec::with_capacity(n);
    for row in x.rows() {
        let xi = row.as_slice().expect("standard layout");
        let zi = (rng.random::<f64>() < g0_true(xi)) as u8 as f64;
        let s = draw_stratum(rng);
        let eps: f64 = StandardNormal.sample(rng);
        let (di, mean) = match s {
            Stratum::AlwaysTaker => (1.0, always_taker_mean(xi, 1.0)),
            Stratum::Complier => (zi, mu_true(xi, zi, scenario)),
            Stratum::NeverTaker => (0.0, never_taker_mean(xi, 0.0)),
        };
        z.push(zi);
        d.push(di);
        y.push(mean + eps);
        strata.push(s);
    }
    Ok((Dataset::new(x, y, d, Some(z))?, strata))
}

pub fn gen_dataset(config: &DgpConfig) -> Result<(Dataset, Truth)> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let (data, strata) = sample(&mut rng, config.n, config.p, config.scenario)?;
    Ok((data, Truth { beta0: BETA0, strata }))
}

/// Aggregate metrics of one method over the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// `|mean(beta_hat - beta0)|`.
    pub bias: f64,
    /// `sqrt(n) / r * sum (beta_hat - beta0)^2`.
    pub smse: f64,
    /// Share of successful replicates whose interval contains `beta0`.
    pub coverage: f64,
    pub mean_beta: f64,
    pub mean_std_err: f64,
    /// Successful replicates.
    pub reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub methods: Vec<MethodSummary>,
}

impl SimulationReport {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == label)
    }
}

/// Outcome of one method on one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub index: usize,
    pub result: std::result::Result<EstimationResult, Error>,
}

/// Summary over replicate outcomes, reduced in replicate-index order.
pub fn summarize(method: &str, outcomes: &[ReplicateResult], n: usize, beta0: f64) -> MethodSummary {
    let mut sorted: Vec<&ReplicateResult> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.index);
    let ok: Vec<&EstimationResult> = sorted.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let r = ok.len() as f64;
    let failures = outcomes.len() - ok.len();
    let sum_err: f64 = ok.iter().map(|e| e.beta_hat - beta0).sum();
    let sum_sq: f64 = ok.iter().map(|e| (e.beta_hat - beta0).powi(2)).sum();
    let covered = ok.iter().filter(|e| e.covers(beta0)).count() as f64;
    MethodSummary {
        method: method.to_string(),
        bias: (sum_err / r).abs(),
        smse: (n as f64).sqrt() / r * sum_sq,
        coverage: covered / r,
        mean_beta: ok.iter().map(|e| e.beta_hat).sum::<f64>() / r,
        mean_std_err: ok.iter().map(|e| e.std_err).sum::<f64>() / r,
        reps: ok.len(),
        failures,
    }
}

/// Seed of replicate `index`: the dataset draws from it directly and the
/// estimators from `derive_seed(seed, 1)`.
pub fn replicate_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, index as u64)
}

/// Run `reps` replicates of every method. `dgp.seed` is ignored; replicate
/// `j` uses [`replicate_seed`]`(master_seed, j)`. Each method's config is
/// used as a template whose seed is replaced per replicate.
pub fn run_replications(
    dgp: &DgpConfig,
    methods: &[LateConfig],
    reps: usize,
    master_seed: u64,
) -> Result<SimulationReport> {
    run_replications_with(dgp, methods, reps, master_seed, |_| {})
}

/// As [`run_replications`], calling `on_done(index)` after each replicate.
pub fn run_replications_with<P>(
    dgp: &DgpConfig,
    methods: &[LateConfig],
    reps: usize,
    master_seed: u64,
    on_done: P,
) -> Result<SimulationReport>
where
    P: Fn(usize) + Sync,
{
    dgp.validate()?;
    if reps == 0 {
        return Err(Error::arg("reps must be at least 1"));
    }
    if methods.is_empty() {
        return Err(Error::arg("no methods requested"));
    }
    for m in methods {
        m.validate()?;
    }
    let per_rep: Vec<Vec<ReplicateResult>> = (0..reps)
        .into_par_iter()
        .map(|j| {
            let seed = replicate_seed(master_seed, j);
            let cfg = DgpConfig { seed, ..*dgp };
            let out = match gen_dataset(&cfg) {
                Ok((data, _)) => methods
                    .iter()
                    .map(|m| {
                        let m = LateConfig { seed: derive_seed(seed, 1), ..m.clone() };
                        ReplicateResult { index: j, result: late_crossfit(&data, &m) }
                    })
                    .collect(),
                Err(e) => methods
                    .iter()
                    .map(|_| ReplicateResult { index: j, result: Err(e.clone()) })
                    .collect(),
            };
            on_done(j);
            out
        })
        .collect();

    let summaries = methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let outcomes: Vec<ReplicateResult> = per_rep.iter().map(|r| r[k].clone()).collect();
            summarize(m.method.label(), &outcomes, dgp.n, BETA0)
        })
        .collect();
    Ok(SimulationReport {
        scenario: dgp.scenario,
        n: dgp.n,
        p: dgp.p,
        reps,
        master_seed,
        methods: summaries,
    })
}
