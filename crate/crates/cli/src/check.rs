//! Finite-difference orthogonality suite at the synthetic truth of each
//! estimator.

use std::fmt;

use orthoscore::data::shared;
use orthoscore::folds::derive_seed;
use orthoscore::late::{MomentScore, RobustScore, DEFAULT_CLIP};
use orthoscore::ortho::{check_orthogonality, OrthoCheck};
use orthoscore::plr::{PlrDesign, PlrNaiveScore, PlrScore};
use orthoscore::qte::{clipped_propensity, IpwScore, QteDesign, QteScore};
use orthoscore::sim::{self, Scenario, BETA0};
use orthoscore::{Error, Result, SharedFn};
use serde::Serialize;

/// Orthogonal cases pass when `|derivative| <= ORTHO_BOUND * se`.
pub const ORTHO_BOUND: f64 = 3.0;
/// Control cases pass when `|derivative| > CONTROL_BOUND * se`.
pub const CONTROL_BOUND: f64 = 5.0;
/// Quantile level used by the quantile target.
pub const CHECK_TAU: f64 = 0.25;
pub const CHECK_P: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Late,
    Plr,
    Qte,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Late => "late",
            Target::Plr => "plr",
            Target::Qte => "qte",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckCase {
    pub score: &'static str,
    pub nuisance: &'static str,
    pub direction: &'static str,
    /// Deliberately non-orthogonal score expected to fail.
    pub control: bool,
    pub derivative: f64,
    pub std_err: f64,
}

impl CheckCase {
    fn new(score: &'static str, nuisance: &'static str, direction: &'static str, control: bool, r: OrthoCheck) -> Self {
        Self {
            score,
            nuisance,
            direction,
            control,
            derivative: r.derivative,
            std_err: r.mc_std_err,
        }
    }

    pub fn z_ratio(&self) -> f64 {
        if self.derivative == 0.0 {
            0.0
        } else {
            self.derivative.abs() / self.std_err
        }
    }

    pub fn passed(&self) -> bool {
        if self.control {
            self.derivative.abs() > CONTROL_BOUND * self.std_err
        } else {
            self.derivative.abs() <= ORTHO_BOUND * self.std_err
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub target: Target,
    pub n_mc: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub cases: Vec<CheckCase>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CheckCase::passed)
    }
}

type Direction = (&'static str, SharedFn);

fn directions() -> Vec<Direction> {
    vec![
        ("1", shared(|_| 1.0)),
        ("x1", shared(|x| x[0])),
        ("x2^2-x1x2", shared(|x| x[1] * x[1] - x[0] * x[1])),
    ]
}

fn control_direction() -> Direction {
    ("x1", shared(|x| x[0]))
}

struct Runner {
    n_mc: usize,
    seed: u64,
    epsilon: f64,
    cases: Vec<CheckCase>,
}

impl Runner {
    #[allow(clippy::too_many_arguments)]
    fn case<B, S, G>(
        &mut self,
        score: &'static str,
        nuisance: &'static str,
        control: bool,
        build: B,
        sample: &G,
        beta0: f64,
        truth: &SharedFn,
        dir: &Direction,
    ) -> Result<()>
    where
        B: Fn(SharedFn) -> S + Sync,
        S: orthoscore::ScoreFamily,
        G: Fn(&mut orthoscore::folds::Rng, usize) -> Result<orthoscore::Dataset> + Sync,
    {
        let seed = derive_seed(self.seed, self.cases.len() as u64);
        let r = check_orthogonality(build, sample, beta0, truth, &dir.1, self.epsilon, self.n_mc, seed)?;
        self.cases.push(CheckCase::new(score, nuisance, dir.0, control, r));
        Ok(())
    }
}

fn run_late(r: &mut Runner) -> Result<()> {
    let sample = |rng: &mut orthoscore::folds::Rng, n| sim::sample(rng, n, CHECK_P, Scenario::S1).map(|s| s.0);
    let f0 = shared(sim::f0_true);
    let h0 = shared(|x| sim::h0_true(x, Scenario::S1));
    for dir in &directions() {
        let h = h0.clone();
        r.case("robust", "f", false, move |f| RobustScore { f, h: h.clone(), clip_epsilon: DEFAULT_CLIP }, &sample, BETA0, &f0, dir)?;
    }
    for dir in &directions() {
        let f = f0.clone();
        r.case("robust", "h", false, move |h| RobustScore { f: f.clone(), h, clip_epsilon: DEFAULT_CLIP }, &sample, BETA0, &h0, dir)?;
    }
    r.case("moment", "f", true, |f| MomentScore { f, clip_epsilon: DEFAULT_CLIP }, &sample, BETA0, &f0, &control_direction())
}

fn run_plr(r: &mut Runner) -> Result<()> {
    let design = PlrDesign::default();
    let sample = move |rng: &mut orthoscore::folds::Rng, n| design.sample(rng, n);
    let m0 = shared(PlrDesign::m0);
    let l0 = shared(move |x| design.l0(x));
    for dir in &directions() {
        let l = l0.clone();
        r.case("partialling-out", "m", false, move |m| PlrScore { m, l: l.clone() }, &sample, design.beta0, &m0, dir)?;
    }
    for dir in &directions() {
        let m = m0.clone();
        r.case("partialling-out", "l", false, move |l| PlrScore { m: m.clone(), l }, &sample, design.beta0, &l0, dir)?;
    }
    let f0 = shared(PlrDesign::f0);
    r.case("naive", "f", true, |f| PlrNaiveScore { f }, &sample, design.beta0, &f0, &control_direction())
}

fn run_qte(r: &mut Runner) -> Result<()> {
    let design = QteDesign { tau: CHECK_TAU };
    let beta0 = design.beta0();
    let sample = move |rng: &mut orthoscore::folds::Rng, n| design.sample(rng, n);
    let f0 = shared(QteDesign::f0);
    let h0 = shared(move |x| design.h0(x, beta0));
    for dir in &directions() {
        let h = h0.clone();
        r.case(
            "robust-ipw",
            "f",
            false,
            move |f| QteScore::from_log_odds(f, h.clone(), CHECK_TAU, DEFAULT_CLIP),
            &sample,
            beta0,
            &f0,
            dir,
        )?;
    }
    for dir in &directions() {
        let f = f0.clone();
        r.case(
            "robust-ipw",
            "h",
            false,
            move |h| QteScore::from_log_odds(f.clone(), h, CHECK_TAU, DEFAULT_CLIP),
            &sample,
            beta0,
            &h0,
            dir,
        )?;
    }
    r.case(
        "ipw",
        "f",
        true,
        |f| IpwScore { g: clipped_propensity(f, DEFAULT_CLIP), tau: CHECK_TAU },
        &sample,
        beta0,
        &f0,
        &control_direction(),
    )
}

/// Every nuisance of `target` along three directions plus one control case.
pub fn run_check(target: Target, n_mc: usize, seed: u64, epsilon: f64) -> Result<CheckReport> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be positive".into()));
    }
    let mut r = Runner { n_mc, seed, epsilon, cases: Vec::new() };
    match target {
        Target::Late => run_late(&mut r)?,
        Target::Plr => run_plr(&mut r)?,
        Target::Qte => run_qte(&mut r)?,
    }
    Ok(CheckReport {
        target,
        n_mc,
        seed,
        epsilon,
        cases: r.cases,
    })
}
