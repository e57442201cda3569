//! Replication study over the synthetic instrument design.

use std::path::PathBuf;

use orthoscore::late::{LateConfig, LateMethod};
use orthoscore::sim::{run_replications, DgpConfig, Scenario, SimulationReport};

use crate::{sig6, usage, write_text, CliError};

/// Replicate failure share above which the run exits with status 1.
pub const MAX_FAILURE_RATE: f64 = 0.2;

pub const CSV_HEADER: &str = "method,scenario,n,p,reps,bias,smse,coverage,failures";

#[derive(Debug, Clone)]
pub struct SimulateRequest {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub methods: Vec<LateMethod>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

pub fn parse_methods(list: &str) -> Result<Vec<LateMethod>, CliError> {
    let mut out = Vec::new();
    for item in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m: LateMethod = item.parse().map_err(|e: orthoscore::Error| usage(e.to_string()))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(usage("no methods given"));
    }
    Ok(out)
}

pub fn run(req: &SimulateRequest) -> Result<SimulationReport, CliError> {
    let dgp = DgpConfig {
        scenario: req.scenario,
        n: req.n,
        p: req.p,
        seed: req.seed,
    };
    let configs: Vec<LateConfig> = req.methods.iter().map(|&m| LateConfig::new(m, req.seed)).collect();
    run_replications(&dgp, &configs, req.reps, req.seed).map_err(|e| usage(e.to_string()))
}

/// One row per method; floats at full round-trip precision.
pub fn to_csv(report: &SimulationReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for m in &report.methods {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.method, report.scenario, report.n, report.p, report.reps, m.bias, m.smse, m.coverage, m.failures
        ));
    }
    s
}

pub fn to_json(report: &SimulationReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn render_table(report: &SimulationReport) -> String {
    let mut s = format!(
        "scenario {}  n {}  p {}  reps {}  seed {}\n{:<8}{:>12}{:>12}{:>12}{:>12}{:>10}\n",
        report.scenario, report.n, report.p, report.reps, report.master_seed, "method", "bias", "smse", "coverage", "mean_se", "failures"
    );
    for m in &report.methods {
        s.push_str(&format!(
            "{:<8}{:>12}{:>12}{:>12}{:>12}{:>10}\n",
            m.method,
            sig6(m.bias),
            sig6(m.smse),
            sig6(m.coverage),
            sig6(m.mean_std_err),
            m.failures
        ));
    }
    s
}

/// Methods whose failed replicates exceed [`MAX_FAILURE_RATE`].
pub fn failing_methods(report: &SimulationReport) -> Vec<&str> {
    report
        .methods
        .iter()
        .filter(|m| m.failures as f64 > MAX_FAILURE_RATE * report.reps as f64)
        .map(|m| m.method.as_str())
        .collect()
}

pub fn write_outputs(req: &SimulateRequest, report: &SimulationReport) -> Result<(), CliError> {
    if let Some(path) = &req.out {
        write_text(path, &to_csv(report))?;
    }
    if let Some(path) = &req.json {
        write_text(path, &to_json(report))?;
    }
    Ok(())
}

/// Quality error when any method fails on too many replicates.
pub fn check_failures(report: &SimulationReport) -> Result<(), CliError> {
    let bad = failing_methods(report);
    if bad.is_empty() {
        return Ok(());
    }
    Err(CliError::Quality(format!(
        "more than {}% of replicates failed for {}",
        MAX_FAILURE_RATE * 100.0,
        bad.join(", ")
    )))
}
