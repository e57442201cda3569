//! Cross-fitted estimation on a user CSV, optionally restricted to a
//! subgroup.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use orthoscore::late::{late_crossfit, LateConfig, LateMethod};
use orthoscore::learners::Learner;
use orthoscore::plr::{plr_crossfit, PlrConfig};
use orthoscore::qte::{qte_crossfit, QteConfig};
use orthoscore::{Dataset, Error, EstimationResult};
use serde::Serialize;

use crate::table::Table;
use crate::{usage, CliError};

pub const MIN_ROWS: usize = 20;
/// Offending rows listed in a missing-value error.
pub const MAX_LISTED_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyzeMethod {
    Late(LateMethod),
    Plr,
    Qte { tau: f64 },
}

impl AnalyzeMethod {
    pub fn label(&self) -> String {
        match self {
            AnalyzeMethod::Late(m) => m.label().to_string(),
            AnalyzeMethod::Plr => "plr".into(),
            AnalyzeMethod::Qte { .. } => "qte".into(),
        }
    }

    /// `name` is a LATE method label, `plr` or `qte`; `tau` applies to `qte`.
    pub fn parse(name: &str, tau: f64) -> Result<Self, CliError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "plr" => Ok(AnalyzeMethod::Plr),
            "qte" => Ok(AnalyzeMethod::Qte { tau }),
            other => other
                .parse()
                .map(AnalyzeMethod::Late)
                .map_err(|_| usage(format!("unknown method '{name}' (expected r-np, r-lr, m, reg-np, reg-lr, plr, qte)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Comparator {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Comparator::Lt => a < b,
            Comparator::Le => a <= b,
            Comparator::Gt => a > b,
            Comparator::Ge => a >= b,
            Comparator::Eq => a == b,
            Comparator::Ne => a != b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
        }
    }
}

/// `column OP value`, e.g. `age>=50`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFilter {
    pub column: String,
    pub op: Comparator,
    pub value: f64,
}

impl fmt::Display for RowFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.column, self.op.symbol(), self.value)
    }
}

impl FromStr for RowFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        // two-character operators first so `<=` is not read as `<`
        const OPS: [(&str, Comparator); 7] = [
            ("<=", Comparator::Le),
            (">=", Comparator::Ge),
            ("==", Comparator::Eq),
            ("!=", Comparator::Ne),
            ("<", Comparator::Lt),
            (">", Comparator::Gt),
            ("=", Comparator::Eq),
        ];
        for (sym, op) in OPS {
            if let Some(at) = s.find(sym) {
                let column = s[..at].trim();
                let value = s[at + sym.len()..].trim();
                if column.is_empty() {
                    return Err(format!("filter '{s}' has no column"));
                }
                let value = value
                    .parse::<f64>()
                    .map_err(|_| format!("filter '{s}': '{value}' is not a number"))?;
                return Ok(RowFilter {
                    column: column.to_string(),
                    op,
                    value,
                });
            }
        }
        Err(format!("filter '{s}' has no comparison operator (<, <=, >, >=, ==, !=)"))
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeRequest {
    pub input: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub instrument: Option<String>,
    pub covariates: Vec<String>,
    pub method: AnalyzeMethod,
    pub filter: Option<RowFilter>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeOutput {
    pub method: String,
    pub n: usize,
    pub beta_hat: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

impl AnalyzeOutput {
    fn new(method: String, r: &EstimationResult, seed: u64) -> Self {
        Self {
            method,
            n: r.n,
            beta_hat: r.beta_hat,
            std_err: r.std_err,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("output serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "method,n,beta_hat,std_err,ci_low,ci_high,seed\n{},{},{},{},{},{},{}\n",
            self.method, self.n, self.beta_hat, self.std_err, self.ci_low, self.ci_high, self.seed
        )
    }
}

fn list_rows(rows: &[usize]) -> String {
    let shown: Vec<String> = rows.iter().take(MAX_LISTED_ROWS).map(|r| r.to_string()).collect();
    let more = if rows.len() > MAX_LISTED_ROWS {
        format!(" and {} more", rows.len() - MAX_LISTED_ROWS)
    } else {
        String::new()
    };
    format!("{}{more}", shown.join(", "))
}

fn require_binary(name: &str, v: &[f64]) -> Result<(), CliError> {
    match v.iter().position(|&x| x != 0.0 && x != 1.0) {
        Some(i) => Err(usage(format!("column '{name}' must be 0/1 (found {} in selected row {})", v[i], i + 1))),
        None => Ok(()),
    }
}

/// The used columns after filtering, as a dataset.
pub fn load_dataset(table: &Table, req: &AnalyzeRequest) -> Result<Dataset, CliError> {
    if req.covariates.is_empty() {
        return Err(usage("at least one covariate column is required"));
    }
    let needs_instrument = matches!(req.method, AnalyzeMethod::Late(_));
    let instrument = match (&req.instrument, needs_instrument) {
        (Some(z), _) => Some(z.as_str()),
        (None, true) => return Err(usage("an instrument column is required for this method")),
        (None, false) => None,
    };
    let mut names: Vec<&str> = vec![req.outcome.as_str(), req.treatment.as_str()];
    names.extend(instrument);
    names.extend(req.covariates.iter().map(String::as_str));
    names.extend(req.filter.as_ref().map(|f| f.column.as_str()));
    let mut cols = Vec::with_capacity(names.len());
    for name in &names {
        cols.push(table.numeric(name)?);
    }

    let missing: Vec<usize> = (0..table.rows.len())
        .filter(|&i| cols.iter().any(|c| c[i].is_none()))
        .map(|i| i + 1)
        .collect();
    if !missing.is_empty() {
        return Err(usage(format!(
            "missing values in used columns on {} data row(s): {}",
            missing.len(),
            list_rows(&missing)
        )));
    }
    let value = |c: usize, i: usize| cols[c][i].expect("checked above");

    let keep: Vec<usize> = match &req.filter {
        Some(f) => {
            let c = names.len() - 1;
            (0..table.rows.len()).filter(|&i| f.op.holds(value(c, i), f.value)).collect()
        }
        None => (0..table.rows.len()).collect(),
    };
    if keep.len() < MIN_ROWS {
        return Err(usage(format!("{} rows selected, need at least {MIN_ROWS}", keep.len())));
    }

    let y: Vec<f64> = keep.iter().map(|&i| value(0, i)).collect();
    let d: Vec<f64> = keep.iter().map(|&i| value(1, i)).collect();
    let z: Option<Vec<f64>> = instrument.map(|_| keep.iter().map(|&i| value(2, i)).collect());
    let first_cov = 2 + instrument.is_some() as usize;
    let p = req.covariates.len();
    let x = Array2::from_shape_fn((keep.len(), p), |(r, j)| value(first_cov + j, keep[r]));

    match req.method {
        AnalyzeMethod::Plr => Dataset::with_real_treatment(x, y, d).map_err(|e| usage(e.to_string())),
        _ => {
            require_binary(&req.treatment, &d)?;
            if let (Some(name), Some(z)) = (instrument, &z) {
                require_binary(name, z)?;
            }
            Dataset::new(x, y, d, z).map_err(|e| usage(e.to_string()))
        }
    }
}

fn estimation_error(e: Error) -> CliError {
    match e {
        Error::InvalidArgument(_) | Error::SampleTooSmall(_) | Error::MissingColumn(_) => usage(e.to_string()),
        other => CliError::Quality(other.to_string()),
    }
}

fn degenerate(name: &str, v: &[f64]) -> Result<(), CliError> {
    if v.iter().all(|&x| x == v[0]) {
        return Err(CliError::Quality(format!("column '{name}' is constant in the selected rows")));
    }
    Ok(())
}

pub fn estimate(data: &Dataset, req: &AnalyzeRequest) -> Result<AnalyzeOutput, CliError> {
    let result = match req.method {
        AnalyzeMethod::Late(m) => {
            let z = data.z().expect("instrument loaded");
            degenerate(req.instrument.as_deref().unwrap_or("instrument"), z)?;
            late_crossfit(data, &LateConfig::new(m, req.seed))
        }
        AnalyzeMethod::Plr => plr_crossfit(data, &PlrConfig::new(Learner::Linear, req.seed)),
        AnalyzeMethod::Qte { tau } => {
            degenerate(&req.treatment, data.d())?;
            qte_crossfit(data, &QteConfig::new(tau, req.seed))
        }
    }
    .map_err(estimation_error)?;
    Ok(AnalyzeOutput::new(req.method.label(), &result, req.seed))
}

pub fn run(req: &AnalyzeRequest) -> Result<AnalyzeOutput, CliError> {
    let table = Table::read(&req.input)?;
    let data = load_dataset(&table, req)?;
    estimate(&data, req)
}
