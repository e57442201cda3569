use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use orthoscore::ortho::DEFAULT_FD_STEP;
use orthoscore::sim::Scenario;
use orthoscore_cli::analyze::{self, AnalyzeMethod, AnalyzeRequest, RowFilter};
use orthoscore_cli::check::{run_check, Target, CONTROL_BOUND, ORTHO_BOUND};
use orthoscore_cli::simulate::{self, SimulateRequest};
use orthoscore_cli::{sig6, usage, write_text, CliError, DEFAULT_SEED, SEED_ENV};

#[derive(Parser)]
#[command(name = "orthoscore", version, about = "Cross-fitted estimation with Neyman-orthogonal scores")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replication study on the synthetic instrument design.
    Simulate {
        #[arg(long, default_value = "s1", value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        p: usize,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Comma-separated: r-np, r-lr, m, reg-np, reg-lr.
        #[arg(long, default_value = "r-lr,m,reg-lr")]
        methods: String,
        #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON mirror of the report.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Estimate on a CSV file.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        outcome: String,
        #[arg(long)]
        treatment: String,
        #[arg(long)]
        instrument: Option<String>,
        /// Comma-separated covariate columns.
        #[arg(long, value_delimiter = ',', required = true)]
        covariates: Vec<String>,
        /// r-np, r-lr, m, reg-np, reg-lr, plr or qte.
        #[arg(long, default_value = "r-lr")]
        method: String,
        /// Quantile level for qte.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Subgroup, e.g. `age>=50`.
        #[arg(long)]
        filter: Option<RowFilter>,
        #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Finite-difference orthogonality checks at a synthetic truth.
    Check {
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long, default_value_t = 1_000_000)]
        n_mc: usize,
        #[arg(long, env = SEED_ENV, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_FD_STEP)]
        epsilon: f64,
        /// JSON report.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: orthoscore::Error| e.to_string())
}

fn simulate(req: SimulateRequest) -> Result<(), CliError> {
    let report = simulate::run(&req)?;
    print!("{}", simulate::render_table(&report));
    simulate::write_outputs(&req, &report)?;
    simulate::check_failures(&report)
}

fn analyze(req: AnalyzeRequest, out: Option<PathBuf>, format: Format) -> Result<(), CliError> {
    let result = analyze::run(&req)?;
    let body = match format {
        Format::Json => result.to_json(),
        Format::Csv => result.to_csv(),
    };
    match out {
        Some(path) => {
            write_text(&path, &body)?;
            println!(
                "{}  n {}  beta {}  se {}  95% CI [{}, {}]",
                result.method,
                result.n,
                sig6(result.beta_hat),
                sig6(result.std_err),
                sig6(result.ci_low),
                sig6(result.ci_high)
            );
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn check(target: Target, n_mc: usize, seed: u64, epsilon: f64, json: Option<PathBuf>) -> Result<(), CliError> {
    let report = run_check(target, n_mc, seed, epsilon).map_err(|e| usage(e.to_string()))?;
    println!("target {target}  n_mc {n_mc}  seed {seed}  step {epsilon}");
    for c in &report.cases {
        println!(
            "{:<16}{:<3}{:<11}{:>14} ± {:<12} z {:>9}  {}{}",
            c.score,
            c.nuisance,
            c.direction,
            sig6(c.derivative),
            sig6(c.std_err),
            sig6(c.z_ratio()),
            if c.passed() { "pass" } else { "FAIL" },
            if c.control { " (control)" } else { "" }
        );
    }
    if let Some(path) = json {
        let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
        body.push('\n');
        write_text(&path, &body)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Quality(format!(
            "orthogonal cases need |derivative| <= {ORTHO_BOUND} se and controls > {CONTROL_BOUND} se"
        )))
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { scenario, n, p, reps, methods, seed, out, json } => simulate(SimulateRequest {
            scenario,
            n,
            p,
            reps,
            methods: simulate::parse_methods(&methods)?,
            seed,
            out,
            json,
        }),
        Command::Analyze {
            input,
            outcome,
            treatment,
            instrument,
            covariates,
            method,
            tau,
            filter,
            seed,
            out,
            format,
        } => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(usage(format!("tau = {tau} outside (0, 1)")));
            }
            let req = AnalyzeRequest {
                input,
                outcome,
                treatment,
                instrument,
                covariates,
                method: AnalyzeMethod::parse(&method, tau)?,
                filter,
                seed,
            };
            analyze(req, out, format)
        }
        Command::Check { target, n_mc, seed, epsilon, json } => {
            if n_mc == 0 {
                return Err(usage("--n-mc must be positive"));
            }
            check(target, n_mc, seed, epsilon, json)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
