use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use rearrange_core::confinement::{confine_with_anchor, confine_zero_sum, ConfineError, ConstantSchedule};
use rearrange_core::forcing::{self, format_rational, ForcingConfig, ForcingError};
use rearrange_core::io::{self as formats, Certificate};
use rearrange_core::rearranger::{
    chase_target, riemann_rearrange, verify_prefix, ChaseConfig, PrefixPlan, RearrangeError, TargetVector,
};
use rearrange_core::series::SeriesError;
use rearrange_core::subspace::{self, GrowthConfig, SubspaceError};
use rearrange_core::verify::{verify_certificate, DEFAULT_SLACK};

const VERIFY_FAILED: u8 = 1;
const INPUT_ERROR: u8 = 2;
const BUDGET_EXHAUSTED: u8 = 3;

#[derive(Parser)]
#[command(name = "rearrange", version, about = "Rearrangements of conditionally convergent series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Order a list of vectors so every prefix sum stays small.
    Confine {
        /// One comma-separated vector per line.
        vectors: PathBuf,
        /// Anchor b; the vectors must then sum to b.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        anchor: Option<Vec<f64>>,
        /// Norm bound on the vectors (anchored mode); defaults to the largest norm.
        #[arg(long)]
        rho: Option<f64>,
        /// Slack on the zero-sum check and the bound.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find a finite injection whose partial sums approach the targets.
    Rearrange {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        targets: Vec<f64>,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Build a descending chain of conditions and write its certificate.
    ExtendRun {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        targets: Vec<f64>,
        #[arg(long)]
        rounds: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000_000)]
        budget: usize,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Report the absolutely convergent combinations of a family and its sum range.
    Analyze {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        truncation: usize,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// JSON output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recheck a certificate against the series and targets.
    Verify {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        targets: Vec<f64>,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }
}

impl From<formats::InputError> for Failure {
    fn from(e: formats::InputError) -> Self {
        Failure::new(INPUT_ERROR, e)
    }
}

impl From<ConfineError> for Failure {
    fn from(e: ConfineError) -> Self {
        let code = match e {
            ConfineError::SearchLimit { .. } | ConfineError::BoundUnattainable { .. } => BUDGET_EXHAUSTED,
            _ => INPUT_ERROR,
        };
        Failure::new(code, e)
    }
}

impl From<SeriesError> for Failure {
    fn from(e: SeriesError) -> Self {
        let code = match e {
            SeriesError::BudgetExhausted { .. } => BUDGET_EXHAUSTED,
            _ => INPUT_ERROR,
        };
        Failure::new(code, e)
    }
}

impl From<RearrangeError> for Failure {
    fn from(e: RearrangeError) -> Self {
        match e {
            RearrangeError::BudgetExhausted { .. } => Failure::new(BUDGET_EXHAUSTED, e),
            RearrangeError::Series(s) => s.into(),
            RearrangeError::Confine(c) => c.into(),
            _ => Failure::new(INPUT_ERROR, e),
        }
    }
}

impl From<ForcingError> for Failure {
    fn from(e: ForcingError) -> Self {
        match e {
            ForcingError::BudgetExhausted { .. } | ForcingError::InfeasibleEta { .. } => {
                Failure::new(BUDGET_EXHAUSTED, e)
            }
            ForcingError::ExtensionRejected(_) => Failure::new(VERIFY_FAILED, e),
            ForcingError::Series(s) => s.into(),
            ForcingError::Confine(c) => c.into(),
            ForcingError::Rearrange(r) => r.into(),
            _ => Failure::new(INPUT_ERROR, e),
        }
    }
}

impl From<SubspaceError> for Failure {
    fn from(e: SubspaceError) -> Self {
        match e {
            SubspaceError::Disagreement { .. } => Failure::new(VERIFY_FAILED, e),
            SubspaceError::Series(s) => s.into(),
            _ => Failure::new(INPUT_ERROR, e),
        }
    }
}

fn output_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure::new(INPUT_ERROR, e)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(output_failure)
}

fn schedule() -> Result<ConstantSchedule, Failure> {
    ConstantSchedule::from_env().map_err(|e| Failure::new(INPUT_ERROR, e))
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(output_failure)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(output_failure),
        None => io::stdout().write_all(text.as_bytes()).map_err(output_failure),
    }
}

fn write_trace(path: &Path, rows: &[formats::TraceRow], d: usize) -> Result<(), Failure> {
    formats::write_trace(create(path)?, rows, d)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(output_failure)
}

fn confine(
    vectors: &Path,
    anchor: Option<Vec<f64>>,
    rho: Option<f64>,
    tol: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let vectors = formats::parse_vector_file(vectors)?;
    let schedule = schedule()?;
    let result = match anchor {
        Some(b) => {
            let rho = rho.unwrap_or_else(|| {
                vectors
                    .iter()
                    .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            });
            confine_with_anchor(&vectors, &b, rho, &schedule)?
        }
        None => confine_zero_sum(&vectors, tol, &schedule)?,
    };
    let written = match out {
        Some(path) => formats::write_confinement(create(path)?, &result.permutation, &result.prefix_norms),
        None => formats::write_confinement(io::stdout().lock(), &result.permutation, &result.prefix_norms),
    };
    written.map_err(output_failure)?;
    eprintln!(
        "max prefix norm {} (bound {})",
        result.max_prefix_norm, result.bound_used
    );
    Ok(())
}

fn rearrange(
    spec: &Path,
    targets: Vec<f64>,
    eps: f64,
    seed: u64,
    budget: usize,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let fam = formats::parse_spec_file(spec)?;
    let d = fam.len();
    if targets.len() != d {
        return Err(Failure::new(
            INPUT_ERROR,
            anyhow::anyhow!("{} targets for {d} series", targets.len()),
        ));
    }
    let target = TargetVector(targets);
    let plan = if d == 1 {
        riemann_rearrange(&fam.specs[0], target.0[0], eps, budget)?
    } else {
        let mut cfg = ChaseConfig::new(eps, seed, budget);
        cfg.schedule = schedule()?;
        chase_target(&fam, &PrefixPlan::empty(d), &target, &cfg)?
    };
    if let Some(path) = trace {
        write_trace(path, &formats::trace_rows(&fam, &plan.injection, d), d)?;
    }
    let report = verify_prefix(&fam, &plan, &target, d);
    write_json(
        None,
        &json!({
            "terms": plan.len(),
            "deviation": plan.deviation,
            "max_excursion": plan.max_excursion,
            "verified": report.ok,
        }),
    )?;
    if !report.ok || !(plan.deviation < eps) {
        return Err(Failure::new(
            VERIFY_FAILED,
            anyhow::anyhow!("plan failed recomputation: {:?}", report.flags),
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn extend_run(
    spec: &Path,
    targets: Vec<f64>,
    rounds: usize,
    seed: u64,
    budget: usize,
    cert: &Path,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    let fam = formats::parse_spec_file(spec)?;
    let cfg = ForcingConfig {
        schedule: schedule()?,
        ..ForcingConfig::default()
    };
    let output = match forcing::run(&fam, &targets, rounds, seed, budget, &cfg) {
        Ok(output) => output,
        Err(e) => {
            if !e.partial.conditions.is_empty() {
                let partial = Certificate::from_chain(&e.partial, &targets, &cfg);
                formats::write_certificate(cert, &partial).map_err(output_failure)?;
                eprintln!("partial certificate with {} conditions written", partial.conditions.len());
            }
            let round = e.round;
            return Err(Failure::from(e.source).with_context(format!("round {round}")));
        }
    };
    let certificate = Certificate::from_chain(&output.chain, &targets, &cfg);
    formats::write_certificate(cert, &certificate).map_err(output_failure)?;
    if let Some(path) = trace {
        let d = output.chain.conditions.last().map_or(1, |c| c.d);
        write_trace(path, &formats::chain_trace_rows(&fam, &output.chain), d)?;
    }
    let summary: Vec<_> = output
        .chain
        .conditions
        .iter()
        .map(|c| json!({"d": c.d, "eps": format_rational(&c.eps), "length": c.f.len()}))
        .collect();
    write_json(
        None,
        &json!({
            "conditions": summary,
            "final_deviation": output.plan.deviation,
            "final_excursion": output.plan.max_excursion,
        }),
    )
}

fn analyze(spec: &Path, truncation: usize, threshold: f64, out: Option<&Path>) -> Result<(), Failure> {
    let fam = formats::parse_spec_file(spec)?;
    let d = fam.len();
    let k = subspace::k_space_basis(&fam, d, &GrowthConfig { truncation, threshold })?;
    let r = subspace::r_space(&k.basis, d);
    let structure = subspace::dependency_decompose(&fam)?;
    let range = subspace::sum_range(&fam, 1e-8)?;
    let value = json!({
        "dimension": d,
        "k_basis": k.basis,
        "r_basis": r,
        "dependency": structure,
        "sum_offset": range.offset,
        "growth_diagnostics": k.diagnostics,
    });
    write_json(out, &value)
}

fn verify(cert: &Path, spec: &Path, targets: Vec<f64>) -> Result<(), Failure> {
    let fam = formats::parse_spec_file(spec)?;
    let certificate = formats::read_certificate(cert)?;
    let report = verify_certificate(&certificate, &fam, &targets, &schedule()?, DEFAULT_SLACK);
    if let Some(failure) = report.first_failure() {
        return Err(Failure::new(
            VERIFY_FAILED,
            anyhow::anyhow!("{}: {} bullet fails ({})", failure.subject, failure.bullet, failure.detail),
        ));
    }
    println!("certificate verified: {} checks passed", report.checks.len());
    Ok(())
}

impl Failure {
    fn with_context(self, context: String) -> Self {
        Failure {
            code: self.code,
            error: self.error.context(context),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Confine {
            vectors,
            anchor,
            rho,
            tol,
            out,
        } => confine(&vectors, anchor, rho, tol, out.as_deref()),
        Command::Rearrange {
            spec,
            targets,
            eps,
            seed,
            budget,
            trace,
        } => rearrange(&spec, targets, eps, seed, budget, trace.as_deref()),
        Command::ExtendRun {
            spec,
            targets,
            rounds,
            seed,
            budget,
            cert,
            trace,
        } => extend_run(&spec, targets, rounds, seed, budget, &cert, trace.as_deref()),
        Command::Analyze {
            spec,
            truncation,
            threshold,
            out,
        } => analyze(&spec, truncation, threshold, out.as_deref()),
        Command::Verify { cert, spec, targets } => verify(&cert, &spec, targets),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
