//! `homp` — command line front end for greedy rank-one tensor learning.
//!
//! Subcommands cover the full loop: generate synthetic instances
//! (`gen-completion`, `gen-mlmtl`), fit models (`complete`, `mlmtl`), compute
//! best rank-one approximations (`rank1`) and brute-force reference values
//! (`oracle`), and run missing-ratio grids (`sweep`).
//!
//! Exit status: 0 on success, 1 on usage errors (bad flags, unreadable or
//! malformed files), 2 on degenerate input (zero tensors, empty observation
//! sets).

mod config;
mod sweep;

use clap::{Args, Parser, Subcommand};
use homp::io;
use homp::oracle::spectral_norm_bruteforce;
use homp::solver::{fit, FitResult};
use homp::spectral::{select_atom, PowerIterConfig};
use homp::tensor::KruskalModel;
use homp::{
    completion::{gen_completion, CompletionGenSpec, CompletionObjective},
    mlmtl::{build_ridge_reformulation, gen_mlmtl, MlmtlGenSpec, MlmtlObjective},
};
use std::fmt;
use std::path::PathBuf;

use config::SolverFlags;

#[derive(Parser)]
#[command(
    name = "homp",
    version,
    about = "Greedy rank-one pursuit for low-rank tensor learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tensor-completion instance
    GenCompletion(GenCompletionArgs),
    /// Generate a synthetic multitask regression dataset
    GenMlmtl(GenMlmtlArgs),
    /// Fit a low-rank model to sparse tensor observations
    Complete(CompleteArgs),
    /// Fit a low-rank weight tensor to a multitask dataset
    Mlmtl(MlmtlArgs),
    /// Best rank-one approximation of a dense tensor with a certified bound
    Rank1(Rank1Args),
    /// Multi-start brute-force spectral norm (reference values, small tensors)
    Oracle(OracleArgs),
    /// Missing-ratio x strategy x seed grid, summarized to CSV
    Sweep(sweep::SweepArgs),
}

#[derive(Args)]
struct GenCompletionArgs {
    /// Tensor dimensions, e.g. 30,30,30
    #[arg(long, default_value = "30,30,30")]
    dims: String,
    /// CP-rank of the planted ground truth
    #[arg(long, default_value_t = 5)]
    rank: usize,
    /// Missing ratio in [0, 1): fraction of entries hidden
    #[arg(long, default_value_t = 0.5)]
    mr: f64,
    /// Standard deviation of additive Gaussian noise on observed entries
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Fraction of observed entries replaced by uniform outliers
    #[arg(long, default_value_t = 0.0)]
    outlier_frac: f64,
    /// Outlier range as lo,hi
    #[arg(long, default_value = "-1,1")]
    outlier_range: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Observation file to write
    #[arg(long)]
    out: PathBuf,
    /// Also write the planted ground-truth model here
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenMlmtlArgs {
    /// Feature dimension (bias included as a feature)
    #[arg(long, default_value_t = 10)]
    input_dim: usize,
    /// Task grid dimensions, e.g. 3,5
    #[arg(long, default_value = "3,5")]
    task_dims: String,
    /// CP-rank of the planted weight tensor
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 40)]
    samples_per_task: usize,
    /// Standard deviation of additive Gaussian noise on targets
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset file to write
    #[arg(long)]
    out: PathBuf,
    /// Also write the planted ground-truth model here
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompleteArgs {
    /// Observation file produced by gen-completion (or hand-written)
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the fitted model here
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Write the iteration trace CSV here
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Ground-truth model file; enables the full-tensor relative error report
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct MlmtlArgs {
    /// Dataset file produced by gen-mlmtl (or hand-written)
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// Ridge parameter; folds the penalty into transformed per-task data
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Ground-truth model file; enables the relative error report
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct Rank1Args {
    /// Dense tensor file
    #[arg(long)]
    input: PathBuf,
    /// Block-coordinate refinement sweeps after the spectral recursion
    #[arg(long, default_value_t = 1)]
    bcu_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OracleArgs {
    /// Dense tensor file
    #[arg(long)]
    input: PathBuf,
    /// Number of random restarts for the alternating maximization
    #[arg(long, default_value_t = 50)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Errors surfaced to the user, partitioned by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable paths, malformed files: exit 1.
    Usage(String),
    /// Structurally valid but degenerate input (zero tensor, no data): exit 2.
    Degenerate(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Degenerate(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Degenerate(_) => 2,
        }
    }
}

impl From<io::FormatError> for CliError {
    fn from(e: io::FormatError) -> Self {
        match e {
            io::FormatError::Degenerate(_) => CliError::Degenerate(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<homp::spectral::SpectralError> for CliError {
    fn from(e: homp::spectral::SpectralError) -> Self {
        match e {
            homp::spectral::SpectralError::DegenerateInput => {
                CliError::Degenerate(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<homp::solver::SolveError> for CliError {
    fn from(e: homp::solver::SolveError) -> Self {
        match e {
            homp::solver::SolveError::Spectral(
                homp::spectral::SpectralError::DegenerateInput,
            ) => CliError::Degenerate(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<homp::completion::CompletionError> for CliError {
    fn from(e: homp::completion::CompletionError) -> Self {
        match e {
            homp::completion::CompletionError::NoObservations => {
                CliError::Degenerate(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<homp::mlmtl::MlmtlError> for CliError {
    fn from(e: homp::mlmtl::MlmtlError) -> Self {
        match e {
            homp::mlmtl::MlmtlError::NoSamples
            | homp::mlmtl::MlmtlError::SingularTaskGram { .. } => {
                CliError::Degenerate(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<homp::oracle::OracleError> for CliError {
    fn from(e: homp::oracle::OracleError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<homp::tensor::TensorError> for CliError {
    fn from(e: homp::tensor::TensorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{what}: `{t}` is not a positive integer")))
        })
        .collect()
}

pub fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{what}: `{t}` is not a number")))
        })
        .collect()
}

fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let v = parse_f64_list(s, "outlier range")?;
    if v.len() != 2 {
        return Err(CliError::Usage(format!(
            "outlier range wants exactly lo,hi — got {} value(s)",
            v.len()
        )));
    }
    Ok((v[0], v[1]))
}

fn main() {
    // Piping into `head` closes our stdout early; die quietly like any unix
    // tool instead of panicking mid-`println!`.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenCompletion(a) => run_gen_completion(a),
        Command::GenMlmtl(a) => run_gen_mlmtl(a),
        Command::Complete(a) => run_complete(a),
        Command::Mlmtl(a) => run_mlmtl(a),
        Command::Rank1(a) => run_rank1(a),
        Command::Oracle(a) => run_oracle(a),
        Command::Sweep(a) => sweep::run(a),
    }
}

fn run_gen_completion(a: GenCompletionArgs) -> Result<(), CliError> {
    let spec = CompletionGenSpec {
        dims: parse_usize_list(&a.dims, "dims")?,
        cp_rank: a.rank,
        missing_ratio: a.mr,
        noise_sigma: a.noise,
        outlier_fraction: a.outlier_frac,
        outlier_range: parse_range(&a.outlier_range)?,
        seed: a.seed,
    };
    let inst = gen_completion(&spec)?;
    io::save_observations(&a.out, &inst.observations)?;
    if let Some(p) = &a.truth_out {
        io::save_kruskal(p, &inst.truth)?;
    }
    let outliers = inst.outlier_mask.iter().filter(|&&b| b).count();
    println!(
        "wrote {} observations over dims {:?} (rank {}, mr {}, {} outliers) to {}",
        inst.observations.len(),
        spec.dims,
        spec.cp_rank,
        spec.missing_ratio,
        outliers,
        a.out.display()
    );
    Ok(())
}

fn run_gen_mlmtl(a: GenMlmtlArgs) -> Result<(), CliError> {
    let spec = MlmtlGenSpec {
        input_dim: a.input_dim,
        task_dims: parse_usize_list(&a.task_dims, "task dims")?,
        cp_rank: a.rank,
        samples_per_task: a.samples_per_task,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    let (tasks, truth) = gen_mlmtl(&spec)?;
    io::save_taskset(&a.out, &tasks)?;
    if let Some(p) = &a.truth_out {
        io::save_kruskal(p, &truth)?;
    }
    println!(
        "wrote {} tasks x {} samples (feature dim {}, rank {}) to {}",
        tasks.num_tasks(),
        spec.samples_per_task,
        spec.input_dim,
        spec.cp_rank,
        a.out.display()
    );
    Ok(())
}

/// Shared post-fit reporting: prints the trace tail, writes artifacts.
fn report_fit(
    result: &FitResult,
    resolved: &config::Resolved,
    model_out: Option<&PathBuf>,
    trace_out: Option<&PathBuf>,
    truth: Option<&KruskalModel>,
) -> Result<(), CliError> {
    let trace = &result.trace;
    let final_rec = trace.records.last().expect("trace always has a baseline row");
    println!("strategy          = {}", resolved.config.strategy);
    println!("terms             = {}", result.model.num_terms());
    println!("final objective   = {}", final_rec.objective);
    println!("stop              = {:?}", trace.stop);
    println!("elapsed           = {:.1} ms", final_rec.elapsed_ms);
    if let Some(truth) = truth {
        let rel = result.model.relative_error_to(truth)?;
        println!("relative error vs truth = {rel}");
    }
    if let Some(p) = model_out {
        io::save_kruskal(p, &result.model)?;
    }
    if let Some(p) = trace_out {
        io::save_trace(p, trace, &resolved.comments())?;
    }
    Ok(())
}

fn run_complete(a: CompleteArgs) -> Result<(), CliError> {
    let resolved = a.solver.resolve()?;
    let obs = io::load_observations(&a.input)?;
    let norm_sq: f64 = obs.values().iter().map(|v| v * v).sum();
    let obj = CompletionObjective::new(obs, resolved.loss.clone());
    let result = fit(&obj, &resolved.config)?;
    let truth = a.truth.as_ref().map(io::load_kruskal).transpose()?;
    report_fit(&result, &resolved, a.model_out.as_ref(), a.trace_out.as_ref(), truth.as_ref())?;
    if norm_sq > 0.0 {
        let r = homp::solver::Objective::residual(&obj, &result.model);
        let r_sq: f64 = r.iter().map(|v| v * v).sum();
        println!("relative error on observed entries = {}", (r_sq / norm_sq).sqrt());
    }
    Ok(())
}

fn run_mlmtl(a: MlmtlArgs) -> Result<(), CliError> {
    let resolved = a.solver.resolve()?;
    let tasks = io::load_taskset(&a.input)?;
    let truth = a.truth.as_ref().map(io::load_kruskal).transpose()?;
    match a.ridge {
        Some(lambda) => {
            let reform = build_ridge_reformulation(&tasks, lambda, resolved.loss.clone())?;
            let result = fit(&reform.objective, &resolved.config)?;
            report_fit(&result, &resolved, a.model_out.as_ref(), a.trace_out.as_ref(), truth.as_ref())?;
            let g = result.trace.records.last().expect("baseline row").objective;
            println!("ridge constant    = {}", reform.constant);
            println!("objective + const = {}", g + reform.constant);
        }
        None => {
            let obj = MlmtlObjective::new(tasks, resolved.loss.clone())?;
            let result = fit(&obj, &resolved.config)?;
            report_fit(&result, &resolved, a.model_out.as_ref(), a.trace_out.as_ref(), truth.as_ref())?;
        }
    }
    Ok(())
}

fn print_factors(factors: &[Vec<f64>]) {
    for (m, f) in factors.iter().enumerate() {
        let joined: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        println!("factor {} = {}", m + 1, joined.join(" "));
    }
}

fn run_rank1(a: Rank1Args) -> Result<(), CliError> {
    let t = io::load_dense_tensor(&a.input)?;
    let cfg = PowerIterConfig {
        seed: a.seed,
        ..PowerIterConfig::default()
    };
    let res = select_atom(&t, &cfg, a.bcu_sweeps)?;
    println!("value = {}", res.value);
    println!("certified_lower_bound = {}", res.certified_lower_bound);
    let alphas: Vec<String> = res.alphas.iter().map(|v| v.to_string()).collect();
    println!("alphas = {}", alphas.join(" "));
    print_factors(res.atom.factors());
    Ok(())
}

fn run_oracle(a: OracleArgs) -> Result<(), CliError> {
    let t = io::load_dense_tensor(&a.input)?;
    let best = spectral_norm_bruteforce(&t, a.starts, a.seed)?;
    println!("value = {}", best.value);
    print_factors(&best.factors);
    Ok(())
}
