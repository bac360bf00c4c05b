//! Missing-ratio grid runs. Every (mr, strategy, seed) cell generates its own
//! instance, fits it, and reports relative error against the planted truth;
//! cells run on a small worker pool capped by `HOMP_THREADS`, and the summary
//! is aggregated in a fixed order so reruns produce identical CSVs up to the
//! timing column.

use crate::{parse_f64_list, parse_usize_list, CliError};
use clap::Args;
use homp::completion::{gen_completion, CompletionGenSpec, CompletionObjective};
use homp::loss::LossFunction;
use homp::solver::{fit, SolverConfig, Strategy};
use homp::spectral::PowerIterConfig;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

pub const SUMMARY_HEADER: &str = "mr,strategy,mean_rel_error,mean_iters,mean_seconds";

#[derive(Args)]
pub struct SweepArgs {
    /// Tensor dimensions, e.g. 30,30,30
    #[arg(long, default_value = "30,30,30")]
    dims: String,
    /// CP-rank of the planted ground truth
    #[arg(long, default_value_t = 5)]
    rank: usize,
    /// Missing ratios to sweep, e.g. 0.5,0.7,0.9
    #[arg(long)]
    mr: String,
    /// Strategies to sweep, e.g. homp-ls,hormp-ls,hoomp-ls
    #[arg(long)]
    strategies: String,
    /// Seeds per cell (runs seeds 0..n-1)
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Rank budget per fit
    #[arg(long, default_value_t = 300)]
    k: usize,
    /// Stop tolerance on the objective
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value = "ls")]
    loss: String,
    #[arg(long, default_value_t = 1)]
    bcu_sweeps: usize,
    /// Noise level passed to the generator
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Summary CSV file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy)]
struct CellSpec {
    mr: f64,
    strategy: Strategy,
    seed: u64,
}

struct CellOut {
    rel_error: f64,
    iters: usize,
    seconds: f64,
}

fn worker_count(cells: usize) -> usize {
    let cap = std::env::var("HOMP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    cap.min(cells).max(1)
}

fn run_cell(
    spec: CellSpec,
    dims: &[usize],
    rank: usize,
    noise: f64,
    loss: &LossFunction,
    k: usize,
    tol: f64,
    bcu_sweeps: usize,
) -> Result<CellOut, CliError> {
    let inst = gen_completion(&CompletionGenSpec {
        dims: dims.to_vec(),
        cp_rank: rank,
        missing_ratio: spec.mr,
        noise_sigma: noise,
        outlier_fraction: 0.0,
        outlier_range: (-1.0, 1.0),
        seed: spec.seed,
    })?;
    let obj = CompletionObjective::new(inst.observations, loss.clone());
    let cfg = SolverConfig {
        strategy: spec.strategy,
        max_terms: k,
        stop_tol: tol,
        power: PowerIterConfig {
            seed: spec.seed,
            ..PowerIterConfig::default()
        },
        bcu_sweeps,
        ..SolverConfig::default()
    };
    let result = fit(&obj, &cfg)?;
    let rel_error = result.model.relative_error_to(&inst.truth)?;
    let last = result.trace.records.last().expect("baseline row");
    Ok(CellOut {
        rel_error,
        iters: result.trace.records.len() - 1,
        seconds: last.elapsed_ms / 1000.0,
    })
}

pub fn run(a: SweepArgs) -> Result<(), CliError> {
    let dims = parse_usize_list(&a.dims, "dims")?;
    let mrs = parse_f64_list(&a.mr, "mr")?;
    let strategies: Vec<Strategy> = a
        .strategies
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| CliError::Usage(format!("strategies: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if a.seeds == 0 {
        return Err(CliError::Usage("seeds must be at least 1".into()));
    }
    let loss = LossFunction::parse(&a.loss).map_err(|e| CliError::Usage(format!("loss: {e}")))?;

    let mut cells = Vec::new();
    for &mr in &mrs {
        for &strategy in &strategies {
            for seed in 0..a.seeds {
                cells.push(CellSpec { mr, strategy, seed });
            }
        }
    }

    let results: Vec<OnceLock<Result<CellOut, CliError>>> =
        (0..cells.len()).map(|_| OnceLock::new()).collect();
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(cells.len()) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let out = run_cell(
                    cells[i],
                    &dims,
                    a.rank,
                    a.noise,
                    &loss,
                    a.k,
                    a.tol,
                    a.bcu_sweeps,
                );
                let _ = results[i].set(out);
            });
        }
    });

    // Aggregate per (mr, strategy) in sorted order; mr values are nonnegative
    // so their IEEE bit patterns sort like the values themselves.
    let mut agg: BTreeMap<(u64, &'static str), (f64, f64, f64, usize)> = BTreeMap::new();
    for (i, slot) in results.into_iter().enumerate() {
        let out = slot.into_inner().expect("every cell ran")?;
        let key = (cells[i].mr.to_bits(), cells[i].strategy.name());
        let e = agg.entry(key).or_insert((0.0, 0.0, 0.0, 0));
        e.0 += out.rel_error;
        e.1 += out.iters as f64;
        e.2 += out.seconds;
        e.3 += 1;
    }

    let mut csv = String::new();
    csv.push_str(SUMMARY_HEADER);
    csv.push('\n');
    println!("{SUMMARY_HEADER}");
    for ((mr_bits, strategy), (err, iters, secs, n)) in &agg {
        let n = *n as f64;
        let line = format!(
            "{},{strategy},{},{},{}",
            f64::from_bits(*mr_bits),
            err / n,
            iters / n,
            secs / n
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    std::fs::write(&a.out, csv)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", a.out.display())))?;
    Ok(())
}
