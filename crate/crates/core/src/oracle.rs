//! Independent reference computations.
//!
//! Nothing in here is fast and nothing in here shares algorithms with the
//! solver path: the brute-force spectral norm runs exact alternating
//! maximization from many random starts, the small SVD is one-sided Jacobi,
//! and the line search oracle is a plain grid scan. Tests pin the solver
//! against these; the CLI exposes them for debugging.

use crate::mat::{jacobi_svd, Mat, Svd};
use crate::par;
use crate::solver::Objective;
use crate::tensor::{contract_outside_range, DenseTensor, KruskalModel, RankOneAtom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("tensor has {size} entries, brute force is limited to {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("matrix min dimension {got} exceeds the small-SVD limit {limit}")]
    MinDimTooLarge { got: usize, limit: usize },
}

/// Entry budget for the brute-force spectral norm.
pub const BRUTEFORCE_MAX_ENTRIES: usize = 10_000;

/// Short-side budget for `svd_small`.
pub const SVD_SMALL_MAX_DIM: usize = 64;

/// Maximizer of `<a, x_1 (x) ... (x) x_N>` over unit vectors, found by exact
/// alternating maximization.
#[derive(Clone, Debug)]
pub struct RankOneMax {
    pub value: f64,
    pub factors: Vec<Vec<f64>>,
}

const SWEEP_LIMIT: usize = 500;
const SWEEP_TOL: f64 = 1e-12;

/// Multi-start alternating maximization of the tensor spectral norm.
///
/// Each start runs exact best-response updates (each factor update is the
/// normalized contraction against all other factors, which maximizes the
/// objective in that block), so the per-start value is non-decreasing. The
/// best value over all starts is returned; ties keep the lower start index,
/// making the result deterministic for a fixed seed regardless of the thread
/// count.
pub fn spectral_norm_bruteforce(
    a: &DenseTensor,
    starts: usize,
    seed: u64,
) -> Result<RankOneMax, OracleError> {
    if a.len() > BRUTEFORCE_MAX_ENTRIES {
        return Err(OracleError::TooLarge {
            size: a.len(),
            limit: BRUTEFORCE_MAX_ENTRIES,
        });
    }
    let dims = a.dims().to_vec();
    let basis_factors = || -> Vec<Vec<f64>> {
        dims.iter()
            .map(|&d| {
                let mut f = vec![0.0; d];
                f[0] = 1.0;
                f
            })
            .collect()
    };
    if a.frob_norm() == 0.0 {
        return Ok(RankOneMax {
            value: 0.0,
            factors: basis_factors(),
        });
    }
    // All starting points are drawn up front from one stream, so a run with
    // more starts extends a run with fewer starts instead of reshuffling it.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Vec<Vec<f64>>> = (0..starts.max(1))
        .map(|_| {
            dims.iter()
                .map(|&d| random_unit(&mut rng, d))
                .collect::<Vec<_>>()
        })
        .collect();
    let results: Vec<(f64, Vec<Vec<f64>>)> =
        par::map_collect(&inits, |init| ascend(a, init.clone()));
    let mut best = results[0].clone();
    for r in &results[1..] {
        if r.0 > best.0 {
            best = r.clone();
        }
    }
    Ok(RankOneMax {
        value: best.0,
        factors: best.1,
    })
}

fn ascend(a: &DenseTensor, mut factors: Vec<Vec<f64>>) -> (f64, Vec<Vec<f64>>) {
    let order = a.order();
    let mut last = 0.0f64;
    for sweep in 0..SWEEP_LIMIT {
        let mut value = 0.0;
        for d in 0..order {
            let v = contract_outside_range(a, &factors, d, d);
            let norm = par::sum_sq_seq(&v).sqrt();
            if norm == 0.0 {
                // The current factors annihilate the tensor; this start is
                // stuck at zero.
                return (0.0, factors);
            }
            factors[d] = v.iter().map(|x| x / norm).collect();
            value = norm;
        }
        if sweep > 0 && value - last <= SWEEP_TOL * value.max(1.0) {
            return (value, factors);
        }
        last = value;
    }
    (last, factors)
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        // Box-Muller pairs; isotropic direction after normalization.
        let mut v: Vec<f64> = Vec::with_capacity(n);
        while v.len() < n {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt();
            v.push(r * u2.cos());
            if v.len() < n {
                v.push(r * u2.sin());
            }
        }
        let norm = par::sum_sq_seq(&v).sqrt();
        if norm > 1e-30 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return v;
        }
    }
}

/// Exact SVD for matrices with a small short side; delegates to one-sided
/// Jacobi after checking the guard.
pub fn svd_small(m: &Mat) -> Result<Svd, OracleError> {
    if m.min_dim() > SVD_SMALL_MAX_DIM {
        return Err(OracleError::MinDimTooLarge {
            got: m.min_dim(),
            limit: SVD_SMALL_MAX_DIM,
        });
    }
    Ok(jacobi_svd(m))
}

/// Minimizes a scalar function over an even grid on `[lo, hi]` with `points`
/// samples. Returns `(argmin, min)`; earlier grid points win ties.
pub fn grid_scan<F: FnMut(f64) -> f64>(lo: f64, hi: f64, points: usize, mut f: F) -> (f64, f64) {
    assert!(points >= 2, "grid needs at least two points");
    assert!(hi > lo, "empty grid range");
    let step = (hi - lo) / (points - 1) as f64;
    let mut best_alpha = lo;
    let mut best_value = f(lo);
    for i in 1..points {
        let alpha = lo + step * i as f64;
        let v = f(alpha);
        if v < best_value {
            best_value = v;
            best_alpha = alpha;
        }
    }
    (best_alpha, best_value)
}

/// Brute-force line search for the objective along one atom:
/// scans `F(model + alpha * atom)` on a grid.
pub fn grid_line_search<O: Objective + ?Sized>(
    obj: &O,
    model: &KruskalModel,
    atom: &RankOneAtom,
    lo: f64,
    hi: f64,
    points: usize,
) -> (f64, f64) {
    let base = obj.residual(model);
    let image = obj.atom_image(atom);
    let mut scratch = vec![0.0; base.len()];
    grid_scan(lo, hi, points, |alpha| {
        for ((s, r), im) in scratch.iter_mut().zip(&base).zip(&image) {
            *s = r + alpha * im;
        }
        obj.value_of_residual(&scratch)
    })
}

/// Central finite difference of the objective along a rank-one direction.
pub fn fd_directional<O: Objective + ?Sized>(
    obj: &O,
    model: &KruskalModel,
    direction: &RankOneAtom,
    h: f64,
) -> f64 {
    let mut plus = model.clone();
    plus.push_term(h, direction.clone()).expect("direction shape");
    let mut minus = model.clone();
    minus.push_term(-h, direction.clone()).expect("direction shape");
    (obj.value(&plus) - obj.value(&minus)) / (2.0 * h)
}
