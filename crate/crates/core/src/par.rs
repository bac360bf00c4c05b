//! Data-parallel building blocks with a sequential fallback.
//!
//! Every reduction here splits the index space into fixed-size chunks,
//! computes one partial result per chunk, and folds the partials in chunk
//! order. The chunk boundaries do not depend on the thread count, so the
//! floating point result is bit-identical whether the `parallel` feature is
//! enabled or not. The `*_seq` variants are always compiled; benches use them
//! to compare both paths inside a single build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for deterministic reductions. Changing this changes results
/// in the last bits, so it is a constant, not a tunable.
pub const CHUNK: usize = 4096;

/// Work below this many elements is not worth scheduling.
const MIN_PAR_LEN: usize = 1 << 15;

fn chunk_starts(n: usize) -> impl Iterator<Item = usize> {
    (0..n).step_by(CHUNK)
}

fn fold_partials(partials: Vec<f64>) -> f64 {
    partials.into_iter().sum()
}

/// Sum of `f(start..end)` over fixed chunks of the index range `0..n`.
pub fn sum_chunked_seq<F>(n: usize, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    fold_partials(chunk_starts(n).map(|s| f(s, (s + CHUNK).min(n))).collect())
}

#[cfg(feature = "parallel")]
pub fn sum_chunked<F>(n: usize, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    if n < MIN_PAR_LEN {
        return sum_chunked_seq(n, f);
    }
    let starts: Vec<usize> = chunk_starts(n).collect();
    let partials: Vec<f64> = starts
        .par_iter()
        .map(|&s| f(s, (s + CHUNK).min(n)))
        .collect();
    fold_partials(partials)
}

#[cfg(not(feature = "parallel"))]
pub fn sum_chunked<F>(n: usize, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    sum_chunked_seq(n, f)
}

pub fn dot_seq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_chunked_seq(a.len(), |s, e| {
        a[s..e].iter().zip(&b[s..e]).map(|(x, y)| x * y).sum()
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_chunked(a.len(), |s, e| {
        a[s..e].iter().zip(&b[s..e]).map(|(x, y)| x * y).sum()
    })
}

pub fn sum_sq_seq(a: &[f64]) -> f64 {
    sum_chunked_seq(a.len(), |s, e| a[s..e].iter().map(|x| x * x).sum())
}

pub fn sum_sq(a: &[f64]) -> f64 {
    sum_chunked(a.len(), |s, e| a[s..e].iter().map(|x| x * x).sum())
}

/// Fills a vector where `out[i] = f(i)`. Entry `i` is computed by exactly one
/// task, so the parallel and sequential paths agree bitwise.
pub fn fill_indexed_seq<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn fill_indexed<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n < MIN_PAR_LEN {
        return fill_indexed_seq(n, f);
    }
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn fill_indexed<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    fill_indexed_seq(n, f)
}

/// Runs `f(chunk_index, chunk)` over disjoint fixed-size chunks of `out`.
pub fn for_chunks_mut_seq<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    for (ci, chunk) in out.chunks_mut(CHUNK).enumerate() {
        f(ci, chunk);
    }
}

#[cfg(feature = "parallel")]
pub fn for_chunks_mut<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if out.len() < MIN_PAR_LEN {
        return for_chunks_mut_seq(out, f);
    }
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| f(ci, chunk));
}

#[cfg(not(feature = "parallel"))]
pub fn for_chunks_mut<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    for_chunks_mut_seq(out, f)
}

/// Maps `f` over items, preserving order.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_collect_seq(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_seq_bitwise() {
        let n = 3 * CHUNK + 17;
        let a: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 * 0.137 - 3.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 53) % 97) as f64 * 0.071 - 1.5).collect();
        assert_eq!(dot(&a, &b).to_bits(), dot_seq(&a, &b).to_bits());
        assert_eq!(sum_sq(&a).to_bits(), sum_sq_seq(&a).to_bits());
    }

    #[test]
    fn fill_indexed_matches_seq() {
        let n = MIN_PAR_LEN + 123;
        let f = |i: usize| (i as f64).sqrt() * 0.5 - 1.0;
        assert_eq!(fill_indexed(n, f), fill_indexed_seq(n, f));
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(dot(&[], &[]), 0.0);
        assert_eq!(sum_sq(&[]), 0.0);
        assert!(fill_indexed(0, |_| 1.0).is_empty());
    }
}
