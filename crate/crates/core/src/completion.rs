//! Tensor completion: learn a low-rank tensor from a sparse set of observed
//! entries.
//!
//! [`SparseObservations`] is the coordinate list of observed entries;
//! [`CompletionObjective`] turns it into an [`Objective`] the pursuit can
//! drive. Nothing in the objective ever materializes a dense tensor of the
//! full shape except the gradient itself (which the solver needs densely to
//! select atoms); values and images cost `O(|observations|)`.

use crate::loss::LossFunction;
use crate::par;
use crate::rng::standard_normal_vec;
use crate::solver::Objective;
use crate::tensor::{check_dims, decompose_offset, DenseTensor, KruskalModel, RankOneAtom, TensorError};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompletionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("observation set is empty")]
    NoObservations,
    #[error("observation {pos}: index {idx} out of range for mode {mode} (dimension {dim})")]
    IndexOutOfRange {
        pos: usize,
        mode: usize,
        idx: usize,
        dim: usize,
    },
    #[error("observations {first} and {second} address the same entry")]
    DuplicateIndex { first: usize, second: usize },
    #[error("{indices} index tuples but {values} values")]
    LengthMismatch { indices: usize, values: usize },
    #[error("invalid generator setting: {0}")]
    BadGenSpec(String),
}

/// Coordinate list of observed tensor entries: the index set and the observed
/// values on it. Indices are unique and in range; at least one entry exists.
#[derive(Clone, Debug)]
pub struct SparseObservations {
    dims: Vec<usize>,
    /// Flat multi-indices, `order` entries per observation.
    indices: Vec<usize>,
    /// Linear offsets into the row-major dense layout, one per observation.
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SparseObservations {
    /// Builds from flat multi-indices (`order` numbers per observation,
    /// 0-based) and values.
    pub fn new(
        dims: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, CompletionError> {
        check_dims(&dims)?;
        let order = dims.len();
        if indices.len() % order != 0 || indices.len() / order != values.len() {
            return Err(CompletionError::LengthMismatch {
                indices: indices.len() / order,
                values: values.len(),
            });
        }
        if values.is_empty() {
            return Err(CompletionError::NoObservations);
        }
        let mut offsets = Vec::with_capacity(values.len());
        for (pos, tuple) in indices.chunks_exact(order).enumerate() {
            let mut off = 0usize;
            for (mode, (&idx, &dim)) in tuple.iter().zip(&dims).enumerate() {
                if idx >= dim {
                    return Err(CompletionError::IndexOutOfRange {
                        pos,
                        mode,
                        idx,
                        dim,
                    });
                }
                off = off * dim + idx;
            }
            offsets.push(off);
        }
        check_no_duplicates(&offsets)?;
        Ok(SparseObservations {
            dims,
            indices,
            offsets,
            values,
        })
    }

    /// Builds from linear offsets into the row-major layout.
    pub fn from_offsets(
        dims: Vec<usize>,
        offsets: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, CompletionError> {
        let total = check_dims(&dims)?;
        if offsets.len() != values.len() {
            return Err(CompletionError::LengthMismatch {
                indices: offsets.len(),
                values: values.len(),
            });
        }
        if values.is_empty() {
            return Err(CompletionError::NoObservations);
        }
        let order = dims.len();
        let mut indices = Vec::with_capacity(offsets.len() * order);
        for (pos, &off) in offsets.iter().enumerate() {
            if off >= total {
                return Err(CompletionError::IndexOutOfRange {
                    pos,
                    mode: 0,
                    idx: off,
                    dim: total,
                });
            }
            let start = indices.len();
            indices.resize(start + order, 0);
            decompose_offset(&dims, off, &mut indices[start..]);
        }
        check_no_duplicates(&offsets)?;
        Ok(SparseObservations {
            dims,
            indices,
            offsets,
            values,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Multi-index of observation `i`.
    pub fn index(&self, i: usize) -> &[usize] {
        let order = self.dims.len();
        &self.indices[i * order..(i + 1) * order]
    }
}

fn check_no_duplicates(offsets: &[usize]) -> Result<(), CompletionError> {
    let mut tagged: Vec<(usize, usize)> = offsets.iter().copied().zip(0..).collect();
    tagged.sort_unstable();
    for w in tagged.windows(2) {
        if w[0].0 == w[1].0 {
            let (a, b) = (w[0].1.min(w[1].1), w[0].1.max(w[1].1));
            return Err(CompletionError::DuplicateIndex { first: a, second: b });
        }
    }
    Ok(())
}

/// Objective `F(W) = sum_{observed} loss(W[idx] - value)`.
///
/// All reductions run over the observation list only; the gradient is the
/// single dense object (scatter of `loss'(residual)` into the observed
/// positions, zero elsewhere).
pub struct CompletionObjective {
    obs: SparseObservations,
    loss: LossFunction,
}

impl CompletionObjective {
    pub fn new(obs: SparseObservations, loss: LossFunction) -> Self {
        CompletionObjective { obs, loss }
    }

    pub fn observations(&self) -> &SparseObservations {
        &self.obs
    }
}

impl Objective for CompletionObjective {
    fn dims(&self) -> &[usize] {
        self.obs.dims()
    }

    fn targets(&self) -> &[f64] {
        self.obs.values()
    }

    fn loss(&self) -> &LossFunction {
        &self.loss
    }

    fn atom_image(&self, atom: &RankOneAtom) -> Vec<f64> {
        let order = self.obs.dims().len();
        let indices = &self.obs.indices;
        let factors = atom.factors();
        par::fill_indexed(self.obs.len(), |i| {
            indices[i * order..(i + 1) * order]
                .iter()
                .zip(factors)
                .map(|(&idx, f)| f[idx])
                .product()
        })
    }

    fn weighted_dot(&self, x: &[f64], y: &[f64]) -> f64 {
        par::dot(x, y)
    }

    fn value_of_residual(&self, r: &[f64]) -> f64 {
        par::sum_chunked(r.len(), |s, e| {
            r[s..e].iter().map(|t| self.loss.eval(*t)).sum()
        })
    }

    fn gradient_coeffs(&self, r: &[f64]) -> Vec<f64> {
        par::fill_indexed(r.len(), |i| self.loss.derivative(r[i]))
    }

    fn adjoint(&self, coeffs: &[f64]) -> DenseTensor {
        let mut g = DenseTensor::zeros(self.obs.dims()).expect("validated dims");
        let data = g.data_mut();
        for (&off, &c) in self.obs.offsets().iter().zip(coeffs) {
            data[off] = c;
        }
        g
    }

    /// `psi <= 1` for every supported loss and the measurement is a
    /// coordinate restriction, so 1 bounds the gradient's Lipschitz constant.
    fn lipschitz(&self) -> f64 {
        1.0
    }
}

/// Settings for the synthetic completion instance generator.
#[derive(Clone, Debug)]
pub struct CompletionGenSpec {
    pub dims: Vec<usize>,
    /// Number of rank-one terms in the planted ground truth.
    pub cp_rank: usize,
    /// Fraction of entries hidden; the observed count is
    /// `round((1 - missing_ratio) * total)`.
    pub missing_ratio: f64,
    /// Standard deviation of additive Gaussian noise on observed values.
    pub noise_sigma: f64,
    /// Fraction of observed values replaced by uniform draws.
    pub outlier_fraction: f64,
    pub outlier_range: (f64, f64),
    pub seed: u64,
}

impl CompletionGenSpec {
    pub fn noiseless(dims: Vec<usize>, cp_rank: usize, missing_ratio: f64, seed: u64) -> Self {
        CompletionGenSpec {
            dims,
            cp_rank,
            missing_ratio,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_range: (-1.0, 1.0),
            seed,
        }
    }
}

/// A generated instance: the planted truth, what the solver gets to see, and
/// which observations were corrupted.
#[derive(Clone, Debug)]
pub struct CompletionInstance {
    pub truth: KruskalModel,
    pub observations: SparseObservations,
    /// Aligned with the observation list: `true` where the value was replaced
    /// by an outlier draw.
    pub outlier_mask: Vec<bool>,
}

/// Plants a random CP-rank-`cp_rank` tensor (factor entries i.i.d. standard
/// normal, then scaled to unit Frobenius norm), samples the observed index
/// set uniformly without replacement, adds optional Gaussian noise, then
/// replaces a random fraction of observed values with uniform outliers.
/// Deterministic in `seed`.
pub fn gen_completion(spec: &CompletionGenSpec) -> Result<CompletionInstance, CompletionError> {
    let total = check_dims(&spec.dims)?;
    if !(0.0..1.0).contains(&spec.missing_ratio) {
        return Err(CompletionError::BadGenSpec(format!(
            "missing_ratio must be in [0, 1), got {}",
            spec.missing_ratio
        )));
    }
    if !(0.0..=1.0).contains(&spec.outlier_fraction) {
        return Err(CompletionError::BadGenSpec(format!(
            "outlier_fraction must be in [0, 1], got {}",
            spec.outlier_fraction
        )));
    }
    if spec.noise_sigma < 0.0 {
        return Err(CompletionError::BadGenSpec(
            "noise_sigma must be nonnegative".to_string(),
        ));
    }
    if spec.outlier_range.0 > spec.outlier_range.1 {
        return Err(CompletionError::BadGenSpec(format!(
            "outlier_range is empty: ({}, {})",
            spec.outlier_range.0, spec.outlier_range.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Ground truth: raw Gaussian factors; each term is stored as a unit atom
    // with the factor norms folded into the weight.
    let mut truth = KruskalModel::new(&spec.dims)?;
    for _ in 0..spec.cp_rank {
        let factors: Vec<Vec<f64>> = spec
            .dims
            .iter()
            .map(|&d| standard_normal_vec(&mut rng, d))
            .collect();
        let (atom, scale) = RankOneAtom::normalized(factors)?;
        truth.push_term(scale, atom)?;
    }
    // The planted signal is normalized to unit Frobenius norm so that the
    // noise and outlier magnitudes in a spec are interpretable against a
    // fixed scale: outliers drawn from [-1, 1] then dwarf clean entries
    // instead of hiding among them. Relative errors are unaffected.
    let norm = truth.frob_norm();
    if norm.is_finite() && norm > 0.0 {
        truth.scale_weights(1.0 / norm);
    }
    let observed = ((1.0 - spec.missing_ratio) * total as f64).round() as usize;
    if observed == 0 {
        return Err(CompletionError::NoObservations);
    }
    let mut offsets = rand::seq::index::sample(&mut rng, total, observed).into_vec();
    offsets.sort_unstable();
    let mut scratch_idx = vec![0usize; spec.dims.len()];
    let mut values: Vec<f64> = Vec::with_capacity(observed);
    for &off in &offsets {
        decompose_offset(&spec.dims, off, &mut scratch_idx);
        values.push(truth.value_at(&scratch_idx));
    }
    if spec.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v += spec.noise_sigma * eps;
        }
    }
    let mut outlier_mask = vec![false; observed];
    let n_outliers = (spec.outlier_fraction * observed as f64).round() as usize;
    if n_outliers > 0 {
        let mut picks = rand::seq::index::sample(&mut rng, observed, n_outliers).into_vec();
        picks.sort_unstable();
        let dist = Uniform::new_inclusive(spec.outlier_range.0, spec.outlier_range.1);
        for &p in &picks {
            values[p] = dist.sample(&mut rng);
            outlier_mask[p] = true;
        }
    }
    let observations = SparseObservations::from_offsets(spec.dims.clone(), offsets, values)?;
    Ok(CompletionInstance {
        truth,
        observations,
        outlier_mask,
    })
}
