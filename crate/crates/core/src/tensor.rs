//! Dense tensors, rank-one atoms and Kruskal (sum of rank-one) models.
//!
//! Layout convention: entries are stored lexicographically with the last
//! index moving fastest, i.e. row-major over the index tuple. All mode
//! numbers in this API are zero-based; the text file formats are the only
//! place where one-based indices appear.

use crate::mat::Mat;
use crate::par;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor must have at least one mode")]
    EmptyDims,
    #[error("dimension of mode {mode} is zero")]
    ZeroDim { mode: usize },
    #[error("data length {got} does not match dims product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("mode {mode} out of range for order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row/column modes must partition 0..{order} without repeats")]
    BadModePartition { order: usize },
    #[error("factor for mode {mode} has zero norm")]
    DegenerateFactor { mode: usize },
    #[error("factor for mode {mode} is not unit length (norm {norm})")]
    NotUnitFactor { mode: usize, norm: f64 },
}

/// Writes the multi-index for a row-major linear offset into `out`.
pub(crate) fn decompose_offset(dims: &[usize], mut off: usize, out: &mut [usize]) {
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = off % d;
        off /= d;
    }
}

pub(crate) fn check_dims(dims: &[usize]) -> Result<usize, TensorError> {
    if dims.is_empty() {
        return Err(TensorError::EmptyDims);
    }
    let mut total = 1usize;
    for (mode, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(TensorError::ZeroDim { mode });
        }
        total = total.checked_mul(d).expect("tensor size overflow");
    }
    Ok(total)
}

/// Dense tensor of arbitrary order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Result<Self, TensorError> {
        let total = check_dims(dims)?;
        Ok(DenseTensor {
            dims: dims.to_vec(),
            data: vec![0.0; total],
        })
    }

    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let total = check_dims(&dims)?;
        if data.len() != total {
            return Err(TensorError::DataLength {
                expected: total,
                got: data.len(),
            });
        }
        Ok(DenseTensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear offset of a multi-index (last index fastest).
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0usize;
        for (i, (&x, &d)) in idx.iter().zip(&self.dims).enumerate() {
            debug_assert!(x < d, "index {x} out of range at mode {i}");
            let _ = i;
            off = off * d + x;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    pub fn frob_norm(&self) -> f64 {
        par::sum_sq(&self.data).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Euclidean inner product of two tensors of identical shape.
    pub fn inner(&self, other: &DenseTensor) -> Result<f64, TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(par::dot(&self.data, &other.data))
    }

    /// Mode-d unfolding: rows are indexed by mode d, columns by the remaining
    /// modes in their original order, last fastest. Pure data movement.
    pub fn unfold_mode(&self, mode: usize) -> Result<Mat, TensorError> {
        let order = self.order();
        if mode >= order {
            return Err(TensorError::ModeOutOfRange { mode, order });
        }
        let nd = self.dims[mode];
        let pre: usize = self.dims[..mode].iter().product();
        let post: usize = self.dims[mode + 1..].iter().product();
        let cols = pre * post;
        let mut out = vec![0.0; nd * cols];
        for a in 0..pre {
            for i in 0..nd {
                let src = (a * nd + i) * post;
                let dst = i * cols + a * post;
                out[dst..dst + post].copy_from_slice(&self.data[src..src + post]);
            }
        }
        Ok(Mat::from_vec(nd, cols, out))
    }

    /// Inverse of `unfold_mode`. Bitwise round trip: no arithmetic.
    pub fn fold_mode(m: &Mat, dims: &[usize], mode: usize) -> Result<Self, TensorError> {
        let total = check_dims(dims)?;
        let order = dims.len();
        if mode >= order {
            return Err(TensorError::ModeOutOfRange { mode, order });
        }
        let nd = dims[mode];
        let pre: usize = dims[..mode].iter().product();
        let post: usize = dims[mode + 1..].iter().product();
        if m.rows() != nd || m.cols() != pre * post {
            return Err(TensorError::ShapeMismatch(format!(
                "matrix {}x{} cannot fold into {:?} at mode {}",
                m.rows(),
                m.cols(),
                dims,
                mode
            )));
        }
        let cols = m.cols();
        let mut data = vec![0.0; total];
        let src = m.data();
        for a in 0..pre {
            for i in 0..nd {
                let s = i * cols + a * post;
                let d = (a * nd + i) * post;
                data[d..d + post].copy_from_slice(&src[s..s + post]);
            }
        }
        Ok(DenseTensor {
            dims: dims.to_vec(),
            data,
        })
    }

    fn check_partition(&self, row_modes: &[usize], col_modes: &[usize]) -> Result<(), TensorError> {
        let order = self.order();
        let mut seen = vec![false; order];
        for &m in row_modes.iter().chain(col_modes) {
            if m >= order || seen[m] {
                return Err(TensorError::BadModePartition { order });
            }
            seen[m] = true;
        }
        if seen.iter().all(|&s| s) && !row_modes.is_empty() && !col_modes.is_empty() {
            Ok(())
        } else {
            Err(TensorError::BadModePartition { order })
        }
    }

    /// General unfolding: merges `row_modes` into the row index and
    /// `col_modes` into the column index, both lexicographically with the
    /// last listed mode fastest.
    pub fn unfold_pq(&self, row_modes: &[usize], col_modes: &[usize]) -> Result<Mat, TensorError> {
        self.check_partition(row_modes, col_modes)?;
        let rows: usize = row_modes.iter().map(|&m| self.dims[m]).product();
        let cols: usize = col_modes.iter().map(|&m| self.dims[m]).product();
        let mut out = vec![0.0; rows * cols];
        // Per-mode contribution of one index step to the merged row/col index.
        let order = self.order();
        let mut row_stride = vec![0usize; order];
        let mut col_stride = vec![0usize; order];
        let mut s = 1;
        for &m in row_modes.iter().rev() {
            row_stride[m] = s;
            s *= self.dims[m];
        }
        s = 1;
        for &m in col_modes.iter().rev() {
            col_stride[m] = s;
            s *= self.dims[m];
        }
        // Odometer over the source multi-index; row/col updated incrementally.
        let mut idx = vec![0usize; order];
        let mut row = 0usize;
        let mut col = 0usize;
        for &v in &self.data {
            out[row * cols + col] = v;
            for m in (0..order).rev() {
                idx[m] += 1;
                row += row_stride[m];
                col += col_stride[m];
                if idx[m] < self.dims[m] {
                    break;
                }
                row -= row_stride[m] * self.dims[m];
                col -= col_stride[m] * self.dims[m];
                idx[m] = 0;
            }
        }
        Ok(Mat::from_vec(rows, cols, out))
    }

    /// Inverse of `unfold_pq` for the same mode partition.
    pub fn fold_pq(
        m: &Mat,
        dims: &[usize],
        row_modes: &[usize],
        col_modes: &[usize],
    ) -> Result<Self, TensorError> {
        let mut t = DenseTensor::zeros(dims)?;
        t.check_partition(row_modes, col_modes)?;
        let rows: usize = row_modes.iter().map(|&m| dims[m]).product();
        let cols: usize = col_modes.iter().map(|&m| dims[m]).product();
        if m.rows() != rows || m.cols() != cols {
            return Err(TensorError::ShapeMismatch(format!(
                "matrix {}x{} cannot fold into {:?} with given mode split",
                m.rows(),
                m.cols(),
                dims
            )));
        }
        let order = dims.len();
        let mut row_stride = vec![0usize; order];
        let mut col_stride = vec![0usize; order];
        let mut s = 1;
        for &mm in row_modes.iter().rev() {
            row_stride[mm] = s;
            s *= dims[mm];
        }
        s = 1;
        for &mm in col_modes.iter().rev() {
            col_stride[mm] = s;
            s *= dims[mm];
        }
        let src = m.data();
        let mut idx = vec![0usize; order];
        let mut row = 0usize;
        let mut col = 0usize;
        for v in t.data.iter_mut() {
            *v = src[row * cols + col];
            for mm in (0..order).rev() {
                idx[mm] += 1;
                row += row_stride[mm];
                col += col_stride[mm];
                if idx[mm] < dims[mm] {
                    break;
                }
                row -= row_stride[mm] * dims[mm];
                col -= col_stride[mm] * dims[mm];
                idx[mm] = 0;
            }
        }
        Ok(t)
    }

    /// Mode-d product with a matrix u (shape J x n_d): replaces dimension d
    /// by J.
    pub fn mode_mul_mat(&self, mode: usize, u: &Mat) -> Result<Self, TensorError> {
        let order = self.order();
        if mode >= order {
            return Err(TensorError::ModeOutOfRange { mode, order });
        }
        let nd = self.dims[mode];
        if u.cols() != nd {
            return Err(TensorError::ShapeMismatch(format!(
                "matrix has {} columns, mode {} has size {}",
                u.cols(),
                mode,
                nd
            )));
        }
        let j = u.rows();
        let pre: usize = self.dims[..mode].iter().product();
        let post: usize = self.dims[mode + 1..].iter().product();
        let mut dims = self.dims.clone();
        dims[mode] = j;
        let data = &self.data;
        let out = par::fill_indexed(pre * j * post, |o| {
            let b = o % post;
            let r = (o / post) % j;
            let a = o / (post * j);
            let mut acc = 0.0;
            for i in 0..nd {
                acc += u.get(r, i) * data[(a * nd + i) * post + b];
            }
            acc
        });
        DenseTensor::from_vec(dims, out)
    }

    /// Mode-d contraction with a vector: drops the mode. The tensor must have
    /// order at least two.
    pub fn mode_mul_vec(&self, mode: usize, v: &[f64]) -> Result<Self, TensorError> {
        let order = self.order();
        if order < 2 {
            return Err(TensorError::ShapeMismatch(
                "vector contraction needs order >= 2".into(),
            ));
        }
        if mode >= order {
            return Err(TensorError::ModeOutOfRange { mode, order });
        }
        let nd = self.dims[mode];
        if v.len() != nd {
            return Err(TensorError::ShapeMismatch(format!(
                "vector length {} does not match mode {} size {}",
                v.len(),
                mode,
                nd
            )));
        }
        let post: usize = self.dims[mode + 1..].iter().product();
        let mut dims = self.dims.clone();
        dims.remove(mode);
        let pre: usize = self.dims[..mode].iter().product();
        let data = &self.data;
        let out = par::fill_indexed(pre * post, |o| {
            let b = o % post;
            let a = o / post;
            let mut acc = 0.0;
            for i in 0..nd {
                acc += v[i] * data[(a * nd + i) * post + b];
            }
            acc
        });
        DenseTensor::from_vec(dims, out)
    }
}

/// Full contraction of a tensor with a rank-one atom:
/// `<a, x_1 (x) ... (x) x_N>`. Contracts the last mode first so every inner
/// loop runs over contiguous memory; total cost is O(number of entries).
pub fn contract_rank_one(a: &DenseTensor, atom: &RankOneAtom) -> Result<f64, TensorError> {
    if atom.dims() != a.dims() {
        return Err(TensorError::ShapeMismatch(format!(
            "atom dims {:?} vs tensor dims {:?}",
            atom.dims(),
            a.dims()
        )));
    }
    let order = a.order();
    let f = atom.factor(order - 1);
    let n = a.dims()[order - 1];
    let outer = a.len() / n;
    let data = a.data();
    let mut cur = par::fill_indexed(outer, |o| {
        let row = &data[o * n..(o + 1) * n];
        row.iter().zip(f).map(|(x, y)| x * y).sum()
    });
    for mode in (0..order - 1).rev() {
        let f = atom.factor(mode);
        let n = a.dims()[mode];
        let outer = cur.len() / n;
        let mut next = Vec::with_capacity(outer);
        for o in 0..outer {
            let row = &cur[o * n..(o + 1) * n];
            next.push(row.iter().zip(f).map(|(x, y)| x * y).sum());
        }
        cur = next;
    }
    debug_assert_eq!(cur.len(), 1);
    Ok(cur[0])
}

/// Contracts every mode outside `lo..=hi` against the matching vector in
/// `factors`, leaving the data of the `dims[lo..=hi]` block (row-major).
/// Trailing modes are folded in first (contiguous inner loops), leading modes
/// afterwards with a fixed ascending accumulation order, so the result is
/// reproducible bit for bit.
pub(crate) fn contract_outside_range(
    a: &DenseTensor,
    factors: &[Vec<f64>],
    lo: usize,
    hi: usize,
) -> Vec<f64> {
    debug_assert!(lo <= hi && hi < a.order());
    debug_assert_eq!(factors.len(), a.order());
    let dims = a.dims();
    let mut cur: Vec<f64>;
    // Fold trailing modes, last first; each pass shrinks the buffer by one
    // mode while the slice it reads stays contiguous.
    if hi + 1 < a.order() {
        let mode = a.order() - 1;
        let f = &factors[mode];
        let n = dims[mode];
        let outer = a.len() / n;
        let data = a.data();
        cur = par::fill_indexed(outer, |o| {
            let row = &data[o * n..(o + 1) * n];
            row.iter().zip(f).map(|(x, y)| x * y).sum()
        });
        for mode in (hi + 1..a.order() - 1).rev() {
            let f = &factors[mode];
            let n = dims[mode];
            let outer = cur.len() / n;
            let mut next = Vec::with_capacity(outer);
            for o in 0..outer {
                let row = &cur[o * n..(o + 1) * n];
                next.push(row.iter().zip(f).map(|(x, y)| x * y).sum());
            }
            cur = next;
        }
    } else {
        cur = a.data().to_vec();
    }
    // Fold leading modes; mode 0 of the current buffer is always the next one
    // to remove.
    for mode in 0..lo {
        let f = &factors[mode];
        let n = dims[mode];
        let inner = cur.len() / n;
        let mut next = vec![0.0; inner];
        for (i, &w) in f.iter().enumerate().take(n) {
            let block = &cur[i * inner..(i + 1) * inner];
            for (acc, &x) in next.iter_mut().zip(block) {
                *acc += w * x;
            }
        }
        cur = next;
    }
    cur
}

/// Rank-one direction: one unit vector per mode. The represented tensor is
/// the outer product of the factors, so it always has unit Frobenius norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RankOneAtom {
    factors: Vec<Vec<f64>>,
}

const UNIT_TOL: f64 = 1e-10;

impl RankOneAtom {
    /// Builds an atom from factors that are already unit length (within
    /// 1e-10).
    pub fn new(factors: Vec<Vec<f64>>) -> Result<Self, TensorError> {
        if factors.is_empty() {
            return Err(TensorError::EmptyDims);
        }
        for (mode, f) in factors.iter().enumerate() {
            if f.is_empty() {
                return Err(TensorError::ZeroDim { mode });
            }
            let norm = par::sum_sq_seq(f).sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(TensorError::NotUnitFactor { mode, norm });
            }
        }
        Ok(RankOneAtom { factors })
    }

    /// Normalizes arbitrary nonzero factors; returns the atom together with
    /// the product of the removed norms.
    pub fn normalized(mut factors: Vec<Vec<f64>>) -> Result<(Self, f64), TensorError> {
        if factors.is_empty() {
            return Err(TensorError::EmptyDims);
        }
        let mut scale = 1.0;
        for (mode, f) in factors.iter_mut().enumerate() {
            let norm = par::sum_sq_seq(f).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(TensorError::DegenerateFactor { mode });
            }
            scale *= norm;
            let inv = 1.0 / norm;
            for x in f.iter_mut() {
                *x *= inv;
            }
        }
        Ok((RankOneAtom { factors }, scale))
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.len()).collect()
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &[f64] {
        &self.factors[mode]
    }

    /// Entry of the represented tensor at a multi-index.
    pub fn value_at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.factors.len());
        self.factors
            .iter()
            .zip(idx)
            .map(|(f, &i)| f[i])
            .product()
    }

    /// Flips the sign of the factor for one mode.
    pub fn negate_mode(&mut self, mode: usize) {
        for x in self.factors[mode].iter_mut() {
            *x = -*x;
        }
    }

    /// Materializes the outer product as a dense tensor.
    pub fn to_dense(&self) -> DenseTensor {
        let dims = self.dims();
        let mut data = vec![1.0f64];
        for f in &self.factors {
            let mut next = Vec::with_capacity(data.len() * f.len());
            for &d in &data {
                for &x in f {
                    next.push(d * x);
                }
            }
            data = next;
        }
        DenseTensor::from_vec(dims, data).expect("atom dims are valid")
    }

    fn inner_atom(&self, other: &RankOneAtom) -> f64 {
        self.factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| par::dot_seq(a, b))
            .product()
    }
}

/// Weighted sum of rank-one atoms sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct KruskalModel {
    dims: Vec<usize>,
    weights: Vec<f64>,
    atoms: Vec<RankOneAtom>,
}

impl KruskalModel {
    pub fn new(dims: &[usize]) -> Result<Self, TensorError> {
        check_dims(dims)?;
        Ok(KruskalModel {
            dims: dims.to_vec(),
            weights: Vec::new(),
            atoms: Vec::new(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Number of stored terms; the CP rank of the represented tensor is at
    /// most this.
    pub fn num_terms(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> &[RankOneAtom] {
        &self.atoms
    }

    pub fn push_term(&mut self, weight: f64, atom: RankOneAtom) -> Result<(), TensorError> {
        if atom.dims() != self.dims {
            return Err(TensorError::ShapeMismatch(format!(
                "atom dims {:?} vs model dims {:?}",
                atom.dims(),
                self.dims
            )));
        }
        self.weights.push(weight);
        self.atoms.push(atom);
        Ok(())
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        assert_eq!(weights.len(), self.atoms.len(), "weight count mismatch");
        self.weights = weights;
    }

    pub fn scale_weights(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
    }

    /// Entry of the represented tensor at a multi-index.
    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.weights
            .iter()
            .zip(&self.atoms)
            .map(|(w, a)| w * a.value_at(idx))
            .sum()
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(&self.dims).expect("model dims are valid");
        for (w, atom) in self.weights.iter().zip(&self.atoms) {
            let d = atom.to_dense();
            for (o, v) in out.data_mut().iter_mut().zip(d.data()) {
                *o += w * v;
            }
        }
        out
    }

    /// Inner product with another model without materializing either tensor:
    /// sum over term pairs of the product of factor dot products.
    pub fn inner_model(&self, other: &KruskalModel) -> Result<f64, TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let mut acc = 0.0;
        for (wi, ai) in self.weights.iter().zip(&self.atoms) {
            for (wj, aj) in other.weights.iter().zip(&other.atoms) {
                acc += wi * wj * ai.inner_atom(aj);
            }
        }
        Ok(acc)
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner_model(self).expect("same dims").max(0.0)
    }

    pub fn frob_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// ||self - truth||_F / ||truth||_F over all entries, computed from Gram
    /// products of the factors.
    pub fn relative_error_to(&self, truth: &KruskalModel) -> Result<f64, TensorError> {
        let cross = self.inner_model(truth)?;
        let tn = truth.norm_sq();
        if tn == 0.0 {
            return Ok(if self.norm_sq() == 0.0 { 0.0 } else { f64::INFINITY });
        }
        let diff = (self.norm_sq() - 2.0 * cross + tn).max(0.0);
        Ok((diff / tn).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t234() -> DenseTensor {
        let data: Vec<f64> = (0..24).map(|i| i as f64 + 1.0).collect();
        DenseTensor::from_vec(vec![2, 3, 4], data).unwrap()
    }

    #[test]
    fn inner_of_self_is_norm_sq() {
        let ones = DenseTensor::from_vec(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        assert_eq!(ones.inner(&ones).unwrap(), 8.0);
        assert_eq!(ones.frob_norm(), 8f64.sqrt());
    }

    #[test]
    fn inner_shape_mismatch_errors() {
        let a = DenseTensor::zeros(&[2, 3]).unwrap();
        let b = DenseTensor::zeros(&[3, 2]).unwrap();
        assert!(a.inner(&b).is_err());
    }

    #[test]
    fn unfold_mode_zero_of_matrix_is_identity() {
        let m = DenseTensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let u = m.unfold_mode(0).unwrap();
        assert_eq!(u.data(), m.data());
        assert_eq!((u.rows(), u.cols()), (2, 3));
    }

    #[test]
    fn unfold_mode_matches_naive_loops() {
        let t = t234();
        for mode in 0..3 {
            let u = t.unfold_mode(mode).unwrap();
            // Columns: remaining modes in order, last fastest.
            let rem: Vec<usize> = (0..3).filter(|&m| m != mode).collect();
            for i0 in 0..2 {
                for i1 in 0..3 {
                    for i2 in 0..4 {
                        let idx = [i0, i1, i2];
                        let col = idx[rem[0]] * t.dims()[rem[1]] + idx[rem[1]];
                        assert_eq!(u.get(idx[mode], col), t.get(&idx));
                    }
                }
            }
        }
    }

    #[test]
    fn fold_unfold_round_trip_bitwise() {
        let t = t234();
        for mode in 0..3 {
            let u = t.unfold_mode(mode).unwrap();
            let back = DenseTensor::fold_mode(&u, t.dims(), mode).unwrap();
            assert_eq!(back.data(), t.data());
        }
    }

    #[test]
    fn unfold_pq_one_based_entry_position() {
        // For a 2x2x2x2 tensor unfolded with rows {0,1} and cols {2,3}, the
        // entry at index (1,2,1,1) in one-based terms lands at row 2, col 1.
        let mut t = DenseTensor::zeros(&[2, 2, 2, 2]).unwrap();
        t.set(&[0, 1, 0, 0], 7.5);
        let m = t.unfold_pq(&[0, 1], &[2, 3]).unwrap();
        assert_eq!(m.get(1, 0), 7.5);
    }

    #[test]
    fn unfold_pq_single_row_mode_matches_unfold_mode() {
        let t = t234();
        let a = t.unfold_pq(&[0], &[1, 2]).unwrap();
        let b = t.unfold_mode(0).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn unfold_pq_rejects_bad_partition() {
        let t = t234();
        assert!(t.unfold_pq(&[0, 1], &[1, 2]).is_err());
        assert!(t.unfold_pq(&[0], &[1]).is_err());
        assert!(t.unfold_pq(&[], &[0, 1, 2]).is_err());
    }

    #[test]
    fn fold_pq_round_trip() {
        let t = t234();
        let m = t.unfold_pq(&[2, 0], &[1]).unwrap();
        let back = DenseTensor::fold_pq(&m, t.dims(), &[2, 0], &[1]).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn mode_mul_identity_is_noop() {
        let t = t234();
        let eye = Mat::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let r = t.mode_mul_mat(1, &eye).unwrap();
        assert_eq!(r.data(), t.data());
    }

    #[test]
    fn mode_mul_vec_matches_naive() {
        let t = t234();
        let v = [1.0, -1.0, 2.0];
        let r = t.mode_mul_vec(1, &v).unwrap();
        assert_eq!(r.dims(), &[2, 4]);
        for i in 0..2 {
            for k in 0..4 {
                let want: f64 = (0..3).map(|j| v[j] * t.get(&[i, j, k])).sum();
                assert!((r.get(&[i, k]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contract_rank_one_unit_atom_is_one() {
        let atom = RankOneAtom::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let dense = atom.to_dense();
        assert!((contract_rank_one(&dense, &atom).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn contract_rank_one_zero_tensor() {
        let z = DenseTensor::zeros(&[2, 3, 2]).unwrap();
        let (atom, _) =
            RankOneAtom::normalized(vec![vec![1.0, 2.0], vec![0.5, 1.0, -1.0], vec![1.0, 1.0]])
                .unwrap();
        assert_eq!(contract_rank_one(&z, &atom).unwrap(), 0.0);
    }

    #[test]
    fn contract_rank_one_matches_materialized() {
        // Deterministic pseudo-random instances across orders 3 to 5.
        let mut x = 0.3f64;
        let mut next = move || {
            x = (x * 913.0 + 0.517).sin();
            x
        };
        for order in 3..=5usize {
            let dims: Vec<usize> = (0..order).map(|m| 2 + (m % 3)).collect();
            let total: usize = dims.iter().product();
            let data: Vec<f64> = (0..total).map(|_| next()).collect();
            let t = DenseTensor::from_vec(dims.clone(), data).unwrap();
            let factors: Vec<Vec<f64>> = dims
                .iter()
                .map(|&d| (0..d).map(|_| next()).collect())
                .collect();
            let (atom, _) = RankOneAtom::normalized(factors).unwrap();
            let fast = contract_rank_one(&t, &atom).unwrap();
            let slow = t.inner(&atom.to_dense()).unwrap();
            let scale = fast.abs().max(slow.abs()).max(1.0);
            assert!(
                (fast - slow).abs() <= 1e-12 * scale,
                "order {order}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn atom_requires_unit_factors() {
        assert!(RankOneAtom::new(vec![vec![2.0, 0.0]]).is_err());
        assert!(RankOneAtom::new(vec![vec![1.0], vec![0.6, 0.8]]).is_ok());
        assert!(matches!(
            RankOneAtom::normalized(vec![vec![0.0, 0.0]]),
            Err(TensorError::DegenerateFactor { mode: 0 })
        ));
    }

    #[test]
    fn normalized_returns_scale() {
        let (atom, scale) = RankOneAtom::normalized(vec![vec![3.0, 4.0], vec![0.0, 2.0]]).unwrap();
        assert!((scale - 10.0).abs() < 1e-12);
        assert!((atom.factor(0)[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn atom_to_dense_basis_vectors() {
        let atom = RankOneAtom::new(vec![vec![0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let d = atom.to_dense();
        assert_eq!(d.get(&[1, 0]), 1.0);
        assert_eq!(d.frob_norm(), 1.0);
    }

    #[test]
    fn empty_model_is_zero() {
        let m = KruskalModel::new(&[2, 2]).unwrap();
        assert_eq!(m.to_dense().frob_norm(), 0.0);
        assert_eq!(m.value_at(&[1, 1]), 0.0);
        assert_eq!(m.frob_norm(), 0.0);
    }

    #[test]
    fn model_linearity_of_two_terms() {
        let mut m = KruskalModel::new(&[2, 2]).unwrap();
        let a1 = RankOneAtom::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let a2 = RankOneAtom::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        m.push_term(2.0, a1).unwrap();
        m.push_term(-3.0, a2).unwrap();
        let d = m.to_dense();
        assert_eq!(d.get(&[0, 0]), 2.0);
        assert_eq!(d.get(&[1, 1]), -3.0);
        assert_eq!(d.get(&[0, 1]), 0.0);
    }

    #[test]
    fn model_inner_matches_dense_inner() {
        let mut x = 0.7f64;
        let mut next = move || {
            x = (x * 771.0 + 0.211).sin();
            x
        };
        let dims = [3usize, 2, 4];
        let mut a = KruskalModel::new(&dims).unwrap();
        let mut b = KruskalModel::new(&dims).unwrap();
        for k in 0..3 {
            let fa: Vec<Vec<f64>> = dims.iter().map(|&d| (0..d).map(|_| next()).collect()).collect();
            let fb: Vec<Vec<f64>> = dims.iter().map(|&d| (0..d).map(|_| next()).collect()).collect();
            let (atom_a, sa) = RankOneAtom::normalized(fa).unwrap();
            let (atom_b, sb) = RankOneAtom::normalized(fb).unwrap();
            a.push_term(0.5 + k as f64 * sa, atom_a).unwrap();
            b.push_term(1.0 - k as f64 * 0.3 * sb, atom_b).unwrap();
        }
        let fast = a.inner_model(&b).unwrap();
        let slow = a.to_dense().inner(&b.to_dense()).unwrap();
        assert!((fast - slow).abs() < 1e-10 * fast.abs().max(1.0));
        let ra = a.relative_error_to(&b).unwrap();
        let mut diff = a.to_dense();
        for (d, s) in diff.data_mut().iter_mut().zip(b.to_dense().data()) {
            *d -= s;
        }
        let want = diff.frob_norm() / b.to_dense().frob_norm();
        assert!((ra - want).abs() < 1e-10, "{ra} vs {want}");
    }

    #[test]
    fn zero_size_dims_rejected() {
        assert!(DenseTensor::zeros(&[2, 0, 3]).is_err());
        assert!(DenseTensor::zeros(&[]).is_err());
        assert!(DenseTensor::from_vec(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn partial_contraction_agrees_with_full() {
        let mut x = 0.25f64;
        let mut next = move || {
            x = (x * 913.0 + 0.37).sin();
            x
        };
        let dims = [3usize, 2, 4, 2];
        let data: Vec<f64> = (0..48).map(|_| next()).collect();
        let a = DenseTensor::from_vec(dims.to_vec(), data).unwrap();
        let factors: Vec<Vec<f64>> = dims
            .iter()
            .map(|&d| {
                let v: Vec<f64> = (0..d).map(|_| next()).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let atom = RankOneAtom::new(factors.clone()).unwrap();
        let full = contract_rank_one(&a, &atom).unwrap();
        // Keeping modes 1..=2 and finishing the contraction by hand must give
        // the same scalar.
        for (lo, hi) in [(1usize, 2usize), (0, 1), (2, 3), (0, 3), (1, 1)] {
            let block = contract_outside_range(&a, &factors, lo, hi);
            let mut acc = 0.0;
            let block_dims: Vec<usize> = dims[lo..=hi].to_vec();
            let total: usize = block_dims.iter().product();
            assert_eq!(block.len(), total);
            for (off, &v) in block.iter().enumerate() {
                let mut rem = off;
                let mut coeff = 1.0;
                for (j, &d) in block_dims.iter().enumerate().rev() {
                    let idx = rem % d;
                    rem /= d;
                    coeff *= factors[lo + j][idx];
                }
                acc += v * coeff;
            }
            assert!(
                (acc - full).abs() < 1e-12 * full.abs().max(1.0),
                "keep {lo}..={hi}: {acc} vs {full}"
            );
        }
    }
}
