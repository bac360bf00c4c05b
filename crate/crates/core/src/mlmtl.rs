//! Multilinear multitask learning.
//!
//! Each task on a grid of categorical attributes carries a linear regression
//! problem; stacking the per-task weight vectors as mode-1 fibers of a tensor
//! couples the tasks through its low-rank structure. [`MlmtlObjective`]
//! evaluates `F(W) = sum_t (1/m_t) sum_i loss(<x_i^t, w^t> - y_i^t)` without
//! ever densifying `W`; [`build_ridge_reformulation`] folds a ridge penalty
//! into transformed per-task data so the same pursuit minimizes the
//! regularized objective unchanged.

use crate::loss::LossFunction;
use crate::mat::{jacobi_svd, spectral_norm_upper, Mat};
use crate::par;
use crate::rng::standard_normal_vec;
use crate::solver::Objective;
use crate::tensor::{check_dims, decompose_offset, DenseTensor, KruskalModel, RankOneAtom, TensorError};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlmtlError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("task {task}: {rows} feature rows but {targets} targets")]
    RowMismatch {
        task: usize,
        rows: usize,
        targets: usize,
    },
    #[error("task grid wants {expected} tasks, got {got}")]
    TaskCountMismatch { expected: usize, got: usize },
    #[error("task {task}: feature dimension {got}, expected {want}")]
    FeatureDimMismatch {
        task: usize,
        got: usize,
        want: usize,
    },
    #[error("no task has any samples")]
    NoSamples,
    #[error("ridge reformulation with lambda = 0 needs positive definite task grams; task {task} is singular")]
    SingularTaskGram { task: usize },
    #[error("invalid setting: {0}")]
    BadSpec(String),
}

/// One regression task: `m_t` feature rows (dimension `D`, bias included as a
/// feature) and their targets. Empty tasks (`m_t = 0`) are legal and
/// contribute nothing to the objective.
#[derive(Clone, Debug)]
pub struct Task {
    features: Mat,
    targets: Vec<f64>,
}

impl Task {
    pub fn new(features: Mat, targets: Vec<f64>) -> Result<Self, MlmtlError> {
        if features.rows() != targets.len() {
            return Err(MlmtlError::RowMismatch {
                task: 0,
                rows: features.rows(),
                targets: targets.len(),
            });
        }
        Ok(Task { features, targets })
    }

    pub fn samples(&self) -> usize {
        self.targets.len()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// A full task grid: `prod(task_dims)` tasks in row-major order over the
/// attribute axes, all sharing the feature dimension. The learned weight
/// tensor has shape `[input_dim, task_dims...]`, and task `t`'s weight vector
/// is the mode-1 fiber at the task's multi-index.
#[derive(Clone, Debug)]
pub struct TaskSet {
    input_dim: usize,
    task_dims: Vec<usize>,
    tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(
        input_dim: usize,
        task_dims: Vec<usize>,
        tasks: Vec<Task>,
    ) -> Result<Self, MlmtlError> {
        if input_dim == 0 {
            return Err(MlmtlError::BadSpec("input dimension must be positive".into()));
        }
        let expected = check_dims(&task_dims)?;
        if tasks.len() != expected {
            return Err(MlmtlError::TaskCountMismatch {
                expected,
                got: tasks.len(),
            });
        }
        for (t, task) in tasks.iter().enumerate() {
            if task.features.cols() != input_dim {
                return Err(MlmtlError::FeatureDimMismatch {
                    task: t,
                    got: task.features.cols(),
                    want: input_dim,
                });
            }
            if task.features.rows() != task.targets.len() {
                return Err(MlmtlError::RowMismatch {
                    task: t,
                    rows: task.features.rows(),
                    targets: task.targets.len(),
                });
            }
        }
        Ok(TaskSet {
            input_dim,
            task_dims,
            tasks,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn task_dims(&self) -> &[usize] {
        &self.task_dims
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &Task {
        &self.tasks[t]
    }

    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(|t| t.samples()).sum()
    }

    /// Shape of the weight tensor: feature axis first, then the task grid.
    pub fn tensor_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(1 + self.task_dims.len());
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.task_dims);
        dims
    }
}

/// Per-task coefficient of a rank-one atom: the product of the task-axis
/// factor entries at task `t`'s multi-index. The atom's tensor restricted to
/// task `t` is `coefficient * factor_0`.
fn task_coefficient(atom: &RankOneAtom, task_dims: &[usize], t: usize, scratch: &mut [usize]) -> f64 {
    decompose_offset(task_dims, t, scratch);
    scratch
        .iter()
        .enumerate()
        .map(|(j, &idx)| atom.factor(j + 1)[idx])
        .product()
}

/// `D x T` matrix whose column `t` is the weight vector of task `t` implied
/// by a low-rank model, assembled term by term without densifying the model.
pub fn task_weight_matrix(
    model: &KruskalModel,
    input_dim: usize,
    task_dims: &[usize],
) -> Result<Mat, MlmtlError> {
    let mut want = vec![input_dim];
    want.extend_from_slice(task_dims);
    if model.dims() != want.as_slice() {
        return Err(MlmtlError::Tensor(TensorError::ShapeMismatch(format!(
            "model dims {:?}, task structure wants {:?}",
            model.dims(),
            want
        ))));
    }
    let t_count = task_dims.iter().product();
    let mut out = Mat::zeros(input_dim, t_count);
    let mut scratch = vec![0usize; task_dims.len()];
    for (w, atom) in model.weights().iter().zip(model.atoms()) {
        let x1 = atom.factor(0);
        for t in 0..t_count {
            let c = w * task_coefficient(atom, task_dims, t, &mut scratch);
            if c == 0.0 {
                continue;
            }
            for a in 0..input_dim {
                let cur = out.get(a, t);
                out.set(a, t, cur + c * x1[a]);
            }
        }
    }
    Ok(out)
}

/// Largest squared singular value of a feature matrix; exact via the small
/// Gram side where feasible, a certified upper bound otherwise (a larger
/// constant only shortens gradient steps, never breaks descent).
fn sigma1_sq(x: &Mat) -> f64 {
    if x.rows() == 0 || x.cols() == 0 {
        return 0.0;
    }
    if x.min_dim() <= 64 {
        jacobi_svd(&x.short_gram()).sigma[0]
    } else {
        let s = spectral_norm_upper(x);
        s * s
    }
}

/// The multitask objective. Residuals are laid out task-major (all samples of
/// task 0, then task 1, ...), each row weighted by `1/m_t` — or by the
/// weights of the original problem when this objective is a ridge
/// reformulation.
pub struct MlmtlObjective {
    tasks: TaskSet,
    loss: LossFunction,
    tensor_dims: Vec<usize>,
    targets: Vec<f64>,
    row_weights: Vec<f64>,
    /// Prefix sums: task `t` owns rows `row_offsets[t]..row_offsets[t+1]`.
    row_offsets: Vec<usize>,
    lipschitz: f64,
}

impl MlmtlObjective {
    pub fn new(tasks: TaskSet, loss: LossFunction) -> Result<Self, MlmtlError> {
        let weights: Vec<f64> = tasks
            .tasks()
            .iter()
            .map(|t| {
                if t.samples() > 0 {
                    1.0 / t.samples() as f64
                } else {
                    0.0
                }
            })
            .collect();
        Self::with_task_weights(tasks, loss, weights)
    }

    /// Builds with explicit per-task row weights; the ridge reformulation
    /// keeps the original `1/m_t` even though its transformed tasks all have
    /// `D` rows.
    fn with_task_weights(
        tasks: TaskSet,
        loss: LossFunction,
        task_weights: Vec<f64>,
    ) -> Result<Self, MlmtlError> {
        debug_assert_eq!(task_weights.len(), tasks.num_tasks());
        let total = tasks.total_samples();
        if total == 0 {
            return Err(MlmtlError::NoSamples);
        }
        let mut targets = Vec::with_capacity(total);
        let mut row_weights = Vec::with_capacity(total);
        let mut row_offsets = Vec::with_capacity(tasks.num_tasks() + 1);
        row_offsets.push(0);
        let mut lipschitz = 0.0f64;
        for (task, &w) in tasks.tasks().iter().zip(&task_weights) {
            targets.extend_from_slice(task.targets());
            row_weights.extend(std::iter::repeat(w).take(task.samples()));
            row_offsets.push(targets.len());
            if task.samples() > 0 {
                lipschitz = lipschitz.max(sigma1_sq(task.features()));
            }
        }
        let tensor_dims = tasks.tensor_dims();
        Ok(MlmtlObjective {
            tasks,
            loss,
            tensor_dims,
            targets,
            row_weights,
            row_offsets,
            lipschitz,
        })
    }

    pub fn tasks(&self) -> &TaskSet {
        &self.tasks
    }

    /// Rows belonging to task `t` in any residual-length slice.
    pub fn task_rows(&self, t: usize) -> std::ops::Range<usize> {
        self.row_offsets[t]..self.row_offsets[t + 1]
    }
}

impl Objective for MlmtlObjective {
    fn dims(&self) -> &[usize] {
        &self.tensor_dims
    }

    fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn loss(&self) -> &LossFunction {
        &self.loss
    }

    fn atom_image(&self, atom: &RankOneAtom) -> Vec<f64> {
        let x1 = atom.factor(0);
        let task_dims = self.tasks.task_dims();
        let mut out = Vec::with_capacity(self.targets.len());
        let mut scratch = vec![0usize; task_dims.len()];
        for (t, task) in self.tasks.tasks().iter().enumerate() {
            if task.samples() == 0 {
                continue;
            }
            let c = task_coefficient(atom, task_dims, t, &mut scratch);
            let xa = task.features().matvec(x1);
            out.extend(xa.into_iter().map(|v| c * v));
        }
        out
    }

    fn weighted_dot(&self, x: &[f64], y: &[f64]) -> f64 {
        let w = &self.row_weights;
        par::sum_chunked(x.len(), |s, e| {
            x[s..e]
                .iter()
                .zip(&y[s..e])
                .zip(&w[s..e])
                .map(|((a, b), c)| a * b * c)
                .sum()
        })
    }

    fn value_of_residual(&self, r: &[f64]) -> f64 {
        let w = &self.row_weights;
        par::sum_chunked(r.len(), |s, e| {
            r[s..e]
                .iter()
                .zip(&w[s..e])
                .map(|(t, c)| c * self.loss.eval(*t))
                .sum()
        })
    }

    fn gradient_coeffs(&self, r: &[f64]) -> Vec<f64> {
        let w = &self.row_weights;
        par::fill_indexed(r.len(), |i| w[i] * self.loss.derivative(r[i]))
    }

    fn adjoint(&self, coeffs: &[f64]) -> DenseTensor {
        let mut g = DenseTensor::zeros(&self.tensor_dims).expect("validated dims");
        let t_count = self.tasks.num_tasks();
        let data = g.data_mut();
        for (t, task) in self.tasks.tasks().iter().enumerate() {
            if task.samples() == 0 {
                continue;
            }
            let rows = self.task_rows(t);
            let col = task.features().tr_matvec(&coeffs[rows]);
            for (a, v) in col.into_iter().enumerate() {
                data[a * t_count + t] = v;
            }
        }
        g
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Output of [`build_ridge_reformulation`]: an objective whose plain value is
/// the transformed cost, plus the constant that separates it from the
/// original ridge-penalized cost (for the least squares loss,
/// `objective.value(W) + constant = F(W) + (lambda/2) sum_t ||w^t||^2 / m_t`).
pub struct RidgeReformulation {
    pub objective: MlmtlObjective,
    pub constant: f64,
    pub lambda: f64,
}

/// Folds a ridge penalty `(lambda/2) sum_t m_t^-1 ||w^t||^2` into the data:
/// each task's features become the symmetric PSD square root of
/// `X^T X + lambda I` and its targets become `Xhat^-1 X^T y`. Requires
/// `lambda > 0`, or `lambda = 0` with every nonempty task Gram positive
/// definite. Empty tasks stay empty (their contribution is zero either way).
pub fn build_ridge_reformulation(
    tasks: &TaskSet,
    lambda: f64,
    loss: LossFunction,
) -> Result<RidgeReformulation, MlmtlError> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(MlmtlError::BadSpec(format!(
            "ridge parameter must be nonnegative, got {lambda}"
        )));
    }
    let d = tasks.input_dim();
    let mut ridge_tasks = Vec::with_capacity(tasks.num_tasks());
    let mut weights = Vec::with_capacity(tasks.num_tasks());
    let mut constant = 0.0;
    for (t, task) in tasks.tasks().iter().enumerate() {
        let m_t = task.samples();
        if m_t == 0 {
            ridge_tasks.push(Task::new(Mat::zeros(0, d), Vec::new())?);
            weights.push(0.0);
            continue;
        }
        let x = task.features();
        // B = X^T X + lambda I, forced exactly symmetric.
        let mut b = x.transpose().matmul(x);
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (b.get(i, j) + b.get(j, i));
                b.set(i, j, s);
                b.set(j, i, s);
            }
            b.set(i, i, b.get(i, i) + lambda);
        }
        let eig = jacobi_svd(&b);
        let max_eig = eig.sigma.first().copied().unwrap_or(0.0);
        if lambda == 0.0 {
            let min_eig = eig.sigma.last().copied().unwrap_or(0.0);
            if max_eig <= 0.0 || min_eig < 1e-12 * max_eig {
                return Err(MlmtlError::SingularTaskGram { task: t });
            }
        }
        // Eigenvalues of B are >= lambda in exact arithmetic; flooring there
        // only repairs round-off and keeps the inverse square root finite.
        let floor = if lambda > 0.0 { lambda } else { 0.0 };
        let eigs: Vec<f64> = eig.sigma.iter().map(|&s| s.max(floor)).collect();
        let v = &eig.v;
        let mut xhat = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let mut s = 0.0;
                for (k, &e) in eigs.iter().enumerate() {
                    s += v.get(i, k) * e.sqrt() * v.get(j, k);
                }
                xhat.set(i, j, s);
                xhat.set(j, i, s);
            }
        }
        // z = V diag(1/sqrt(eig)) V^T X^T y
        let xty = x.tr_matvec(task.targets());
        let mut q = vec![0.0; d];
        for (k, qk) in q.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..d {
                s += v.get(i, k) * xty[i];
            }
            *qk = s;
        }
        let mut z = vec![0.0; d];
        for (i, zi) in z.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, &e) in eigs.iter().enumerate() {
                s += v.get(i, k) * q[k] / e.sqrt();
            }
            *zi = s;
        }
        let y_sq = par::sum_sq_seq(task.targets());
        let z_sq = par::sum_sq_seq(&z);
        constant += (y_sq - z_sq) / (2.0 * m_t as f64);
        ridge_tasks.push(Task::new(xhat, z)?);
        weights.push(1.0 / m_t as f64);
    }
    let ridge_set = TaskSet::new(d, tasks.task_dims().to_vec(), ridge_tasks)?;
    let objective = MlmtlObjective::with_task_weights(ridge_set, loss, weights)?;
    Ok(RidgeReformulation {
        objective,
        constant,
        lambda,
    })
}

/// Settings for the planted-model generator.
#[derive(Clone, Debug)]
pub struct MlmtlGenSpec {
    pub input_dim: usize,
    pub task_dims: Vec<usize>,
    /// Rank of the planted weight tensor.
    pub cp_rank: usize,
    pub samples_per_task: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Replaces the columns of a Gaussian draw by an orthonormal basis of their
/// span, scaled by `sqrt(rows)`, so that `X^T X = rows * I` whenever
/// `rows >= cols`. A raw Gaussian design at desk scale carries a condition
/// number of 5-10, which caps how far any greedy fit can drive the objective;
/// the orthogonal design keeps planted instances recoverable to machine
/// precision. With `rows < cols` that is impossible, so the raw draw is kept.
fn orthogonal_design(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let raw = standard_normal_vec(rng, rows * cols);
    if rows < cols {
        return Mat::from_vec(rows, cols, raw);
    }
    let mut columns: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| raw[r * cols + c]).collect())
        .collect();
    for j in 0..cols {
        // Two rounds of modified Gram-Schmidt keep the basis orthonormal to
        // machine precision even when the draw is poorly conditioned.
        for _ in 0..2 {
            for i in 0..j {
                let proj: f64 = columns[i]
                    .iter()
                    .zip(&columns[j])
                    .map(|(a, b)| a * b)
                    .sum();
                for r in 0..rows {
                    columns[j][r] -= proj * columns[i][r];
                }
            }
        }
        let norm = columns[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        // A Gaussian draw is full rank almost surely; if a column still
        // collapsed, fall back to a coordinate direction orthogonal to the
        // basis built so far (one must exist because j < rows).
        if norm > 1e-8 {
            for v in columns[j].iter_mut() {
                *v /= norm;
            }
        } else {
            for e in 0..rows {
                let mut candidate = vec![0.0; rows];
                candidate[e] = 1.0;
                for col in columns.iter().take(j) {
                    let proj = col[e];
                    for r in 0..rows {
                        candidate[r] -= proj * col[r];
                    }
                }
                let n = candidate.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.5 {
                    for v in candidate.iter_mut() {
                        *v /= n;
                    }
                    columns[j] = candidate;
                    break;
                }
            }
        }
    }
    let scale = (rows as f64).sqrt();
    let mut data = vec![0.0; rows * cols];
    for (c, col) in columns.iter().enumerate() {
        for r in 0..rows {
            data[r * cols + c] = scale * col[r];
        }
    }
    Mat::from_vec(rows, cols, data)
}

/// Plants a CP-rank-`cp_rank` weight tensor with i.i.d. standard normal
/// factors, draws a column-orthogonal feature design per task (see
/// [`orthogonal_design`]), and sets `y = X w + noise_sigma * eps`. With zero
/// noise the planted model attains objective zero. Deterministic in `seed`.
pub fn gen_mlmtl(spec: &MlmtlGenSpec) -> Result<(TaskSet, KruskalModel), MlmtlError> {
    if spec.input_dim == 0 || spec.cp_rank == 0 || spec.samples_per_task == 0 {
        return Err(MlmtlError::BadSpec(
            "input_dim, cp_rank and samples_per_task must be positive".into(),
        ));
    }
    if spec.noise_sigma < 0.0 {
        return Err(MlmtlError::BadSpec("noise_sigma must be nonnegative".into()));
    }
    let t_count = check_dims(&spec.task_dims)?;
    let mut dims = vec![spec.input_dim];
    dims.extend_from_slice(&spec.task_dims);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut truth = KruskalModel::new(&dims)?;
    for _ in 0..spec.cp_rank {
        let factors: Vec<Vec<f64>> = dims
            .iter()
            .map(|&n| standard_normal_vec(&mut rng, n))
            .collect();
        let (atom, scale) = RankOneAtom::normalized(factors)?;
        truth.push_term(scale, atom)?;
    }
    let w = task_weight_matrix(&truth, spec.input_dim, &spec.task_dims)?;
    let mut tasks = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let rows = spec.samples_per_task;
        let x = orthogonal_design(&mut rng, rows, spec.input_dim);
        let wt: Vec<f64> = (0..spec.input_dim).map(|a| w.get(a, t)).collect();
        let mut y = x.matvec(&wt);
        if spec.noise_sigma > 0.0 {
            for v in y.iter_mut() {
                let eps = standard_normal_vec(&mut rng, 1)[0];
                *v += spec.noise_sigma * eps;
            }
        }
        tasks.push(Task::new(x, y)?);
    }
    let set = TaskSet::new(spec.input_dim, spec.task_dims.clone(), tasks)?;
    Ok((set, truth))
}
