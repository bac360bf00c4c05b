//! Greedy pursuit driver.
//!
//! [`fit`] builds a low-rank model one rank-one term at a time: compute the
//! gradient of the objective, pick the atom best aligned with its negation
//! via [`select_atom`], and fold the atom into the model with one of four
//! update strategies:
//!
//! * `homp-ls` — closed-form step size for the new atom only,
//! * `hormp-ls` — one common rescale of everything built so far plus a step
//!   size for the new atom (a 2x2 system),
//! * `hoomp-ls` — full refit of all term weights by regularized normal
//!   equations, falling back to a plain append if that refit does not pay,
//! * `homp-g` — gradient step `<-grad, atom> / L`, the only strategy that is
//!   aware of non-quadratic losses.
//!
//! The `-ls` strategies solve least-squares subproblems; with a different
//! loss on the objective they still run but optimize the quadratic surrogate.

use crate::loss::LossFunction;
use crate::mat::spectral_norm_upper;
use crate::par;
use crate::spectral::{select_atom, PowerIterConfig, SpectralError};
use crate::tensor::{DenseTensor, KruskalModel, RankOneAtom, TensorError};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

/// A separable objective `F(W) = sum_i w_i loss(r_i)` over residuals
/// `r = A(W) - b` of a linear measurement `A`.
///
/// Implementations supply the measurement of a single rank-one atom and the
/// weighted reductions; residuals, values and gradients of full models are
/// derived from those. All slice arguments are indexed consistently with
/// [`Objective::targets`].
pub trait Objective: Sync {
    /// Shape of the tensor variable being learned.
    fn dims(&self) -> &[usize];
    /// Measurement targets `b`.
    fn targets(&self) -> &[f64];
    fn loss(&self) -> &LossFunction;
    /// `A(atom)`: measurement image of one rank-one atom.
    fn atom_image(&self, atom: &RankOneAtom) -> Vec<f64>;
    /// `sum_i w_i x_i y_i`.
    fn weighted_dot(&self, x: &[f64], y: &[f64]) -> f64;
    /// `sum_i w_i loss(r_i)`.
    fn value_of_residual(&self, r: &[f64]) -> f64;
    /// `c_i = w_i loss'(r_i)` — the residual-space gradient coefficients.
    fn gradient_coeffs(&self, r: &[f64]) -> Vec<f64>;
    /// `A*(c)`: adjoint of the measurement, a dense tensor of shape
    /// [`Objective::dims`].
    fn adjoint(&self, coeffs: &[f64]) -> DenseTensor;
    /// Upper bound on the Lipschitz constant of the gradient, used by the
    /// `homp-g` step size.
    fn lipschitz(&self) -> f64;

    fn num_residuals(&self) -> usize {
        self.targets().len()
    }

    fn residual(&self, model: &KruskalModel) -> Vec<f64> {
        let mut r: Vec<f64> = self.targets().iter().map(|b| -b).collect();
        for (w, atom) in model.weights().iter().zip(model.atoms()) {
            let img = self.atom_image(atom);
            for (ri, ii) in r.iter_mut().zip(&img) {
                *ri += w * ii;
            }
        }
        r
    }

    fn value(&self, model: &KruskalModel) -> f64 {
        self.value_of_residual(&self.residual(model))
    }

    fn gradient(&self, model: &KruskalModel) -> DenseTensor {
        let r = self.residual(model);
        self.adjoint(&self.gradient_coeffs(&r))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Matching pursuit: closed-form weight for the newest atom.
    HompLs,
    /// Rescaled pursuit: one scale for the old model, one for the new atom.
    HormpLs,
    /// Orthogonal pursuit: refit every weight after each new atom.
    HoompLs,
    /// Gradient pursuit: `<-grad, atom> / L` step, loss-aware.
    HompG,
}

impl Strategy {
    pub fn all() -> [Strategy; 4] {
        [
            Strategy::HompLs,
            Strategy::HormpLs,
            Strategy::HoompLs,
            Strategy::HompG,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::HompLs => "homp-ls",
            Strategy::HormpLs => "hormp-ls",
            Strategy::HoompLs => "hoomp-ls",
            Strategy::HompG => "homp-g",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown strategy '{0}' (expected homp-ls, hormp-ls, hoomp-ls or homp-g)")]
pub struct ParseStrategyError(String);

impl FromStr for Strategy {
    type Err = ParseStrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "homp-ls" => Ok(Strategy::HompLs),
            "hormp-ls" => Ok(Strategy::HormpLs),
            "hoomp-ls" => Ok(Strategy::HoompLs),
            "homp-g" => Ok(Strategy::HompG),
            other => Err(ParseStrategyError(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("atom selection failed: {0}")]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    /// The selected atom's measurement image is identically zero, so no step
    /// size can change the residual.
    #[error("selected atom is invisible to the measurements")]
    InvisibleAtom,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    /// The gradient strategy divides by the objective's Lipschitz bound.
    #[error("objective reports a nonpositive Lipschitz bound")]
    NonpositiveLipschitz,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub strategy: Strategy,
    /// Maximum number of rank-one terms (pursuit iterations).
    pub max_terms: usize,
    /// Stop once the objective falls to this value; `0` disables the check.
    pub stop_tol: f64,
    pub power: PowerIterConfig,
    /// Block update sweeps applied to each selected atom.
    pub bcu_sweeps: usize,
    /// Consecutive iterations with relative decrease below
    /// `stagnation_rel_decrease` before giving up.
    pub stagnation_window: usize,
    pub stagnation_rel_decrease: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategy: Strategy::HompLs,
            max_terms: 500,
            stop_tol: 1e-5,
            power: PowerIterConfig::default(),
            bcu_sweeps: 1,
            stagnation_window: 5,
            stagnation_rel_decrease: 1e-14,
        }
    }
}

/// One row of the convergence trace. `k = 0` is the empty-model baseline;
/// rows `k >= 1` describe the state after the k-th term was added.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub k: usize,
    pub objective: f64,
    /// Contraction of the selected atom with the negated gradient.
    pub atom_value: f64,
    /// Certified upper estimate of the `{1,2} x {rest}` unfolding of the
    /// gradient (Frobenius norm for order < 3).
    pub grad12_norm_est: f64,
    /// `atom_value / grad12_norm_est`: the realized selection quality.
    pub ratio: f64,
    /// Wall clock since the start of the fit.
    pub elapsed_ms: f64,
    /// Term weights after this iteration (the full-refit strategy rewrites
    /// all of them, the others append one).
    pub weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Budget of rank-one terms exhausted.
    MaxTerms,
    /// Objective fell below the configured tolerance.
    ToleranceReached,
    /// No meaningful decrease for a full stagnation window.
    Stagnated,
    /// The gradient vanished: a stationary point of the objective.
    ZeroGradient,
    /// Atom selection kept producing atoms invisible to the measurements.
    DegenerateAtom,
}

#[derive(Clone, Debug)]
pub struct FitTrace {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl FitTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: KruskalModel,
    pub trace: FitTrace,
}

/// Mutable pursuit state: the model under construction, its residual, and
/// (for the full-refit strategy) cached atom images with their Gram system.
///
/// Public so tests can drive strategies in lockstep: clone one state, hand
/// each clone the *same* atom through [`PursuitState::apply_step`] with a
/// different strategy, and compare the resulting objectives on equal terms.
pub struct PursuitState<'a, O: Objective + ?Sized> {
    obj: &'a O,
    model: KruskalModel,
    residual: Vec<f64>,
    objective: f64,
    cache_active: bool,
    images: Vec<Vec<f64>>,
    /// Row-major `k x k` weighted Gram of the cached images.
    gram: Vec<f64>,
    /// Weighted inner products `<image_i, b>`.
    rhs: Vec<f64>,
}

impl<O: Objective + ?Sized> Clone for PursuitState<'_, O> {
    fn clone(&self) -> Self {
        PursuitState {
            obj: self.obj,
            model: self.model.clone(),
            residual: self.residual.clone(),
            objective: self.objective,
            cache_active: self.cache_active,
            images: self.images.clone(),
            gram: self.gram.clone(),
            rhs: self.rhs.clone(),
        }
    }
}

impl<'a, O: Objective + ?Sized> PursuitState<'a, O> {
    pub fn new(obj: &'a O) -> Result<Self, SolveError> {
        let model = KruskalModel::new(obj.dims())?;
        let residual: Vec<f64> = obj.targets().iter().map(|b| -b).collect();
        let objective = obj.value_of_residual(&residual);
        Ok(PursuitState {
            obj,
            model,
            residual,
            objective,
            cache_active: false,
            images: Vec::new(),
            gram: Vec::new(),
            rhs: Vec::new(),
        })
    }

    pub fn model(&self) -> &KruskalModel {
        &self.model
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn into_model(self) -> KruskalModel {
        self.model
    }

    /// One pursuit step: fold `atom` into the model under `strategy`.
    /// The caller chooses the atom (usually from the negated gradient).
    pub fn apply_step(&mut self, strategy: Strategy, atom: &RankOneAtom) -> Result<(), SolveError> {
        let img = self.obj.atom_image(atom);
        let gg = self.obj.weighted_dot(&img, &img);
        if !(gg > 0.0) {
            return Err(SolveError::InvisibleAtom);
        }
        match strategy {
            Strategy::HompLs => self.step_matching(atom, img, gg),
            Strategy::HormpLs => self.step_rescaled(atom, img, gg),
            Strategy::HoompLs => self.step_full_refit(atom, img),
            Strategy::HompG => self.step_gradient(atom, img),
        }
    }

    fn step_matching(&mut self, atom: &RankOneAtom, img: Vec<f64>, gg: f64) -> Result<(), SolveError> {
        let alpha = -self.obj.weighted_dot(&self.residual, &img) / gg;
        self.model.push_term(alpha, atom.clone())?;
        for (r, i) in self.residual.iter_mut().zip(&img) {
            *r += alpha * i;
        }
        self.push_image_if_cached(img);
        self.objective = self.obj.value_of_residual(&self.residual);
        Ok(())
    }

    fn step_rescaled(&mut self, atom: &RankOneAtom, img: Vec<f64>, gg: f64) -> Result<(), SolveError> {
        if self.model.is_empty() {
            return self.step_matching(atom, img, gg);
        }
        let b = self.obj.targets();
        // Model image u = A(W) = r + b; solve the 2x2 least squares system in
        // (scale of u, weight of the new atom).
        let u: Vec<f64> = self.residual.iter().zip(b).map(|(r, bi)| r + bi).collect();
        let g11 = self.obj.weighted_dot(&u, &u);
        let g12 = self.obj.weighted_dot(&u, &img);
        let det = g11 * gg - g12 * g12;
        if !(det > 1e-14 * g11 * gg) {
            // Collinear with the current model (or the model image vanished):
            // the rescale is ill-posed, a plain append is the right move.
            return self.step_matching(atom, img, gg);
        }
        let b1 = self.obj.weighted_dot(&u, b);
        let b2 = self.obj.weighted_dot(&img, b);
        let a1 = (b1 * gg - b2 * g12) / det;
        let a2 = (g11 * b2 - g12 * b1) / det;
        self.model.scale_weights(a1);
        self.model.push_term(a2, atom.clone())?;
        for i in 0..self.residual.len() {
            self.residual[i] = a1 * u[i] + a2 * img[i] - b[i];
        }
        self.push_image_if_cached(img);
        self.objective = self.obj.value_of_residual(&self.residual);
        Ok(())
    }

    fn step_full_refit(&mut self, atom: &RankOneAtom, img: Vec<f64>) -> Result<(), SolveError> {
        self.ensure_cache();
        self.model.push_term(0.0, atom.clone())?;
        self.push_image(img);
        let k = self.images.len();
        let trace: f64 = (0..k).map(|i| self.gram[i * k + i]).sum();
        // Tiny ridge proportional to the mean diagonal keeps the normal
        // equations solvable once atoms start to correlate.
        let mut ridge = 1e-12 * trace / k as f64;
        let mut refit = None;
        for _ in 0..3 {
            if let Some(w) = chol_solve(&self.gram, k, ridge, &self.rhs) {
                refit = Some(w);
                break;
            }
            ridge *= 10.0;
        }
        // Fallback candidate: keep the old weights, give the new atom its
        // plain matching-pursuit weight. Guaranteed not to increase the
        // (least squares) objective, which makes the whole step monotone even
        // when the refit misbehaves numerically.
        let gg = self.gram[(k - 1) * k + (k - 1)];
        let alpha_mp = -self.obj.weighted_dot(&self.residual, self.images.last().expect("just pushed")) / gg;
        let mut fb_weights = self.model.weights().to_vec();
        fb_weights[k - 1] = alpha_mp;
        let (fb_residual, fb_obj) = self.residual_for_weights(&fb_weights);
        let chosen = match refit {
            Some(weights) => {
                let (res, obj) = self.residual_for_weights(&weights);
                if obj <= fb_obj {
                    (weights, res, obj)
                } else {
                    (fb_weights, fb_residual, fb_obj)
                }
            }
            None => (fb_weights, fb_residual, fb_obj),
        };
        self.model.set_weights(chosen.0);
        self.residual = chosen.1;
        self.objective = chosen.2;
        Ok(())
    }

    fn step_gradient(&mut self, atom: &RankOneAtom, img: Vec<f64>) -> Result<(), SolveError> {
        let lipschitz = self.obj.lipschitz();
        if !(lipschitz > 0.0) {
            return Err(SolveError::NonpositiveLipschitz);
        }
        let coeffs = self.obj.gradient_coeffs(&self.residual);
        // coeffs already carry the weights, so this is <grad F, atom>.
        let slope = par::dot(&coeffs, &img);
        let alpha = -slope / lipschitz;
        self.model.push_term(alpha, atom.clone())?;
        for (r, i) in self.residual.iter_mut().zip(&img) {
            *r += alpha * i;
        }
        self.push_image_if_cached(img);
        self.objective = self.obj.value_of_residual(&self.residual);
        Ok(())
    }

    /// Residual and objective for a candidate weight vector over the cached
    /// images, rebuilt from scratch (which also keeps drift out of the
    /// full-refit path).
    fn residual_for_weights(&self, weights: &[f64]) -> (Vec<f64>, f64) {
        let mut r: Vec<f64> = self.obj.targets().iter().map(|b| -b).collect();
        for (w, img) in weights.iter().zip(&self.images) {
            for (ri, ii) in r.iter_mut().zip(img) {
                *ri += w * ii;
            }
        }
        let obj = self.obj.value_of_residual(&r);
        (r, obj)
    }

    fn ensure_cache(&mut self) {
        if self.cache_active && self.images.len() == self.model.num_terms() {
            return;
        }
        self.images.clear();
        self.gram.clear();
        self.rhs.clear();
        self.cache_active = true;
        let images: Vec<Vec<f64>> = self
            .model
            .atoms()
            .iter()
            .map(|a| self.obj.atom_image(a))
            .collect();
        for img in images {
            self.push_image(img);
        }
    }

    fn push_image_if_cached(&mut self, img: Vec<f64>) {
        if self.cache_active {
            self.push_image(img);
        }
    }

    fn push_image(&mut self, img: Vec<f64>) {
        let k = self.images.len();
        let mut g = vec![0.0; (k + 1) * (k + 1)];
        for i in 0..k {
            for j in 0..k {
                g[i * (k + 1) + j] = self.gram[i * k + j];
            }
        }
        for i in 0..k {
            let v = self.obj.weighted_dot(&self.images[i], &img);
            g[i * (k + 1) + k] = v;
            g[k * (k + 1) + i] = v;
        }
        g[k * (k + 1) + k] = self.obj.weighted_dot(&img, &img);
        self.gram = g;
        self.rhs.push(self.obj.weighted_dot(&img, self.obj.targets()));
        self.images.push(img);
    }
}

/// Solves `(G + ridge I) x = rhs` for a symmetric positive definite `G`
/// (row-major `k x k`) by Cholesky. `None` if a pivot is not positive.
fn chol_solve(gram: &[f64], k: usize, ridge: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = gram[i * k + j];
            if i == j {
                s += ridge;
            }
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = rhs[i];
        for p in 0..i {
            s -= l[i * k + p] * y[p];
        }
        y[i] = s / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for p in i + 1..k {
            s -= l[p * k + i] * x[p];
        }
        x[i] = s / l[i * k + i];
    }
    Some(x)
}

/// Certified upper estimate of the spectral norm of the `{1,2} x {rest}`
/// unfolding of a tensor; Frobenius norm when the order is below 3 and that
/// unfolding does not exist.
pub fn gradient_block_norm_est(g: &DenseTensor) -> f64 {
    if g.order() >= 3 {
        let col_modes: Vec<usize> = (2..g.order()).collect();
        let m = g
            .unfold_pq(&[0, 1], &col_modes)
            .expect("modes {0,1} x {2..} partition the order >= 3 tensor");
        spectral_norm_upper(&m)
    } else {
        g.frob_norm()
    }
}

pub fn fit<O: Objective + ?Sized>(obj: &O, cfg: &SolverConfig) -> Result<FitResult, SolveError> {
    fit_with_inspect(obj, cfg, |_, _| {})
}

/// [`fit`] with a callback invoked after every recorded iteration (including
/// the `k = 0` baseline) with the current model and trace row. Tests use it
/// to check invariants at every iterate without re-running the solver.
pub fn fit_with_inspect<O, F>(obj: &O, cfg: &SolverConfig, mut inspect: F) -> Result<FitResult, SolveError>
where
    O: Objective + ?Sized,
    F: FnMut(&KruskalModel, &IterationRecord),
{
    if cfg.max_terms == 0 {
        return Err(SolveError::InvalidConfig(
            "max_terms must be at least 1".to_string(),
        ));
    }
    let start = Instant::now();
    let mut state = PursuitState::new(obj)?;
    let mut records = Vec::with_capacity(cfg.max_terms + 1);
    let baseline = IterationRecord {
        k: 0,
        objective: state.objective(),
        atom_value: 0.0,
        grad12_norm_est: 0.0,
        ratio: 0.0,
        elapsed_ms: elapsed_ms(&start),
        weights: Vec::new(),
    };
    inspect(state.model(), &baseline);
    records.push(baseline);
    let mut stop = StopReason::MaxTerms;
    let mut stagnant = 0usize;
    for k in 1..=cfg.max_terms {
        if cfg.stop_tol > 0.0 && state.objective() <= cfg.stop_tol {
            stop = StopReason::ToleranceReached;
            break;
        }
        let coeffs = obj.gradient_coeffs(state.residual());
        let mut direction = obj.adjoint(&coeffs);
        if direction.frob_norm() == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }
        let grad12 = gradient_block_norm_est(&direction);
        direction.scale(-1.0);
        let prev_objective = state.objective();
        let selected = select_atom(&direction, &cfg.power, cfg.bcu_sweeps)?;
        let applied = match state.apply_step(cfg.strategy, &selected.atom) {
            Ok(()) => Some(selected),
            Err(SolveError::InvisibleAtom) => {
                // One retry from a fresh power start; a second invisible atom
                // means the measurements genuinely cannot see this gradient.
                let mut reseeded = cfg.power;
                reseeded.seed = reseeded.seed.wrapping_add(0x9e37_79b9);
                let second = select_atom(&direction, &reseeded, cfg.bcu_sweeps)?;
                match state.apply_step(cfg.strategy, &second.atom) {
                    Ok(()) => Some(second),
                    Err(SolveError::InvisibleAtom) => None,
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        let Some(selected) = applied else {
            stop = StopReason::DegenerateAtom;
            break;
        };
        let record = IterationRecord {
            k,
            objective: state.objective(),
            atom_value: selected.value,
            grad12_norm_est: grad12,
            ratio: if grad12 > 0.0 { selected.value / grad12 } else { 0.0 },
            elapsed_ms: elapsed_ms(&start),
            weights: state.model().weights().to_vec(),
        };
        inspect(state.model(), &record);
        records.push(record);
        let rel = if prev_objective > 0.0 {
            (prev_objective - state.objective()) / prev_objective
        } else {
            0.0
        };
        if rel < cfg.stagnation_rel_decrease {
            stagnant += 1;
            if stagnant >= cfg.stagnation_window {
                stop = StopReason::Stagnated;
                break;
            }
        } else {
            stagnant = 0;
        }
    }
    Ok(FitResult {
        model: state.into_model(),
        trace: FitTrace { records, stop },
    })
}

fn elapsed_ms(start: &Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
