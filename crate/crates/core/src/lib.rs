//! Greedy rank-one pursuit for low-rank tensor learning.
//!
//! The library fits a low CP-rank tensor to indirect measurements by
//! repeatedly extracting an approximate best rank-one direction of the
//! negated gradient and updating term weights. Two problem families are
//! built in: tensor completion from sparse observations and multilinear
//! multitask regression, both under a family of robust losses.
//!
//! Module map:
//! - [`tensor`]: dense tensors, unfoldings, rank-one atoms, Kruskal models
//! - [`mat`]: small dense matrices, Jacobi SVD, spectral norm bounds
//! - [`loss`]: robust entrywise losses and their derivative structure
//! - [`spectral`]: approximate dominant rank-one extraction
//! - [`solver`]: the pursuit loop and its four weight-update strategies
//! - [`completion`], [`mlmtl`]: the two objectives and their generators
//! - [`oracle`]: slow, independent reference computations used by tests and
//!   exposed for debugging
//! - [`io`]: text formats for tensors, models, observations and traces
//! - [`par`]: deterministic data-parallel helpers (feature `parallel`)

pub mod completion;
pub mod io;
pub mod loss;
pub mod mat;
pub mod mlmtl;
pub mod oracle;
pub mod par;
mod rng;
pub mod solver;
pub mod spectral;
pub mod tensor;

pub use loss::LossFunction;
pub use solver::{fit, FitResult, FitTrace, SolverConfig, Strategy};
pub use spectral::{select_atom, PowerIterConfig, SpectralResult};
pub use tensor::{contract_rank_one, DenseTensor, KruskalModel, RankOneAtom};
