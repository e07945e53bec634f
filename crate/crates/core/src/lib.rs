//! Construction and benchmarking of low-coherence, column-regular binary
//! sensing matrices.
//!
//! Each column of the relaxed problem lives on `ES_m`, the intersection of the
//! probability simplex with the sphere of squared radius `1/r`. A smooth-max of
//! the pairwise column inner products is minimised by Riemannian gradient
//! descent with Armijo backtracking on the product manifold `ES_m^n`; the
//! result is binarised by keeping the `r` largest entries of every column.
//!
//! Baselines (DeVore's polynomial construction, random column-regular binary
//! matrices) and an OMP recovery benchmark are included for comparison.

pub mod baselines;
pub mod binary;
pub mod error;
pub mod harness;
pub mod manifold;
pub mod objective;
pub mod optimizer;
pub mod recovery;
pub mod seed;

pub use baselines::{devore_matrix, random_binary_matrix, DeVoreParams};
pub use binary::{
    binarize, coherence, construct, construct_with_retries, top_r_support, welch_bound,
    BinaryMatrix, CoherenceReport, Construction,
};
pub use error::{Error, Result};
pub use manifold::{
    project_to_tangent, random_matrix, random_point, retract, RelaxedColumn, RelaxedMatrix,
    TangentVector,
};
pub use objective::{
    euclidean_gradient, gram_offdiag, objective, riemannian_gradient, smooth_max,
    GramOffDiagonal, ObjectiveParams,
};
pub use optimizer::{
    armijo_search, optimize, optimize_observed, IterationRecord, IterationTrace, LineSearchOutcome, OptimizeFailure,
    OptimizeStatus, OptimizerConfig,
};
pub use recovery::{
    gen_sparse_signal, measure, omp, run_experiment, OmpResult, RecoveryCell, RecoveryReport,
    SensingOperator, SparseSignal, TrialResult,
};
