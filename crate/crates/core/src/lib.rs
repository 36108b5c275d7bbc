//! Two-stage weighted empirical risk minimization with end-to-end
//! differential privacy, for learning linear individualized treatment rules.
//!
//! Stage 1 computes covariate-balancing sample weights (inverse-propensity,
//! kernel MMD, or entropy balancing). Stage 2 solves a weighted ERM whose
//! objective is perturbed with calibrated Gamma or Gaussian noise plus an L2
//! ridge, sized from deterministic stability bounds on the weights so that
//! the released parameter satisfies (epsilon, delta)-differential privacy
//! without privatizing the weights themselves.
//!
//! The crate ships the weight solvers, the per-scheme stability bounds and
//! budget composition, noise calibration and samplers, the perturbed ERM
//! solver, synthetic data generators, and a reproducible experiment harness;
//! the `dp2erm` binary exposes all of it on the command line.

pub mod bench;
pub mod data;
pub mod erm;
pub mod error;
pub mod itr;
pub mod linalg;
pub mod optim;
pub mod privacy;
pub mod simgen;
pub mod stability;
pub mod weights;

pub use data::{
    make_neighbor, read_dataset_csv, validate, Dataset, EvalData, NeighborPair, ProblemConstants,
    Record, ValidationReport, WeightVector,
};
pub use error::{Error, Result};
pub use optim::{
    finite_diff_gradient, pgd, project_capped_simplex, project_l1_ball, project_l2_ball,
    ConvexProblem, PgdOptions, SolveDiagnostics,
};
