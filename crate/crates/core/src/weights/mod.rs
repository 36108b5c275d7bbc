//! Stage-1 covariate-balancing weight solvers.
//!
//! Three families, all producing a [`WeightVector`] on the scaled simplex
//! (nonnegative, sum n):
//!
//! - inverse-propensity weights, from known trial propensities, a known
//!   logistic parameter, or a parameter estimated by constrained ridge
//!   logistic regression ([`ipw`]);
//! - kernel maximum-mean-discrepancy weights, a capped quadratic program
//!   balancing each arm against the pooled sample ([`mmd`]);
//! - entropy balancing weights, the KL-closest weights satisfying group
//!   moment constraints, computed through their convex dual ([`ebw`]).

pub mod ebw;
pub mod ipw;
pub mod mmd;

pub use ebw::{ebw_dual_objective, ebw_weights, DualNorm, EbwConfig, EbwProblem, EbwSolution, Moments};
pub use ipw::{
    ipw_estimated, ipw_known_beta, ipw_randomized, logistic_nll, IpwConfig, IpwEstimate,
};
pub use mmd::{mmd_kernel_matrices, mmd_weights, KernelSpec, MmdConfig, MmdSolution, MmdSystem};

use crate::data::{Dataset, WeightVector};
use crate::error::Result;
use crate::optim::PgdOptions;

/// A weighting scheme with everything needed to solve it on a dataset.
#[derive(Debug, Clone)]
pub enum SchemeConfig {
    Ipw(IpwConfig),
    Mmd(MmdConfig),
    Ebw(EbwConfig),
}

impl SchemeConfig {
    /// Solve the scheme's stage-1 problem.
    pub fn solve(&self, dataset: &Dataset, opts: &PgdOptions) -> Result<WeightVector> {
        match self {
            SchemeConfig::Ipw(cfg) => match cfg {
                IpwConfig::Randomized { p0, p1 } => ipw_randomized(dataset, *p0, *p1),
                IpwConfig::KnownBeta(lambda) => Ok(ipw_known_beta(dataset, lambda)?.0),
                IpwConfig::Estimated { radius, ridge } => {
                    Ok(ipw_estimated(dataset, *radius, *ridge, opts)?.weights)
                }
            },
            SchemeConfig::Mmd(cfg) => Ok(mmd_weights(dataset, cfg, opts)?.weights),
            SchemeConfig::Ebw(cfg) => Ok(ebw_weights(dataset, cfg, opts)?.weights),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeConfig::Ipw(_) => "ipw",
            SchemeConfig::Mmd(_) => "mmd",
            SchemeConfig::Ebw(_) => "ebw",
        }
    }
}
