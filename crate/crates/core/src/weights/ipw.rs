//! Inverse-propensity weights: randomized-trial, known logistic parameter,
//! and ridge-logistic estimation under an L2 constraint.

use crate::data::{Dataset, WeightVector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{pgd, project_l2_ball, ConvexProblem, PgdOptions, SolveDiagnostics};
use ndarray::{Array1, Array2};

/// Exponent clamp for logistic/exponential evaluations; exceeding it means
/// the bounded-norm hypotheses are violated, so it is counted and surfaced.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone)]
pub enum IpwConfig {
    /// Known trial propensities for control and treatment.
    Randomized { p0: f64, p1: f64 },
    /// Known logistic regression parameter.
    KnownBeta(Array1<f64>),
    /// Estimate the logistic parameter over the L2 ball of `radius` with
    /// ridge coefficient `ridge`.
    Estimated { radius: f64, ridge: f64 },
}

/// Output of the estimated-propensity solver.
#[derive(Debug, Clone)]
pub struct IpwEstimate {
    pub weights: WeightVector,
    pub lambda_hat: Array1<f64>,
    pub diagnostics: SolveDiagnostics,
    /// Count of clamped exponents while forming the weights.
    pub clamped: usize,
}

/// Randomized-trial weights w_i = C / p_{a_i} with C = n / sum_j 1/p_{a_j}.
pub fn ipw_randomized(dataset: &Dataset, p0: f64, p1: f64) -> Result<WeightVector> {
    if !(0.0 < p0 && p0 < 1.0 && 0.0 < p1 && p1 < 1.0) {
        return Err(Error::invalid("trial propensities must lie in (0,1)"));
    }
    let raw: Vec<f64> = dataset
        .treatments()
        .iter()
        .map(|a| if *a == 1 { 1.0 / p1 } else { 1.0 / p0 })
        .collect();
    let c = dataset.n() as f64 / raw.iter().sum::<f64>();
    WeightVector::new(raw.into_iter().map(|w| c * w).collect())
}

fn normalized_inverse_logistic(dataset: &Dataset, lambda: &Array1<f64>) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let raw: Vec<f64> = (0..dataset.n())
        .map(|i| {
            let mut z = -dataset.covariate_row(i).dot(lambda);
            if z.abs() > EXP_CLAMP {
                clamped += 1;
                z = z.clamp(-EXP_CLAMP, EXP_CLAMP);
            }
            1.0 + z.exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let n = dataset.n() as f64;
    (raw.into_iter().map(|w| n * w / total).collect(), clamped)
}

/// Weights w_i = n (1 + exp(-<x_i, lambda>)) / sum_j (1 + exp(-<x_j, lambda>))
/// for a known logistic parameter. Returns the clamped-exponent count.
pub fn ipw_known_beta(dataset: &Dataset, lambda_star: &Array1<f64>) -> Result<(WeightVector, usize)> {
    if lambda_star.len() != dataset.p() {
        return Err(Error::invalid(format!(
            "lambda* has dimension {}, covariates have p={}",
            lambda_star.len(),
            dataset.p()
        )));
    }
    let (weights, clamped) = normalized_inverse_logistic(dataset, lambda_star);
    Ok((WeightVector::new(weights)?, clamped))
}

/// Negative log-likelihood of treatments under the logistic model, averaged
/// over the sample: (1/n) sum log(1 + exp(<x_i, lambda>)) - a_i <x_i, lambda>
/// with a_i in {0,1}. Returns the value and exact gradient.
pub fn logistic_nll(dataset: &Dataset, lambda: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = dataset.n() as f64;
    let groups = dataset.groups01();
    let mut value = 0.0;
    let mut grad = Array1::zeros(lambda.len());
    for i in 0..dataset.n() {
        let x = dataset.covariate_row(i);
        let z: f64 = x.dot(lambda);
        let a = groups[i] as f64;
        // log(1 + e^z) = max(z, 0) + log1p(e^{-|z|}), stable for large |z|.
        value += z.max(0.0) + (-z.abs()).exp().ln_1p() - a * z;
        let sigma = 1.0 / (1.0 + (-z).exp());
        grad.scaled_add(sigma - a, &x);
    }
    (value / n, grad / n)
}

/// Fit the propensity model by projected gradient descent over the L2 ball,
/// then form the normalized inverse-propensity weights. Returns the fitted
/// parameter for diagnostics.
pub fn ipw_estimated(
    dataset: &Dataset,
    radius: f64,
    ridge: f64,
    opts: &PgdOptions,
) -> Result<IpwEstimate> {
    if radius <= 0.0 {
        return Err(Error::invalid("ipw radius must be positive"));
    }
    if ridge < 0.0 {
        return Err(Error::invalid("ipw ridge must be nonnegative"));
    }
    dataset.require_both_arms()?;
    let p = dataset.p();
    // Smoothness: the logistic Hessian is bounded by (1/4n) sum x x^T.
    let n = dataset.n() as f64;
    let mut second_moment = Array2::zeros((p, p));
    for i in 0..dataset.n() {
        let x = dataset.covariate_row(i);
        for r in 0..p {
            for c in 0..p {
                second_moment[[r, c]] += x[r] * x[c] / n;
            }
        }
    }
    let smoothness = linalg::lambda_max(&second_moment) / 4.0 + ridge;

    let objective = |lambda: &Array1<f64>| {
        let (nll, mut grad) = logistic_nll(dataset, lambda);
        grad.scaled_add(ridge, lambda);
        (nll + 0.5 * ridge * lambda.dot(lambda), grad)
    };
    let problem = ConvexProblem {
        dim: p,
        objective: Box::new(objective),
        projection: Box::new(move |x: Array1<f64>| project_l2_ball(&x, radius)),
        smoothness: Some(smoothness.max(1e-12)),
    };
    let (lambda_hat, diagnostics) = pgd(&problem, Array1::zeros(p), opts)?;
    if !diagnostics.converged {
        return Err(Error::SolverFailure {
            context: "ipw logistic regression".to_string(),
            diagnostics,
        });
    }
    let (weights, clamped) = normalized_inverse_logistic(dataset, &lambda_hat);
    Ok(IpwEstimate { weights: WeightVector::new(weights)?, lambda_hat, diagnostics, clamped })
}
