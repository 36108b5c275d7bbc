//! Noise samplers for objective perturbation and the calibration that turns
//! (epsilon, delta, loss constants, stability budget) into the minimal noise
//! scale and ridge coefficient guaranteeing end-to-end privacy.
//!
//! Calibration is at equality: for the Gamma mechanism 1/beta = 2 zeta W1 /
//! epsilon and gamma = 2 lambda W2 / (epsilon n); for the Gaussian mechanism
//! sigma = (zeta/epsilon)(L + sqrt(L^2 + epsilon/3n)) W1 with
//! L = sqrt((sqrt(p) + sqrt(log 1/delta))^2 + log 1/delta), same gamma.
//! epsilon = infinity is the non-private sentinel: zero noise, zero ridge.

use crate::data::ProblemConstants;
use crate::error::{Error, Result};
use crate::stability::StabilityBudget;
use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    /// Density proportional to exp(-beta ||b||): pure epsilon-DP.
    Gamma,
    /// Isotropic normal: (epsilon, delta)-DP.
    Gaussian,
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Gamma => "gamma",
            Mechanism::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Mechanism::Gamma),
            "gaussian" => Ok(Mechanism::Gaussian),
            other => Err(Error::invalid(format!(
                "unknown mechanism `{other}` (expected gamma or gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub mechanism: Mechanism,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, mechanism: Mechanism) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive (or infinite)"));
        }
        match mechanism {
            Mechanism::Gamma => {
                if delta != 0.0 {
                    return Err(Error::invalid("gamma mechanism requires delta = 0"));
                }
            }
            Mechanism::Gaussian => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::invalid("gaussian mechanism requires delta in (0,1)"));
                }
            }
        }
        Ok(Self { epsilon, delta, mechanism })
    }

    pub fn non_private(&self) -> bool {
        self.epsilon.is_infinite()
    }
}

/// Inputs echoed into the calibration so result rows are self-describing.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationInputs {
    pub epsilon: f64,
    pub delta: f64,
    pub grad_bound: f64,
    pub hessian_trace_bound: f64,
    pub w1_bar: f64,
    pub w2_bar: f64,
    pub n: usize,
    pub p: usize,
}

/// Minimal noise scale (1/beta for Gamma, sigma for Gaussian) and ridge
/// meeting the privacy inequalities with equality.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub mechanism: Mechanism,
    pub noise_scale: f64,
    pub gamma_ridge: f64,
    pub inputs: CalibrationInputs,
}

pub fn calibrate(
    privacy: &PrivacyParams,
    constants: &ProblemConstants,
    budget: &StabilityBudget,
    n: usize,
    p: usize,
) -> Result<Calibration> {
    if !(budget.w1_bar > 0.0 && budget.w2_bar > 0.0)
        || !budget.w1_bar.is_finite()
        || !budget.w2_bar.is_finite()
    {
        return Err(Error::invalid("stability budget must be positive and finite"));
    }
    if n == 0 || p == 0 {
        return Err(Error::invalid("calibration needs n >= 1 and p >= 1"));
    }
    let inputs = CalibrationInputs {
        epsilon: privacy.epsilon,
        delta: privacy.delta,
        grad_bound: constants.grad_bound,
        hessian_trace_bound: constants.hessian_trace_bound,
        w1_bar: budget.w1_bar,
        w2_bar: budget.w2_bar,
        n,
        p,
    };
    if privacy.non_private() {
        return Ok(Calibration {
            mechanism: privacy.mechanism,
            noise_scale: 0.0,
            gamma_ridge: 0.0,
            inputs,
        });
    }
    let eps = privacy.epsilon;
    let zeta = constants.grad_bound;
    let lam = constants.hessian_trace_bound;
    let gamma_ridge = 2.0 * lam * budget.w2_bar / (eps * n as f64);
    let noise_scale = match privacy.mechanism {
        Mechanism::Gamma => 2.0 * zeta * budget.w1_bar / eps,
        Mechanism::Gaussian => {
            let log_inv_delta = (1.0 / privacy.delta).ln();
            let l_tilde = (((p as f64).sqrt() + log_inv_delta.sqrt()).powi(2) + log_inv_delta)
                .sqrt();
            zeta / eps
                * (l_tilde + (l_tilde * l_tilde + eps / (3.0 * n as f64)).sqrt())
                * budget.w1_bar
        }
    };
    Ok(Calibration { mechanism: privacy.mechanism, noise_scale, gamma_ridge, inputs })
}

impl Calibration {
    /// Draw the objective-perturbation noise vector for this calibration;
    /// the zero scale of the non-private sentinel yields the zero vector.
    pub fn sample_noise(&self, p: usize, rng: &mut ChaCha12Rng) -> Array1<f64> {
        if self.noise_scale == 0.0 {
            return Array1::zeros(p);
        }
        match self.mechanism {
            Mechanism::Gamma => sample_gamma_noise(p, 1.0 / self.noise_scale, rng),
            Mechanism::Gaussian => sample_gaussian_noise(p, self.noise_scale, rng),
        }
    }
}

/// Sample b with density proportional to exp(-beta ||b||): a uniform
/// direction scaled by a Gamma(shape = p, scale = 1/beta) radius.
pub fn sample_gamma_noise(p: usize, beta: f64, rng: &mut ChaCha12Rng) -> Array1<f64> {
    assert!(beta > 0.0 && p >= 1, "gamma noise needs beta > 0 and p >= 1");
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let mut direction;
    loop {
        direction = Array1::from_shape_fn(p, |_| normal.sample(rng));
        let norm = direction.dot(&direction).sqrt();
        if norm > 1e-12 {
            direction /= norm;
            break;
        }
    }
    let radius = GammaDist::new(p as f64, 1.0 / beta)
        .expect("valid gamma parameters")
        .sample(rng);
    direction * radius
}

/// Sample b ~ N(0, sigma^2 I).
pub fn sample_gaussian_noise(p: usize, sigma: f64, rng: &mut ChaCha12Rng) -> Array1<f64> {
    assert!(sigma > 0.0 && p >= 1, "gaussian noise needs sigma > 0 and p >= 1");
    let normal = Normal::new(0.0, sigma).expect("valid normal parameters");
    Array1::from_shape_fn(p, |_| normal.sample(rng))
}

/// Deterministic per-(seed, stream) generator. Streams with distinct ids are
/// independent; the same (seed, stream) reproduces the same draws bit for bit.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform f64 in [0,1) from a stream, used by data splits and bootstraps.
pub fn uniform01(rng: &mut ChaCha12Rng) -> f64 {
    rng.random::<f64>()
}
