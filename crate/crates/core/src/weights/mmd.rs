//! Kernel maximum-mean-discrepancy weights: each arm is reweighted toward
//! the pooled covariate distribution (and optionally toward the other arm),
//! by a ridge-regularized quadratic program over per-arm capped simplices.

use crate::data::{Dataset, WeightVector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{pgd, project_capped_simplex, ConvexProblem, PgdOptions, SolveDiagnostics};
use ndarray::{s, Array1, Array2};

/// Gaussian RBF kernel K(x,y) = exp(-||x-y||^2 / (2 h^2)), sup bound 1.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub bandwidth: f64,
    /// Uniform bound C with K(x,y) <= C; 1 for the RBF family.
    pub sup_bound: f64,
}

impl KernelSpec {
    pub fn gaussian_rbf(bandwidth: f64) -> Result<Self> {
        if bandwidth <= 0.0 {
            return Err(Error::invalid("kernel bandwidth must be positive"));
        }
        Ok(Self { bandwidth, sup_bound: 1.0 })
    }

    /// Bandwidth from the median pairwise distance of the covariates, the
    /// usual default when nothing better is known. Falls back to 1 when all
    /// points coincide.
    pub fn median_heuristic(dataset: &Dataset) -> Self {
        let n = dataset.n();
        let mut dists = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = &dataset.covariate_row(i) - &dataset.covariate_row(j);
                dists.push(d.dot(&d).sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if dists.is_empty() { 0.0 } else { dists[dists.len() / 2] };
        Self { bandwidth: if median > 0.0 { median } else { 1.0 }, sup_bound: 1.0 }
    }

    pub fn eval(&self, x: ndarray::ArrayView1<'_, f64>, y: ndarray::ArrayView1<'_, f64>) -> f64 {
        let d = &x - &y;
        (-d.dot(&d) / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct MmdConfig {
    /// Mixing coefficient in the unit interval between arm-to-pool and
    /// arm-to-arm terms.
    pub alpha: f64,
    /// Ridge coefficient lambda_MMD > 0 on the quadratic form.
    pub ridge: f64,
    /// Sup-norm cap R on the (un-halved) weights; None picks 10 n / n_min.
    pub weight_cap: Option<f64>,
    /// None picks the median-distance RBF bandwidth per dataset.
    pub kernel: Option<KernelSpec>,
}

impl MmdConfig {
    pub fn new(alpha: f64, ridge: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("mmd alpha must lie in [0,1]"));
        }
        if ridge <= 0.0 {
            return Err(Error::invalid("mmd ridge (lambda_MMD) must be positive"));
        }
        Ok(Self { alpha, ridge, weight_cap: None, kernel: None })
    }

    pub fn resolved_cap(&self, dataset: &Dataset) -> Result<f64> {
        let (control, treated) = dataset.require_both_arms()?;
        let n_min = control.len().min(treated.len()) as f64;
        Ok(self.weight_cap.unwrap_or(10.0 * dataset.n() as f64 / n_min))
    }
}

/// The quadratic system w^T A w - 2 w^T b in block order (control rows,
/// then treated rows), with the index maps back to the dataset.
#[derive(Debug, Clone)]
pub struct MmdSystem {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub control_idx: Vec<usize>,
    pub treated_idx: Vec<usize>,
}

/// Assemble the block matrix A and vector b of the MMD quadratic program:
/// diagonal blocks K_aa + ridge I, off-diagonal (alpha-1) K_01, all over n^2;
/// b stacks (alpha/n^2) K_{a,pool} 1.
pub fn mmd_kernel_matrices(
    dataset: &Dataset,
    kernel: &KernelSpec,
    alpha: f64,
    ridge: f64,
) -> Result<MmdSystem> {
    let (control_idx, treated_idx) = dataset.require_both_arms()?;
    let order: Vec<usize> = control_idx.iter().chain(treated_idx.iter()).cloned().collect();
    let n = dataset.n();
    let n0 = control_idx.len();
    let nf = n as f64;

    let mut full = Array2::zeros((n, n));
    for (r, &i) in order.iter().enumerate() {
        for (c, &j) in order.iter().enumerate() {
            full[[r, c]] = kernel.eval(dataset.covariate_row(i), dataset.covariate_row(j));
        }
    }
    let mut a = Array2::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            let same_arm = (r < n0) == (c < n0);
            let scale = if same_arm { 1.0 } else { alpha - 1.0 };
            a[[r, c]] = scale * full[[r, c]] / (nf * nf);
        }
        a[[r, r]] += ridge / (nf * nf);
    }
    let b = Array1::from_shape_fn(n, |r| alpha * full.row(r).sum() / (nf * nf));
    Ok(MmdSystem { a, b, control_idx, treated_idx })
}

#[derive(Debug, Clone)]
pub struct MmdSolution {
    pub weights: WeightVector,
    pub diagnostics: SolveDiagnostics,
    /// Cap actually applied to the un-halved per-arm weights.
    pub cap: f64,
}

/// Solve the capped quadratic program per arm (each arm's weights sum to n,
/// entries in [0, R]) and return the halved solution, which sums to n.
///
/// `start` may supply a warm start in the original index order (un-halved);
/// otherwise each arm starts uniform.
pub fn mmd_weights_from(
    dataset: &Dataset,
    config: &MmdConfig,
    opts: &PgdOptions,
    start: Option<&[f64]>,
) -> Result<MmdSolution> {
    let kernel = match &config.kernel {
        Some(k) => k.clone(),
        None => KernelSpec::median_heuristic(dataset),
    };
    let cap = config.resolved_cap(dataset)?;
    let system = mmd_kernel_matrices(dataset, &kernel, config.alpha, config.ridge)?;
    let n = dataset.n();
    let nf = n as f64;
    let n0 = system.control_idx.len();
    let n1 = system.treated_idx.len();
    if cap < nf / n0 as f64 || cap < nf / n1 as f64 {
        return Err(Error::Infeasible(format!(
            "mmd weight cap {cap} below n/n_arm; per-arm sums of {nf} are unreachable"
        )));
    }

    let a = system.a.clone();
    let b = system.b.clone();
    let objective = move |w: &Array1<f64>| {
        let aw = a.dot(w);
        let value = w.dot(&aw) - 2.0 * w.dot(&b);
        let grad = 2.0 * (&aw - &b);
        (value, grad)
    };
    let projection = move |w: Array1<f64>| {
        let mut out = w;
        let head = project_capped_simplex(&out.slice(s![..n0]).to_owned(), nf, cap)
            .expect("per-arm feasibility checked above");
        let tail = project_capped_simplex(&out.slice(s![n0..]).to_owned(), nf, cap)
            .expect("per-arm feasibility checked above");
        out.slice_mut(s![..n0]).assign(&head);
        out.slice_mut(s![n0..]).assign(&tail);
        out
    };
    let smoothness = 2.0 * linalg::lambda_max_psd_estimate(&system.a);
    let problem = ConvexProblem {
        dim: n,
        objective: Box::new(objective),
        projection: Box::new(projection),
        smoothness: Some(smoothness.max(1e-12)),
    };
    let start_vec = match start {
        Some(w0) => {
            let mut v = Array1::zeros(n);
            for (r, &i) in system.control_idx.iter().chain(system.treated_idx.iter()).enumerate() {
                v[r] = w0[i];
            }
            v
        }
        None => {
            let mut v = Array1::zeros(n);
            for r in 0..n {
                v[r] = if r < n0 { nf / n0 as f64 } else { nf / n1 as f64 };
            }
            v
        }
    };
    let (w_block, diagnostics) = pgd(&problem, start_vec, opts)?;
    if !diagnostics.converged {
        return Err(Error::SolverFailure { context: "mmd weight solve".to_string(), diagnostics });
    }
    let mut weights = vec![0.0; n];
    for (r, &i) in system.control_idx.iter().chain(system.treated_idx.iter()).enumerate() {
        weights[i] = 0.5 * w_block[r];
    }
    Ok(MmdSolution { weights: WeightVector::new(weights)?, diagnostics, cap })
}

pub fn mmd_weights(dataset: &Dataset, config: &MmdConfig, opts: &PgdOptions) -> Result<MmdSolution> {
    mmd_weights_from(dataset, config, opts, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::finite_diff_gradient;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn two_point_dataset() -> Dataset {
        Dataset::new(array![[0.0, 0.0], [0.0, 0.0]], vec![-1, 1], vec![0.0, 0.0]).unwrap()
    }

    fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() - 0.5);
        let a: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        Dataset::new(x, a, vec![0.0; n]).unwrap()
    }

    use ndarray::Array2;

    #[test]
    fn alpha_one_zeroes_off_diagonal_blocks() {
        let ds = random_dataset(8, 2, 1);
        let kernel = KernelSpec::gaussian_rbf(1.0).unwrap();
        let sys = mmd_kernel_matrices(&ds, &kernel, 1.0, 0.5).unwrap();
        let n0 = sys.control_idx.len();
        for r in 0..8 {
            for c in 0..8 {
                if (r < n0) != (c < n0) {
                    assert_eq!(sys.a[[r, c]], 0.0);
                }
            }
        }
    }

    #[test]
    fn ridge_makes_a_positive_definite() {
        let ds = random_dataset(10, 3, 2);
        let kernel = KernelSpec::gaussian_rbf(0.7).unwrap();
        let sys = mmd_kernel_matrices(&ds, &kernel, 0.5, 0.3).unwrap();
        let min = crate::linalg::lambda_min(&sys.a);
        assert!(min > 0.0, "smallest eigenvalue {min}");
    }

    #[test]
    fn flat_kernel_two_points_hand_evaluated() {
        // Bandwidth -> infinity makes K = 1: A = (1/4)[[1+l, a-1],[a-1, 1+l]],
        // b = (alpha/2, alpha/2).
        let ds = two_point_dataset();
        let kernel = KernelSpec::gaussian_rbf(1e12).unwrap();
        let (alpha, ridge) = (0.3, 0.2);
        let sys = mmd_kernel_matrices(&ds, &kernel, alpha, ridge).unwrap();
        assert_relative_eq!(sys.a[[0, 0]], (1.0 + ridge) / 4.0, epsilon = 1e-9);
        assert_relative_eq!(sys.a[[0, 1]], (alpha - 1.0) / 4.0, epsilon = 1e-9);
        assert_relative_eq!(sys.a[[1, 0]], (alpha - 1.0) / 4.0, epsilon = 1e-9);
        assert_relative_eq!(sys.a[[1, 1]], (1.0 + ridge) / 4.0, epsilon = 1e-9);
        assert_relative_eq!(sys.b[0], alpha / 2.0, epsilon = 1e-9);
        assert_relative_eq!(sys.b[1], alpha / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn one_point_per_arm_forces_unit_weights() {
        // Per-arm sums of n = 2 on single-point arms force raw weight 2 each;
        // halving gives (1, 1) for any alpha.
        let ds = two_point_dataset();
        for alpha in [0.0, 0.5, 1.0] {
            let cfg = MmdConfig::new(alpha, 0.5).unwrap();
            let sol = mmd_weights(&ds, &cfg, &PgdOptions::default()).unwrap();
            assert_relative_eq!(sol.weights[0], 1.0, epsilon = 1e-7);
            assert_relative_eq!(sol.weights[1], 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn constant_kernel_ridge_selects_uniform_per_arm() {
        // With K constant every feasible w has equal MMD terms, so the ridge
        // picks the minimum-norm feasible point: uniform within each arm.
        let n = 9;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>() - 0.5);
        let a: Vec<i8> = (0..n).map(|i| if i < 3 { 1 } else { -1 }).collect();
        let ds = Dataset::new(x, a, vec![0.0; n]).unwrap();
        let mut cfg = MmdConfig::new(0.5, 1.0).unwrap();
        cfg.kernel = Some(KernelSpec::gaussian_rbf(1e12).unwrap());
        let sol = mmd_weights(&ds, &cfg, &PgdOptions::default()).unwrap();
        for i in 0..3 {
            assert_relative_eq!(sol.weights[i], 0.5 * 9.0 / 3.0, epsilon = 1e-6);
        }
        for i in 3..9 {
            assert_relative_eq!(sol.weights[i], 0.5 * 9.0 / 6.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn output_is_valid_and_capped() {
        let ds = random_dataset(12, 2, 4);
        let cfg = MmdConfig::new(0.5, 0.1).unwrap();
        let sol = mmd_weights(&ds, &cfg, &PgdOptions::default()).unwrap();
        let sum: f64 = (0..12).map(|i| sol.weights[i]).sum();
        assert_relative_eq!(sum, 12.0, epsilon = 1e-6);
        for i in 0..12 {
            assert!(sol.weights[i] >= 0.0 && sol.weights[i] <= sol.cap / 2.0 + 1e-9);
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let ds = random_dataset(6, 2, 5);
        let kernel = KernelSpec::gaussian_rbf(0.8).unwrap();
        let sys = mmd_kernel_matrices(&ds, &kernel, 0.4, 0.2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..20 {
            let w = Array1::from_shape_fn(6, |_| 2.0 * rng.random::<f64>());
            let grad = 2.0 * (&sys.a.dot(&w) - &sys.b);
            let f = |v: &Array1<f64>| v.dot(&sys.a.dot(v)) - 2.0 * v.dot(&sys.b);
            let fd = finite_diff_gradient(f, &w, 1e-6);
            for j in 0..6 {
                assert!((grad[j] - fd[j]).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn kkt_residual_below_tolerance() {
        let ds = random_dataset(10, 2, 8);
        let cfg = MmdConfig::new(0.7, 0.5).unwrap();
        let opts = PgdOptions::default();
        let sol = mmd_weights(&ds, &cfg, &opts).unwrap();
        assert!(sol.diagnostics.grad_map_norm <= opts.tol);
    }

    #[test]
    fn infeasible_cap_is_rejected() {
        let ds = random_dataset(8, 2, 9);
        let mut cfg = MmdConfig::new(0.5, 0.5).unwrap();
        cfg.weight_cap = Some(1.0); // below n / n_arm = 2
        assert!(matches!(
            mmd_weights(&ds, &cfg, &PgdOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }
}
