//! Projected gradient descent and the Euclidean projections used by the
//! weight solvers and the weighted ERM stage.
//!
//! One solver, one convergence contract: the gradient-mapping norm
//! ||x - P(x - s grad f(x))|| / s must fall below the tolerance. When a
//! smoothness constant is supplied the step is 1/L with backtracking as a
//! fallback; otherwise the step adapts by doubling/halving around the last
//! accepted value.

use crate::error::{Error, Result};
use ndarray::Array1;

/// Convergence record returned alongside every solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub grad_map_norm: f64,
    pub objective: f64,
    pub converged: bool,
}

/// A constrained smooth convex problem: objective with gradient, plus the
/// Euclidean projection onto the feasible set.
pub struct ConvexProblem<'a> {
    pub dim: usize,
    pub objective: Box<dyn Fn(&Array1<f64>) -> (f64, Array1<f64>) + 'a>,
    pub projection: Box<dyn Fn(Array1<f64>) -> Array1<f64> + 'a>,
    /// Lipschitz constant of the gradient, when known.
    pub smoothness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100_000 }
    }
}

impl PgdOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Minimize `problem` from `start` by projected gradient descent.
///
/// The start point is projected first, so any point of the right dimension
/// is acceptable. Non-finite objective or gradient values abort the solve.
pub fn pgd(
    problem: &ConvexProblem<'_>,
    start: Array1<f64>,
    opts: &PgdOptions,
) -> Result<(Array1<f64>, SolveDiagnostics)> {
    if opts.tol <= 0.0 {
        return Err(Error::invalid("pgd tolerance must be positive"));
    }
    if start.len() != problem.dim {
        return Err(Error::invalid(format!(
            "start point has dimension {}, problem expects {}",
            start.len(),
            problem.dim
        )));
    }
    let base_step = problem.smoothness.map(|l| if l > 0.0 { 1.0 / l } else { 1.0 });
    let mut x = (problem.projection)(start);
    let mut step = base_step.unwrap_or(1.0);
    let mut grad_map_norm = f64::INFINITY;
    let mut iterations = 0;

    let (mut f, mut g) = (problem.objective)(&x);
    check_finite(f, &g)?;

    while iterations < opts.max_iter {
        iterations += 1;
        // Fixed step when L is known; otherwise try growing the last
        // accepted step before backtracking.
        let s0 = match base_step {
            Some(s0) => s0,
            None => (step * 2.0).min(1e12),
        };
        let mut s = s0;
        let mut candidate = (problem.projection)(&x - &(s * &g));
        // Convergence is decided at the current point, before any
        // backtracking: the base-step gradient mapping is the contract.
        grad_map_norm = dist(&candidate, &x) / s;
        if grad_map_norm <= opts.tol {
            return Ok((
                x,
                SolveDiagnostics { iterations, grad_map_norm, objective: f, converged: true },
            ));
        }
        let accepted = loop {
            let diff = &candidate - &x;
            let diff_sq = diff.dot(&diff);
            let (f_new, g_new) = (problem.objective)(&candidate);
            check_finite(f_new, &g_new)?;
            // Sufficient decrease for the projected step; holds automatically
            // once s <= 1/L. The slack is relative so it cannot mask
            // non-descent steps near a minimum with objective value ~ 0.
            let quad_bound = f + g.dot(&diff) + diff_sq / (2.0 * s) + 1e-12 * f.abs();
            if f_new <= quad_bound {
                break (candidate, f_new, g_new, s);
            }
            s *= 0.5;
            if s < 1e-18 * s0 {
                return Err(Error::SolverFailure {
                    context: "pgd backtracking step underflow".to_string(),
                    diagnostics: SolveDiagnostics {
                        iterations,
                        grad_map_norm,
                        objective: f,
                        converged: false,
                    },
                });
            }
            candidate = (problem.projection)(&x - &(s * &g));
        };
        let (x_new, f_new, g_new, s_used) = accepted;
        x = x_new;
        f = f_new;
        g = g_new;
        step = s_used;
    }
    Ok((x, SolveDiagnostics { iterations, grad_map_norm, objective: f, converged: false }))
}

fn dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt()
}

fn check_finite(f: f64, g: &Array1<f64>) -> Result<()> {
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pgd objective/gradient".to_string()));
    }
    Ok(())
}

/// Euclidean projection onto the L1 ball of the given radius, by
/// sort-and-threshold on the absolute values.
pub fn project_l1_ball(x: &Array1<f64>, radius: f64) -> Array1<f64> {
    assert!(radius > 0.0, "l1 radius must be positive");
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return x.clone();
    }
    let mut abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &a) in abs.iter().enumerate() {
        cumsum += a;
        let candidate = (cumsum - radius) / (k as f64 + 1.0);
        if candidate < a {
            theta = candidate;
        } else {
            break;
        }
    }
    x.mapv(|v| v.signum() * (v.abs() - theta).max(0.0))
}

/// Euclidean projection onto the L2 ball: radial scaling.
pub fn project_l2_ball(x: &Array1<f64>, radius: f64) -> Array1<f64> {
    assert!(radius > 0.0, "l2 radius must be positive");
    let norm = x.dot(x).sqrt();
    if norm <= radius {
        x.clone()
    } else {
        x * (radius / norm)
    }
}

/// Euclidean projection onto {w : sum w = total, 0 <= w_i <= cap}, by
/// bisection on the dual shift mu solving sum clip(x_i - mu, 0, cap) = total.
pub fn project_capped_simplex(x: &Array1<f64>, total: f64, cap: f64) -> Result<Array1<f64>> {
    let dim = x.len() as f64;
    if !(total > 0.0 && cap > 0.0) {
        return Err(Error::invalid("capped simplex needs total > 0 and cap > 0"));
    }
    if total > cap * dim * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!(
            "capped simplex: total {total} exceeds cap*dim = {}",
            cap * dim
        )));
    }
    let clip_sum = |mu: f64| -> f64 { x.iter().map(|v| (v - mu).clamp(0.0, cap)).sum() };
    let mut lo = x.iter().cloned().fold(f64::INFINITY, f64::min) - cap;
    let mut hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // clip_sum is nonincreasing in mu: clip_sum(lo) = cap*dim >= total,
    // clip_sum(hi) = 0 <= total.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip_sum(mid) >= total {
            lo = mid;
        } else {
            hi = mid;
        }
        if (clip_sum(lo) - total).abs() <= 1e-10 * total {
            break;
        }
    }
    let mu = lo;
    let mut w = x.mapv(|v| (v - mu).clamp(0.0, cap));
    // Distribute the residual over interior coordinates so the sum is exact.
    let sum: f64 = w.sum();
    let interior: Vec<usize> =
        (0..w.len()).filter(|&i| w[i] > 0.0 && w[i] < cap).collect();
    if !interior.is_empty() {
        let shift = (total - sum) / interior.len() as f64;
        for i in interior {
            w[i] = (w[i] + shift).clamp(0.0, cap);
        }
    }
    Ok(w)
}

/// Central finite-difference gradient, the oracle used to verify every
/// analytic gradient in this crate.
pub fn finite_diff_gradient<F>(objective: F, x: &Array1<f64>, h: f64) -> Array1<f64>
where
    F: Fn(&Array1<f64>) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut grad = Array1::zeros(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += h;
        minus[i] -= h;
        grad[i] = (objective(&plus) - objective(&minus)) / (2.0 * h);
    }
    grad
}
