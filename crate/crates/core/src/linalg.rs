//! Dense symmetric eigenvalue helpers for the small matrices this crate
//! works with (covariance matrices of dimension p or 2(K+1), and the
//! quadratic forms of the weight solvers).

use ndarray::{Array1, Array2};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Intended for tiny matrices where exactness matters more than speed; the
/// sweep count is generous and the off-diagonal mass is driven to machine
/// precision.
pub fn sym_eigenvalues(mat: &Array2<f64>) -> Array1<f64> {
    let n = mat.nrows();
    assert_eq!(n, mat.ncols(), "matrix must be square");
    let mut a = mat.clone();
    if n <= 1 {
        return a.diag().to_owned();
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frobenius(&a)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = a.diag().to_vec();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Array1::from(eig)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(mat: &Array2<f64>) -> f64 {
    sym_eigenvalues(mat)[0]
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(mat: &Array2<f64>) -> f64 {
    let eig = sym_eigenvalues(mat);
    eig[eig.len() - 1]
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// deterministic start. Cheaper than Jacobi for the n-by-n systems of the
/// kernel weight solver, where only a step size bound is needed. Returns a
/// slight over-estimate (5% headroom plus a Gershgorin fallback).
pub fn lambda_max_psd_estimate(mat: &Array2<f64>) -> f64 {
    let n = mat.nrows();
    assert_eq!(n, mat.ncols());
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..60 {
        let w = mat.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm <= 1e-300 {
            return gershgorin_bound(mat);
        }
        lam = v.dot(&w);
        v = w / norm;
    }
    if lam <= 0.0 {
        return gershgorin_bound(mat);
    }
    // Power iteration converges from below for PSD matrices.
    (lam * 1.05).min(gershgorin_bound(mat))
}

fn gershgorin_bound(mat: &Array2<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..mat.nrows() {
        let row_sum: f64 = mat.row(i).iter().map(|v| v.abs()).sum();
        best = best.max(row_sum);
    }
    best
}

fn frobenius(mat: &Array2<f64>) -> f64 {
    mat.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn jacobi_matches_hand_computed_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = array![[2.0, 1.0], [1.0, 2.0]];
        let eig = sym_eigenvalues(&m);
        assert_relative_eq!(eig[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(eig[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_diagonal_and_identity() {
        let m = array![[4.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.5]];
        let eig = sym_eigenvalues(&m);
        assert_relative_eq!(eig[0], -1.0, epsilon = 1e-13);
        assert_relative_eq!(eig[1], 2.5, epsilon = 1e-13);
        assert_relative_eq!(eig[2], 4.0, epsilon = 1e-13);
        assert_relative_eq!(lambda_min(&m), -1.0, epsilon = 1e-13);
        assert_relative_eq!(lambda_max(&m), 4.0, epsilon = 1e-13);
    }

    #[test]
    fn jacobi_random_symmetric_trace_and_gram() {
        // Eigenvalues of G G^T are squared singular values; compare the trace
        // identity sum(eig) = tr as an independent cross-check.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for dim in [3usize, 6, 11] {
            let g = Array2::from_shape_fn((dim, dim), |_| rng.random::<f64>() - 0.5);
            let sym = g.dot(&g.t());
            let eig = sym_eigenvalues(&sym);
            let trace: f64 = sym.diag().sum();
            assert_relative_eq!(eig.sum(), trace, max_relative = 1e-10);
            assert!(eig[0] >= -1e-10, "gram matrix must be PSD");
        }
    }

    #[test]
    fn power_iteration_upper_bounds_lambda_max() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for dim in [4usize, 20] {
            let g = Array2::from_shape_fn((dim, dim), |_| rng.random::<f64>() - 0.5);
            let sym = g.dot(&g.t());
            let exact = lambda_max(&sym);
            let est = lambda_max_psd_estimate(&sym);
            // Rayleigh quotients approach lambda_max from below; the 5%
            // headroom makes the estimate a usable step-size bound even when
            // the top of the spectrum is clustered.
            assert!(est >= exact * 0.95, "estimate {est} far below exact {exact}");
            assert!(est <= exact * 1.05 + 1e-9, "estimate {est} too loose vs {exact}");
        }
    }
}
