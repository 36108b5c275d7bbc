//! Linear individualized treatment rules: the squared weighted-regression
//! loss, the sign decision rule, and the two evaluation metrics (agreement
//! with the true optimal rule, and the inverse-propensity value estimate).

use crate::data::Dataset;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};

/// Squared treatment-contrast loss l(theta; x, a, y) = (2ya - x^T theta)^2
/// with gradient -2 (2ya - x^T theta) x.
pub fn itr_loss(theta: &Array1<f64>, x: ArrayView1<'_, f64>, a: i8, y: f64) -> (f64, Array1<f64>) {
    let residual = 2.0 * y * a as f64 - x.dot(theta);
    (residual * residual, x.mapv(|v| -2.0 * residual * v))
}

/// d(x) = sign(x^T theta), with sign(0) fixed to +1.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRule {
    pub theta: Array1<f64>,
}

impl DecisionRule {
    pub fn new(theta: Array1<f64>) -> Self {
        Self { theta }
    }

    pub fn decide(&self, x: ArrayView1<'_, f64>) -> i8 {
        if x.dot(&self.theta) >= 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Sign of the true contrast, with the same sign(0) -> +1 rule the decision
/// uses, so truth labels and decisions tie-break identically.
pub fn contrast_sign(f_opt: f64) -> i8 {
    if f_opt >= 0.0 {
        1
    } else {
        -1
    }
}

/// Fraction of test points whose decision matches the sign of the true
/// contrast.
pub fn accuracy(rule: &DecisionRule, covariates: &Array2<f64>, contrast: &[f64]) -> Result<f64> {
    if covariates.nrows() != contrast.len() {
        return Err(Error::invalid(format!(
            "accuracy: {} covariate rows vs {} contrast values",
            covariates.nrows(),
            contrast.len()
        )));
    }
    if covariates.nrows() == 0 {
        return Err(Error::invalid("accuracy needs a nonempty test set"));
    }
    let hits = (0..covariates.nrows())
        .filter(|&i| rule.decide(covariates.row(i)) == contrast_sign(contrast[i]))
        .count();
    Ok(hits as f64 / covariates.nrows() as f64)
}

/// Inverse-propensity value estimate
/// (1/n) sum y_i 1{a_i = d(x_i)} / pi(a_i, x_i).
pub fn empirical_value(rule: &DecisionRule, dataset: &Dataset, propensity: &[f64]) -> Result<f64> {
    if propensity.len() != dataset.n() {
        return Err(Error::invalid(format!(
            "empirical value: {} propensities vs n={}",
            propensity.len(),
            dataset.n()
        )));
    }
    let mut total = 0.0;
    for i in 0..dataset.n() {
        let pi = propensity[i];
        if !(pi > 0.0) {
            return Err(Error::invalid(format!("nonpositive propensity {pi} at row {i}")));
        }
        if dataset.treatments()[i] == rule.decide(dataset.covariate_row(i)) {
            total += dataset.outcomes()[i] / pi;
        }
    }
    Ok(total / dataset.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::finite_diff_gradient;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn loss_spot_values() {
        let (v, g) = itr_loss(&array![0.0, 0.0], array![1.0, 2.0].view(), 1, 1.0);
        assert_relative_eq!(v, 4.0, epsilon = 1e-15);
        assert_relative_eq!(g[0], -4.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], -8.0, epsilon = 1e-15);

        // Zero residual: x^T theta = 2ya.
        let (v, g) = itr_loss(&array![2.0, 0.0], array![1.0, 5.0].view(), 1, 1.0);
        assert_relative_eq!(v, 0.0, epsilon = 1e-15);
        assert!(g.iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta = array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let x = array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let a: i8 = if rng.random::<bool>() { 1 } else { -1 };
            let y = 2.0 * rng.random::<f64>() - 1.0;
            let (_, g) = itr_loss(&theta, x.view(), a, y);
            let fd = finite_diff_gradient(|t| itr_loss(t, x.view(), a, y).0, &theta, 1e-6);
            for j in 0..2 {
                assert!((g[j] - fd[j]).abs() <= 1e-6, "{} vs {}", g[j], fd[j]);
            }
        }
    }

    #[test]
    fn decisions_and_tie_rule() {
        let rule = DecisionRule::new(array![1.0, 0.0]);
        assert_eq!(rule.decide(array![2.0, -1.0].view()), 1);
        assert_eq!(rule.decide(array![-2.0, 1.0].view()), -1);
        let zero = DecisionRule::new(array![0.0, 0.0]);
        assert_eq!(zero.decide(array![5.0, -3.0].view()), 1);
    }

    #[test]
    fn decisions_scale_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..50 {
            let theta = array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let x = array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let rule = DecisionRule::new(theta.clone());
            for c in [0.1, 3.0, 1e6] {
                let scaled = DecisionRule::new(theta.mapv(|v| c * v));
                assert_eq!(rule.decide(x.view()), scaled.decide(x.view()));
            }
        }
    }

    #[test]
    fn accuracy_truth_and_negation() {
        let x = array![[1.0, 0.0], [-0.5, 0.0], [0.3, 0.0], [-2.0, 0.0]];
        let contrast: Vec<f64> = (0..4).map(|i| x[[i, 0]]).collect();
        let truth = DecisionRule::new(array![1.0, 0.0]);
        assert_relative_eq!(accuracy(&truth, &x, &contrast).unwrap(), 1.0);
        let negated = DecisionRule::new(array![-1.0, 0.0]);
        assert_relative_eq!(accuracy(&negated, &x, &contrast).unwrap(), 0.0);
        // Complementarity without zero contrasts.
        let some = DecisionRule::new(array![0.4, 0.0]);
        let neg = DecisionRule::new(array![-0.4, 0.0]);
        let a1 = accuracy(&some, &x, &contrast).unwrap();
        let a2 = accuracy(&neg, &x, &contrast).unwrap();
        assert_relative_eq!(a1 + a2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn accuracy_zero_rule_counts_nonnegative_contrasts() {
        let x = array![[1.0], [2.0], [3.0]];
        let contrast = vec![-1.0, 0.0, 2.0];
        let zero = DecisionRule::new(array![0.0]);
        assert_relative_eq!(accuracy(&zero, &x, &contrast).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn empirical_value_spot_cases() {
        let x = array![[1.0], [-1.0]];
        let ds = Dataset::new(x, vec![1, -1], vec![1.0, 2.0]).unwrap();
        // Rule agreeing with every a_i, pi = 1: mean(y).
        let agree = DecisionRule::new(array![1.0]);
        assert_relative_eq!(empirical_value(&agree, &ds, &[1.0, 1.0]).unwrap(), 1.5);
        // Rule disagreeing with every a_i: 0.
        let disagree = DecisionRule::new(array![-1.0]);
        assert_relative_eq!(empirical_value(&disagree, &ds, &[1.0, 1.0]).unwrap(), 0.0);
        // Hand-computed weighted case: (1/0.5 + 2/0.5)/2 = 3.
        assert_relative_eq!(empirical_value(&agree, &ds, &[0.5, 0.5]).unwrap(), 3.0);
        assert!(empirical_value(&agree, &ds, &[0.5, 0.0]).is_err());
    }
}
