//! Domain types shared by every stage: datasets of (covariates, treatment,
//! outcome) records, weight vectors on the scaled simplex, problem constants,
//! and neighboring-dataset construction for sensitivity experiments.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use std::path::Path;

/// Relative tolerance for the sum-to-n weight constraint.
pub const WEIGHT_SUM_RTOL: f64 = 1e-8;

/// One observation: covariate vector, treatment in {-1,+1}, outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub covariates: Array1<f64>,
    pub treatment: i8,
    pub outcome: f64,
}

/// An immutable dataset of n records.
///
/// Treatments are stored in the {-1,+1} convention of the treatment-rule
/// stage; weight solvers convert to {0,1} group labels via [`Dataset::groups01`]
/// with the fixed mapping +1 -> 1 (treated), -1 -> 0 (control).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Array2<f64>,
    treatments: Vec<i8>,
    outcomes: Vec<f64>,
}

impl Dataset {
    /// Structural checks only (matching lengths, n >= 2, treatments in
    /// {-1,+1}). Admissibility against problem constants (norm bounds, arm
    /// positivity, finiteness) is reported by [`validate`], so inadmissible
    /// datasets can still be constructed and diagnosed.
    pub fn new(covariates: Array2<f64>, treatments: Vec<i8>, outcomes: Vec<f64>) -> Result<Self> {
        let n = covariates.nrows();
        if n < 2 {
            return Err(Error::invalid(format!("dataset needs n >= 2 records, got {n}")));
        }
        if treatments.len() != n || outcomes.len() != n {
            return Err(Error::invalid(format!(
                "length mismatch: {} covariate rows, {} treatments, {} outcomes",
                n,
                treatments.len(),
                outcomes.len()
            )));
        }
        if let Some(bad) = treatments.iter().find(|a| **a != 1 && **a != -1) {
            return Err(Error::invalid(format!("treatment must be -1 or +1, got {bad}")));
        }
        Ok(Self { covariates, treatments, outcomes })
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn covariate_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    pub fn treatments(&self) -> &[i8] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn record(&self, i: usize) -> Record {
        Record {
            covariates: self.covariates.row(i).to_owned(),
            treatment: self.treatments[i],
            outcome: self.outcomes[i],
        }
    }

    /// Treatment labels mapped to the {0,1} convention of the weight solvers.
    pub fn groups01(&self) -> Vec<u8> {
        self.treatments.iter().map(|a| if *a == 1 { 1 } else { 0 }).collect()
    }

    /// Indices of records in the given arm (0 = control, 1 = treated).
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        let want: i8 = if arm == 1 { 1 } else { -1 };
        (0..self.n()).filter(|&i| self.treatments[i] == want).collect()
    }

    /// Errors unless both arms are nonempty; weight solvers require this.
    pub fn require_both_arms(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let control = self.arm_indices(0);
        let treated = self.arm_indices(1);
        if control.is_empty() {
            return Err(Error::invalid("control arm empty"));
        }
        if treated.is_empty() {
            return Err(Error::invalid("treated arm empty"));
        }
        Ok((control, treated))
    }

    /// Copy of the dataset with record `i` replaced.
    pub fn with_record(&self, i: usize, record: &Record) -> Result<Self> {
        if i >= self.n() {
            return Err(Error::invalid(format!("record index {i} out of range for n={}", self.n())));
        }
        if record.covariates.len() != self.p() {
            return Err(Error::invalid(format!(
                "replacement covariate dimension {} does not match p={}",
                record.covariates.len(),
                self.p()
            )));
        }
        let mut covariates = self.covariates.clone();
        covariates.row_mut(i).assign(&record.covariates);
        let mut treatments = self.treatments.clone();
        treatments[i] = record.treatment;
        let mut outcomes = self.outcomes.clone();
        outcomes[i] = record.outcome;
        Dataset::new(covariates, treatments, outcomes)
    }
}

/// Bounds and loss constants used by validation and privacy calibration.
///
/// For the squared treatment-rule loss the gradient bound is
/// zeta = 2 M^2 lambda1 + 4 M M_out and the Hessian-trace bound is 2 M^2.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants {
    /// L2 bound M on covariate rows.
    pub covariate_bound: f64,
    /// Magnitude bound M_out on outcomes.
    pub outcome_bound: f64,
    /// L1-ball radius for the ERM parameter.
    pub l1_radius: f64,
    /// Per-sample gradient bound zeta.
    pub grad_bound: f64,
    /// Bound on the trace of the per-sample Hessian.
    pub hessian_trace_bound: f64,
}

impl ProblemConstants {
    /// Constants for the squared treatment-rule loss.
    pub fn for_itr(covariate_bound: f64, outcome_bound: f64, l1_radius: f64) -> Result<Self> {
        if !(covariate_bound > 0.0 && outcome_bound >= 0.0 && l1_radius > 0.0) {
            return Err(Error::invalid(
                "problem constants require covariate_bound > 0, outcome_bound >= 0, l1_radius > 0",
            ));
        }
        let m = covariate_bound;
        Ok(Self {
            covariate_bound: m,
            outcome_bound,
            l1_radius,
            grad_bound: 2.0 * m * m * l1_radius + 4.0 * m * outcome_bound,
            hessian_trace_bound: 2.0 * m * m,
        })
    }

    /// Whether the gradient/trace bounds are the squared-loss instantiation
    /// of the stored (M, M_out, lambda1).
    pub fn is_consistent_itr(&self) -> bool {
        let m = self.covariate_bound;
        let zeta = 2.0 * m * m * self.l1_radius + 4.0 * m * self.outcome_bound;
        let trace = 2.0 * m * m;
        (self.grad_bound - zeta).abs() <= 1e-9 * zeta.max(1.0)
            && (self.hessian_trace_bound - trace).abs() <= 1e-9 * trace.max(1.0)
    }
}

/// Nonnegative weights summing to n (within `WEIGHT_SUM_RTOL * n`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len() as f64;
        if weights.is_empty() {
            return Err(Error::invalid("weight vector must be nonempty"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("weights must be finite and nonnegative, got {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - n).abs() > WEIGHT_SUM_RTOL * n {
            return Err(Error::invalid(format!(
                "weights must sum to n={n} within {:e} relative, got {sum}",
                WEIGHT_SUM_RTOL
            )));
        }
        Ok(Self(weights))
    }

    /// All-ones weights (the unweighted-ERM case).
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Two datasets of equal size differing in exactly the record at `index`
/// (or in none, when the replacement equals the original).
#[derive(Debug, Clone)]
pub struct NeighborPair {
    pub base: Dataset,
    pub perturbed: Dataset,
    pub index: usize,
}

/// Replace one record, checking the replacement against the bounds.
pub fn make_neighbor(
    dataset: &Dataset,
    index: usize,
    replacement: &Record,
    constants: &ProblemConstants,
) -> Result<NeighborPair> {
    if index >= dataset.n() {
        return Err(Error::invalid(format!(
            "neighbor index {index} out of range for n={}",
            dataset.n()
        )));
    }
    let norm = replacement.covariates.dot(&replacement.covariates).sqrt();
    if norm > constants.covariate_bound * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "replacement covariate norm {norm} exceeds bound {}",
            constants.covariate_bound
        )));
    }
    if !replacement.outcome.is_finite() || replacement.outcome.abs() > constants.outcome_bound {
        return Err(Error::invalid(format!(
            "replacement outcome {} outside [-{m}, {m}]",
            replacement.outcome,
            m = constants.outcome_bound
        )));
    }
    let perturbed = dataset.with_record(index, replacement)?;
    Ok(NeighborPair { base: dataset.clone(), perturbed, index })
}

/// Outcome of [`validate`]: one line per violated invariant.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Report every violated dataset invariant (norm bound, arm emptiness,
/// non-finite entries). Pure and idempotent.
pub fn validate(dataset: &Dataset, constants: &ProblemConstants) -> ValidationReport {
    let mut report = ValidationReport::default();
    if dataset.arm_indices(0).is_empty() {
        report.violations.push("control arm empty".to_string());
    }
    if dataset.arm_indices(1).is_empty() {
        report.violations.push("treated arm empty".to_string());
    }
    for i in 0..dataset.n() {
        let row = dataset.covariate_row(i);
        if row.iter().any(|v| !v.is_finite()) {
            report.violations.push(format!("non-finite covariate at row {i}"));
            continue;
        }
        let norm = row.dot(&row).sqrt();
        if norm > constants.covariate_bound * (1.0 + 1e-12) {
            report.violations.push(format!(
                "norm bound exceeded at row {i}: {norm} > {}",
                constants.covariate_bound
            ));
        }
    }
    for (i, y) in dataset.outcomes().iter().enumerate() {
        if !y.is_finite() {
            report.violations.push(format!("non-finite outcome at row {i}"));
        }
    }
    report
}

/// A dataset together with the evaluation columns an experiment may carry:
/// the true treatment contrast and the propensity of the observed arm.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub dataset: Dataset,
    pub contrast: Option<Vec<f64>>,
    pub propensity: Option<Vec<f64>>,
}

/// Read a dataset CSV with header `x1,...,xp,a,y` and optional trailing
/// truth columns `f_opt,pi`. Treatments must be -1 or 1.
pub fn read_dataset_csv(path: &Path) -> Result<EvalData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let a_col = cols
        .iter()
        .position(|c| *c == "a")
        .ok_or_else(|| Error::Csv(format!("{}: missing column `a`", path.display())))?;
    let y_col = cols
        .iter()
        .position(|c| *c == "y")
        .ok_or_else(|| Error::Csv(format!("{}: missing column `y`", path.display())))?;
    let fopt_col = cols.iter().position(|c| *c == "f_opt");
    let pi_col = cols.iter().position(|c| *c == "pi");
    let x_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with('x') && c[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    if x_cols.is_empty() {
        return Err(Error::Csv(format!("{}: no covariate columns x1..xp found", path.display())));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut treatments = Vec::new();
    let mut outcomes = Vec::new();
    let mut contrast = Vec::new();
    let mut propensity = Vec::new();
    for (row_idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(format!("{} row {}: {e}", path.display(), row_idx + 2)))?;
        let parse = |col: usize, name: &str| -> Result<f64> {
            rec.get(col)
                .ok_or_else(|| {
                    Error::Csv(format!("{} row {}: missing field {name}", path.display(), row_idx + 2))
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| {
                    Error::Csv(format!("{} row {}: column {name}: {e}", path.display(), row_idx + 2))
                })
        };
        for (j, &c) in x_cols.iter().enumerate() {
            xs.push(parse(c, &format!("x{}", j + 1))?);
        }
        let a = parse(a_col, "a")?;
        if a != 1.0 && a != -1.0 {
            return Err(Error::Csv(format!(
                "{} row {}: treatment must be -1 or 1, got {a}",
                path.display(),
                row_idx + 2
            )));
        }
        treatments.push(a as i8);
        outcomes.push(parse(y_col, "y")?);
        if let Some(c) = fopt_col {
            contrast.push(parse(c, "f_opt")?);
        }
        if let Some(c) = pi_col {
            propensity.push(parse(c, "pi")?);
        }
    }
    let n = treatments.len();
    let p = x_cols.len();
    let covariates = Array2::from_shape_vec((n, p), xs)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let dataset = Dataset::new(covariates, treatments, outcomes)?;
    Ok(EvalData {
        dataset,
        contrast: if fopt_col.is_some() { Some(contrast) } else { None },
        propensity: if pi_col.is_some() { Some(propensity) } else { None },
    })
}
