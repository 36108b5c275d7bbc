//! Experiment harness: replicate loops over (scenario x scheme x mechanism
//! x epsilon), the worst-case composition baseline, bootstrap tuning, and
//! result aggregation.
//!
//! Everything is keyed by deterministic RNG streams derived from
//! (seed, replicate, scheme, mechanism, epsilon index, stage), so a plan
//! re-run with the same seed reproduces its result table byte for byte
//! regardless of worker count.

pub mod io;

use crate::data::{Dataset, EvalData, ProblemConstants, WeightVector};
use crate::erm::{run_dp2erm_with_budget, solve_nonprivate, ErmSolution, ErmSpec};
use crate::error::{Error, Result};
use crate::itr::{accuracy, empirical_value, DecisionRule};
use crate::privacy::{stream_rng, Calibration, Mechanism, PrivacyParams};
use crate::stability::{budget_universal, scheme_budget, StabilityBudget};
use crate::weights::{EbwConfig, IpwConfig, MmdConfig, SchemeConfig};
use crate::optim::PgdOptions;
use crate::simgen::{generate, scenario_constants, ScenarioSpec};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeId {
    Ipw,
    Mmd,
    Ebw,
}

impl SchemeId {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeId::Ipw => "ipw",
            SchemeId::Mmd => "mmd",
            SchemeId::Ebw => "ebw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ipw" => Ok(SchemeId::Ipw),
            "mmd" => Ok(SchemeId::Mmd),
            "ebw" => Ok(SchemeId::Ebw),
            other => Err(Error::invalid(format!(
                "unknown scheme `{other}` (expected ipw, mmd, or ebw)"
            ))),
        }
    }

    fn index(&self) -> u64 {
        match self {
            SchemeId::Ipw => 0,
            SchemeId::Mmd => 1,
            SchemeId::Ebw => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    Fixed(f64),
    OneOverN,
}

impl DeltaRule {
    pub fn resolve(&self, n: usize) -> f64 {
        match self {
            DeltaRule::Fixed(d) => *d,
            DeltaRule::OneOverN => 1.0 / n as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Scenario(ScenarioSpec),
    Csv { path: PathBuf, train_fraction: f64 },
}

/// Grids searched by the bootstrap tuner. Single-point grids short-circuit
/// the bootstrap entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrids {
    pub ipw_ridge: Vec<f64>,
    pub ebw_ridge: Vec<f64>,
    pub mmd_ridge: Vec<f64>,
    pub l1_radius: Vec<f64>,
    pub bootstrap_resamples: usize,
}

impl Default for TuningGrids {
    fn default() -> Self {
        Self {
            ipw_ridge: vec![0.0, 1e-3, 1e-2, 1e-1, 1.0],
            ebw_ridge: vec![0.0, 1e-3, 1e-2, 1e-1, 1.0],
            mmd_ridge: vec![1e-2, 1e-1, 1.0, 10.0],
            l1_radius: vec![1.0, 5.0, 10.0, 20.0],
            bootstrap_resamples: 20,
        }
    }
}

impl TuningGrids {
    pub fn scheme_grid(&self, scheme: SchemeId) -> &[f64] {
        match scheme {
            SchemeId::Ipw => &self.ipw_ridge,
            SchemeId::Mmd => &self.mmd_ridge,
            SchemeId::Ebw => &self.ebw_ridge,
        }
    }
}

/// Fixed (non-tuned) scheme parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeDefaults {
    /// L2 ball radius for the estimated-propensity logistic parameter.
    pub ipw_radius: f64,
    /// L2 ball radius for the entropy-balancing dual variable.
    pub ebw_radius: f64,
    /// Mixing coefficient of the MMD objective.
    pub mmd_alpha: f64,
}

impl Default for SchemeDefaults {
    fn default() -> Self {
        Self { ipw_radius: 1.0, ebw_radius: 1.0, mmd_alpha: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub source: DataSource,
    pub schemes: Vec<SchemeId>,
    pub mechanisms: Vec<Mechanism>,
    /// Positive budgets; infinity is the non-private sentinel.
    pub epsilons: Vec<f64>,
    pub delta: DeltaRule,
    pub replicates: usize,
    pub seed: u64,
    pub grids: TuningGrids,
    pub defaults: SchemeDefaults,
    /// Also run every cell against the universal worst-case budget.
    pub baseline: bool,
    pub workers: Option<usize>,
    /// Record wall-clock times; off by default so identical seeds produce
    /// byte-identical result tables.
    pub timing: bool,
    pub solver: PgdOptions,
}

impl ExperimentPlan {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            schemes: vec![SchemeId::Ipw, SchemeId::Mmd, SchemeId::Ebw],
            mechanisms: vec![Mechanism::Gamma, Mechanism::Gaussian],
            epsilons: vec![0.01, 0.1, 1.0, 10.0, f64::INFINITY],
            delta: DeltaRule::OneOverN,
            replicates: 100,
            seed: 0,
            grids: TuningGrids::default(),
            defaults: SchemeDefaults::default(),
            baseline: false,
            workers: None,
            timing: false,
            solver: PgdOptions { tol: 1e-7, ..PgdOptions::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::invalid("epsilons must be nonempty and positive (inf allowed)"));
        }
        if self.schemes.is_empty() || self.mechanisms.is_empty() {
            return Err(Error::invalid("need at least one scheme and one mechanism"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("need at least one replicate"));
        }
        if let DataSource::Csv { train_fraction, .. } = &self.source {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(Error::invalid("train fraction must lie in (0,1)"));
            }
        }
        Ok(())
    }
}

/// One experiment cell outcome. Failed cells carry the error in `status`
/// and empty metrics; the run continues.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub replicate: usize,
    pub scheme: String,
    pub mechanism: String,
    pub epsilon: f64,
    pub accuracy: Option<f64>,
    pub value: Option<f64>,
    pub noise_scale: f64,
    pub gamma_ridge: f64,
    pub w1_bar: f64,
    pub w2_bar: f64,
    pub wall_time_ms: u64,
    pub seed: u64,
    pub status: String,
}

/// RNG stream stages within a cell.
mod stage {
    pub const DATA: u64 = 0;
    pub const TUNE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SPLIT: u64 = 3;
}

/// Pack the cell coordinates into disjoint bit ranges of a stream id, so
/// distinct cells always map to distinct streams.
pub fn cell_stream(
    replicate: usize,
    scheme: u64,
    mechanism: u64,
    eps_index: usize,
    baseline: bool,
    stage: u64,
) -> u64 {
    debug_assert!(stage < 16 && mechanism < 4 && scheme < 16 && eps_index < 256);
    stage
        | (eps_index as u64) << 4
        | mechanism << 12
        | (baseline as u64) << 14
        | scheme << 16
        | (replicate as u64) << 32
}

/// Tuned per-(replicate, scheme) parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChosenParams {
    pub scheme_ridge: f64,
    pub l1_radius: f64,
}

fn scheme_config(
    scheme: SchemeId,
    ridge: f64,
    defaults: &SchemeDefaults,
) -> Result<SchemeConfig> {
    Ok(match scheme {
        SchemeId::Ipw => {
            SchemeConfig::Ipw(IpwConfig::Estimated { radius: defaults.ipw_radius, ridge })
        }
        SchemeId::Mmd => SchemeConfig::Mmd(MmdConfig::new(defaults.mmd_alpha, ridge)?),
        SchemeId::Ebw => {
            let mut cfg = EbwConfig::new(defaults.ebw_radius, ridge)?;
            cfg.moments = crate::weights::Moments::First;
            SchemeConfig::Ebw(cfg)
        }
    })
}

/// Training-side inputs the tuner is allowed to see. Constructed from the
/// training split only, so test data cannot leak into tuning by design.
pub struct TrainBundle<'a> {
    pub dataset: &'a Dataset,
    /// Propensity of each record's observed arm (true, supplied, or
    /// estimated on the training split).
    pub propensity: &'a [f64],
    /// Problem constants for a given L1 radius.
    pub constants_for: &'a dyn Fn(f64) -> Result<ProblemConstants>,
}

/// Bootstrap-tune (scheme ridge, l1 radius) by out-of-bag empirical value.
///
/// For each grid point and each of `resamples` bootstrap draws, weights and
/// a rule are fit on the resample and scored by inverse-propensity value on
/// the out-of-bag records; the point with the best average wins. Ties break
/// toward stability: larger ridge first, then the smaller L1 radius.
pub fn bootstrap_tune(
    train: &TrainBundle<'_>,
    scheme: SchemeId,
    grids: &TuningGrids,
    defaults: &SchemeDefaults,
    rng: &mut ChaCha12Rng,
    opts: &PgdOptions,
) -> Result<ChosenParams> {
    let scheme_grid = grids.scheme_grid(scheme);
    if scheme_grid.is_empty() || grids.l1_radius.is_empty() {
        return Err(Error::invalid("tuning grids must be nonempty"));
    }
    // Preference order: larger scheme ridge, then smaller l1 radius.
    let mut candidates: Vec<ChosenParams> = Vec::new();
    let mut ridges = scheme_grid.to_vec();
    ridges.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut l1s = grids.l1_radius.clone();
    l1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for ridge in &ridges {
        for l1 in &l1s {
            candidates.push(ChosenParams { scheme_ridge: *ridge, l1_radius: *l1 });
        }
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }

    let b_total = grids.bootstrap_resamples.max(1);
    let mut scores = vec![0.0f64; candidates.len()];
    let mut counts = vec![0usize; candidates.len()];
    for _ in 0..b_total {
        let (resample, oob) = draw_bootstrap(train.dataset, rng)?;
        if oob.is_empty() {
            continue;
        }
        for (ci, cand) in candidates.iter().enumerate() {
            let fit = fit_candidate(train, &resample, cand, scheme, defaults, opts);
            let rule = match fit {
                Ok(rule) => rule,
                Err(_) => continue, // failed fits score nothing
            };
            let mut value = 0.0;
            for &i in &oob {
                if train.dataset.treatments()[i] == rule.decide(train.dataset.covariate_row(i)) {
                    value += train.dataset.outcomes()[i] / train.propensity[i];
                }
            }
            scores[ci] += value / oob.len() as f64;
            counts[ci] += 1;
        }
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for ci in 0..candidates.len() {
        let avg = if counts[ci] > 0 { scores[ci] / counts[ci] as f64 } else { f64::NEG_INFINITY };
        // Strict improvement required, so earlier (more stable) candidates
        // win ties.
        if avg > best_score {
            best_score = avg;
            best = ci;
        }
    }
    Ok(candidates[best])
}

fn fit_candidate(
    train: &TrainBundle<'_>,
    resample: &Dataset,
    cand: &ChosenParams,
    scheme: SchemeId,
    defaults: &SchemeDefaults,
    opts: &PgdOptions,
) -> Result<DecisionRule> {
    let cfg = scheme_config(scheme, cand.scheme_ridge, defaults)?;
    let weights = cfg.solve(resample, opts)?;
    let constants = (train.constants_for)(cand.l1_radius)?;
    let spec = ErmSpec::itr(constants)?;
    let sol = solve_nonprivate(resample, &weights, &spec, opts)?;
    Ok(DecisionRule::new(sol.theta))
}

/// Bootstrap resample with both arms present (up to 100 redraws), plus the
/// out-of-bag index list.
fn draw_bootstrap(dataset: &Dataset, rng: &mut ChaCha12Rng) -> Result<(Dataset, Vec<usize>)> {
    let n = dataset.n();
    for _ in 0..100 {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut seen = vec![false; n];
        let mut has = [false, false];
        for &i in &idx {
            seen[i] = true;
            has[if dataset.treatments()[i] == 1 { 1 } else { 0 }] = true;
        }
        if !(has[0] && has[1]) {
            continue;
        }
        let mut x = ndarray::Array2::zeros((n, dataset.p()));
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&dataset.covariate_row(i));
            a.push(dataset.treatments()[i]);
            y.push(dataset.outcomes()[i]);
        }
        let oob: Vec<usize> = (0..n).filter(|i| !seen[*i]).collect();
        return Ok((Dataset::new(x, a, y)?, oob));
    }
    Err(Error::invalid("bootstrap could not draw a two-arm resample in 100 attempts"))
}

/// The composition baseline: the identical pipeline with the
/// universal worst-case stability budget in place of the scheme bound.
pub fn composition_baseline(
    dataset: &Dataset,
    scheme: &SchemeConfig,
    spec: &ErmSpec,
    privacy: &PrivacyParams,
    rng: &mut ChaCha12Rng,
    opts: &PgdOptions,
) -> Result<(ErmSolution, WeightVector, Calibration)> {
    let weights = scheme.solve(dataset, opts)?;
    let budget = budget_universal(dataset.n());
    run_dp2erm_with_budget(dataset, weights, &budget, spec, privacy, rng, opts)
}

/// Run the whole plan; one row per (replicate, scheme[, baseline],
/// mechanism, epsilon), sorted deterministically.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<ResultRow>> {
    plan.validate()?;
    let csv_data = match &plan.source {
        DataSource::Csv { path, .. } => Some(crate::data::read_dataset_csv(path)?),
        DataSource::Scenario(_) => None,
    };
    let replicates: Vec<usize> = (0..plan.replicates).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let mut rows: Vec<ResultRow> = pool.install(|| {
        replicates
            .par_iter()
            .flat_map(|&r| run_replicate(plan, csv_data.as_ref(), r))
            .collect()
    });
    let scheme_order = |name: &str| -> usize {
        let base = match name.trim_end_matches("-comp") {
            "ipw" => 0,
            "mmd" => 1,
            "ebw" => 2,
            _ => 3,
        };
        base * 2 + usize::from(name.ends_with("-comp"))
    };
    rows.sort_by(|a, b| {
        (a.replicate, scheme_order(&a.scheme), a.mechanism.clone(), a.epsilon)
            .partial_cmp(&(b.replicate, scheme_order(&b.scheme), b.mechanism.clone(), b.epsilon))
            .unwrap()
    });
    Ok(rows)
}

fn error_rows(
    plan: &ExperimentPlan,
    replicate: usize,
    scheme_name: &str,
    message: &str,
) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for mech in &plan.mechanisms {
        for &eps in &plan.epsilons {
            rows.push(ResultRow {
                replicate,
                scheme: scheme_name.to_string(),
                mechanism: mech.name().to_string(),
                epsilon: eps,
                accuracy: None,
                value: None,
                noise_scale: 0.0,
                gamma_ridge: 0.0,
                w1_bar: 0.0,
                w2_bar: 0.0,
                wall_time_ms: 0,
                seed: plan.seed,
                status: message.to_string(),
            });
        }
    }
    rows
}

fn run_replicate(
    plan: &ExperimentPlan,
    csv_data: Option<&EvalData>,
    replicate: usize,
) -> Vec<ResultRow> {
    let prepared = prepare_replicate_data(plan, csv_data, replicate);
    let (train, train_propensity, test) = match prepared {
        Ok(t) => t,
        Err(e) => {
            let msg = format!("data: {e}");
            return plan
                .schemes
                .iter()
                .flat_map(|s| {
                    let mut rows = error_rows(plan, replicate, s.name(), &msg);
                    if plan.baseline {
                        rows.extend(error_rows(
                            plan,
                            replicate,
                            &format!("{}-comp", s.name()),
                            &msg,
                        ));
                    }
                    rows
                })
                .collect();
        }
    };

    let constants_for = make_constants_fn(plan, &train);
    let mut rows = Vec::new();
    for &scheme in &plan.schemes {
        // Tune once per (replicate, scheme) on the training bundle at the
        // non-private point; chosen parameters are reused across epsilon.
        let mut tune_rng = stream_rng(
            plan.seed,
            cell_stream(replicate, scheme.index(), 0, 0, false, stage::TUNE),
        );
        let bundle = TrainBundle {
            dataset: &train,
            propensity: &train_propensity,
            constants_for: &constants_for,
        };
        let tuned = match bootstrap_tune(
            &bundle,
            scheme,
            &plan.grids,
            &plan.defaults,
            &mut tune_rng,
            &plan.solver,
        ) {
            Ok(t) => t,
            Err(e) => {
                rows.extend(error_rows(plan, replicate, scheme.name(), &format!("tune: {e}")));
                continue;
            }
        };
        let stage1 = (|| -> Result<(SchemeConfig, WeightVector, ErmSpec, StabilityBudget)> {
            let cfg = scheme_config(scheme, tuned.scheme_ridge, &plan.defaults)?;
            let weights = cfg.solve(&train, &plan.solver)?;
            let constants = constants_for(tuned.l1_radius)?;
            let spec = ErmSpec::itr(constants)?;
            let budget = scheme_budget(&train, &cfg, &weights, spec.constants.covariate_bound)?;
            Ok((cfg, weights, spec, budget))
        })();
        let (_cfg, weights, spec, budget) = match stage1 {
            Ok(t) => t,
            Err(e) => {
                let msg = format!("stage1: {e}");
                rows.extend(error_rows(plan, replicate, scheme.name(), &msg));
                if plan.baseline {
                    rows.extend(error_rows(plan, replicate, &format!("{}-comp", scheme.name()), &msg));
                }
                continue;
            }
        };

        let universal = budget_universal(train.n());
        let budgets: Vec<(String, &StabilityBudget, bool)> = if plan.baseline {
            vec![
                (scheme.name().to_string(), &budget, false),
                (format!("{}-comp", scheme.name()), &universal, true),
            ]
        } else {
            vec![(scheme.name().to_string(), &budget, false)]
        };
        for (scheme_name, budget, is_baseline) in budgets {
            for (mi, mech) in plan.mechanisms.iter().enumerate() {
                for (ei, &eps) in plan.epsilons.iter().enumerate() {
                    let row = run_cell(
                        plan,
                        replicate,
                        &scheme_name,
                        scheme,
                        *mech,
                        mi as u64,
                        eps,
                        ei,
                        is_baseline,
                        &train,
                        &weights,
                        &spec,
                        budget,
                        &test,
                    );
                    rows.push(row);
                }
            }
        }
    }
    rows
}

type PreparedData = (Dataset, Vec<f64>, EvalData);

fn prepare_replicate_data(
    plan: &ExperimentPlan,
    csv_data: Option<&EvalData>,
    replicate: usize,
) -> Result<PreparedData> {
    match &plan.source {
        DataSource::Scenario(spec) => {
            let mut rng =
                stream_rng(plan.seed, cell_stream(replicate, 0, 0, 0, false, stage::DATA));
            let data = generate(spec, &mut rng)?;
            Ok((data.train, data.train_propensity, data.test))
        }
        DataSource::Csv { train_fraction, .. } => {
            let eval = csv_data.expect("csv source loaded in run_plan");
            let mut rng =
                stream_rng(plan.seed, cell_stream(replicate, 0, 0, 0, false, stage::SPLIT));
            split_eval(eval, *train_fraction, &mut rng)
        }
    }
}

/// Per-replicate random split of ingested data. The training propensity is
/// the supplied `pi` column when present, else estimated by ridge-free
/// constrained logistic regression on the training split.
fn split_eval(
    eval: &EvalData,
    train_fraction: f64,
    rng: &mut ChaCha12Rng,
) -> Result<PreparedData> {
    let n = eval.dataset.n();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(2, n.saturating_sub(2));
    for _ in 0..100 {
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates off the replicate stream.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let (train_idx, test_idx) = idx.split_at(n_train);
        let train = subset(&eval.dataset, train_idx)?;
        if train.require_both_arms().is_err() {
            continue;
        }
        let test = subset(&eval.dataset, test_idx)?;
        let test_contrast = eval
            .contrast
            .as_ref()
            .map(|c| test_idx.iter().map(|&i| c[i]).collect::<Vec<f64>>());
        let (train_propensity, test_propensity) = match &eval.propensity {
            Some(pi) => (
                train_idx.iter().map(|&i| pi[i]).collect::<Vec<f64>>(),
                test_idx.iter().map(|&i| pi[i]).collect::<Vec<f64>>(),
            ),
            None => estimate_propensities(&train, &test)?,
        };
        return Ok((
            train,
            train_propensity,
            EvalData { dataset: test, contrast: test_contrast, propensity: Some(test_propensity) },
        ));
    }
    Err(Error::invalid("could not draw a two-arm training split in 100 attempts"))
}

/// Logistic propensity fit on the training split, evaluated on both splits.
fn estimate_propensities(train: &Dataset, test: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let fit = crate::weights::ipw_estimated(train, 5.0, 1e-3, &PgdOptions::default())?;
    let score = |ds: &Dataset| -> Vec<f64> {
        (0..ds.n())
            .map(|i| {
                let z = ds.covariate_row(i).dot(&fit.lambda_hat);
                let p1 = 1.0 / (1.0 + (-z).exp());
                let p = if ds.treatments()[i] == 1 { p1 } else { 1.0 - p1 };
                p.clamp(1e-3, 1.0)
            })
            .collect()
    };
    Ok((score(train), score(test)))
}

fn subset(dataset: &Dataset, idx: &[usize]) -> Result<Dataset> {
    let mut x = ndarray::Array2::zeros((idx.len(), dataset.p()));
    let mut a = Vec::with_capacity(idx.len());
    let mut y = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        x.row_mut(r).assign(&dataset.covariate_row(i));
        a.push(dataset.treatments()[i]);
        y.push(dataset.outcomes()[i]);
    }
    Dataset::new(x, a, y)
}

fn make_constants_fn<'a>(
    plan: &'a ExperimentPlan,
    train: &'a Dataset,
) -> impl Fn(f64) -> Result<ProblemConstants> + 'a {
    move |l1: f64| match &plan.source {
        DataSource::Scenario(spec) => scenario_constants(spec, l1),
        DataSource::Csv { .. } => {
            // Bounds taken from the ingested data.
            let m = (0..train.n())
                .map(|i| {
                    let x = train.covariate_row(i);
                    x.dot(&x).sqrt()
                })
                .fold(0.0f64, f64::max)
                .max(1e-9);
            let m_out = train.outcomes().iter().fold(0.0f64, |acc, y| acc.max(y.abs()));
            ProblemConstants::for_itr(m, m_out, l1)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    plan: &ExperimentPlan,
    replicate: usize,
    scheme_name: &str,
    scheme: SchemeId,
    mechanism: Mechanism,
    mech_index: u64,
    epsilon: f64,
    eps_index: usize,
    is_baseline: bool,
    train: &Dataset,
    weights: &WeightVector,
    spec: &ErmSpec,
    budget: &StabilityBudget,
    test: &EvalData,
) -> ResultRow {
    let started = std::time::Instant::now();
    let delta = match mechanism {
        Mechanism::Gamma => 0.0,
        Mechanism::Gaussian => plan.delta.resolve(train.n()),
    };
    let outcome = (|| -> Result<(ErmSolution, Calibration)> {
        let privacy = PrivacyParams::new(epsilon, delta, mechanism)?;
        let mut rng = stream_rng(
            plan.seed,
            cell_stream(replicate, scheme.index(), mech_index, eps_index, is_baseline, stage::NOISE),
        );
        let (solution, _, calibration) = run_dp2erm_with_budget(
            train,
            weights.clone(),
            budget,
            spec,
            &privacy,
            &mut rng,
            &plan.solver,
        )?;
        Ok((solution, calibration))
    })();
    let wall_time_ms = if plan.timing { started.elapsed().as_millis() as u64 } else { 0 };
    match outcome {
        Ok((solution, calibration)) => {
            let rule = DecisionRule::new(solution.theta.clone());
            let acc = test
                .contrast
                .as_ref()
                .and_then(|c| accuracy(&rule, test.dataset.covariates(), c).ok());
            let value = test
                .propensity
                .as_ref()
                .and_then(|pi| empirical_value(&rule, &test.dataset, pi).ok());
            ResultRow {
                replicate,
                scheme: scheme_name.to_string(),
                mechanism: mechanism.name().to_string(),
                epsilon,
                accuracy: acc,
                value,
                noise_scale: calibration.noise_scale,
                gamma_ridge: calibration.gamma_ridge,
                w1_bar: budget.w1_bar,
                w2_bar: budget.w2_bar,
                wall_time_ms,
                seed: plan.seed,
                status: "ok".to_string(),
            }
        }
        Err(e) => ResultRow {
            replicate,
            scheme: scheme_name.to_string(),
            mechanism: mechanism.name().to_string(),
            epsilon,
            accuracy: None,
            value: None,
            noise_scale: 0.0,
            gamma_ridge: 0.0,
            w1_bar: budget.w1_bar,
            w2_bar: budget.w2_bar,
            wall_time_ms,
            seed: plan.seed,
            status: format!("cell: {e}"),
        },
    }
}

/// Per-(scheme, mechanism, epsilon) mean and sample standard deviation of
/// accuracy and empirical value across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub mechanism: String,
    pub epsilon: f64,
    pub replicates: usize,
    pub mean_accuracy: Option<f64>,
    pub sd_accuracy: Option<f64>,
    pub mean_value: Option<f64>,
    pub sd_value: Option<f64>,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, u64), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.scheme.clone(), row.mechanism.clone(), row.epsilon.to_bits()))
            .or_default()
            .push(row);
    }
    let mean_sd = |vals: &[f64]| -> (Option<f64>, Option<f64>) {
        if vals.is_empty() {
            return (None, None);
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (Some(mean), Some(sd))
    };
    let mut out = Vec::new();
    for ((scheme, mechanism, eps_bits), rows) in groups {
        let accs: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
        let (mean_accuracy, sd_accuracy) = mean_sd(&accs);
        let (mean_value, sd_value) = mean_sd(&vals);
        out.push(SummaryRow {
            scheme,
            mechanism,
            epsilon: f64::from_bits(eps_bits),
            replicates: rows.len(),
            mean_accuracy,
            sd_accuracy,
            mean_value,
            sd_value,
        });
    }
    // BTreeMap ordering by bits puts inf last among positives already, but
    // order explicitly for readability.
    out.sort_by(|a, b| {
        (a.scheme.clone(), a.mechanism.clone(), a.epsilon)
            .partial_cmp(&(b.scheme.clone(), b.mechanism.clone(), b.epsilon))
            .unwrap()
    });
    out
}
