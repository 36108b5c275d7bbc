//! Command-line front end: scenario simulation, CSV-mode experiments,
//! single-shot weight solves, privacy calibration, and result summaries.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
//! Configuration precedence: flags > environment (DP2ERM_SEED, DP2ERM_OUT)
//! > plan file > built-in defaults.

use clap::{Args, Parser, Subcommand};
use dp2erm_core::bench::io::{
    format_summary_table, parse_plan_file, read_results_csv, write_plot_data, write_results_csv,
    write_summary_csv, write_weights_csv, RunMetadata,
};
use dp2erm_core::bench::{
    summarize, DataSource, DeltaRule, ExperimentPlan, SchemeDefaults, SchemeId, TuningGrids,
};
use dp2erm_core::data::{read_dataset_csv, ProblemConstants};
use dp2erm_core::error::Error;
use dp2erm_core::optim::PgdOptions;
use dp2erm_core::privacy::{calibrate, Mechanism, PrivacyParams};
use dp2erm_core::simgen::{Scenario, ScenarioSpec};
use dp2erm_core::stability::{budget_universal, BudgetProvenance, StabilityBudget};
use dp2erm_core::weights::{ebw_weights, ipw_estimated, mmd_weights, EbwConfig, MmdConfig};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dp2erm", version, about = "Differentially private two-stage ERM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic-scenario experiment grid and write results.
    Simulate(SimulateArgs),
    /// Run the experiment grid on an ingested dataset CSV.
    Run(RunArgs),
    /// Solve one stage-1 weighting problem and write the weights.
    Weights(WeightsArgs),
    /// Print the noise scale and ridge for a privacy configuration.
    Calibrate(CalibrateArgs),
    /// Aggregate a results CSV into per-cell means and deviations.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Plan file with `key = value` lines (lowest-precedence config).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; unset draws from system entropy and prints it.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated schemes (ipw,mmd,ebw).
    #[arg(long)]
    schemes: Option<String>,
    /// Comma-separated mechanisms (gamma,gaussian).
    #[arg(long)]
    mechanisms: Option<String>,
    /// Comma-separated privacy budgets; `inf` for the non-private run.
    #[arg(long)]
    eps: Option<String>,
    /// Gaussian delta: a number or `1/n`.
    #[arg(long)]
    delta: Option<String>,
    /// Replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Also run the worst-case composition baseline.
    #[arg(long)]
    baseline: bool,
    /// Record wall-clock times (off keeps reruns byte-identical).
    #[arg(long)]
    timing: bool,
    /// L1-radius tuning grid, comma-separated.
    #[arg(long)]
    l1_grid: Option<String>,
    /// IPW ridge tuning grid, comma-separated.
    #[arg(long)]
    ipw_ridge_grid: Option<String>,
    /// EBW ridge tuning grid, comma-separated.
    #[arg(long)]
    ebw_ridge_grid: Option<String>,
    /// MMD ridge tuning grid, comma-separated.
    #[arg(long)]
    mmd_ridge_grid: Option<String>,
    /// Bootstrap resamples used by tuning.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// L2 radius of the estimated-propensity parameter ball.
    #[arg(long)]
    ipw_radius: Option<f64>,
    /// L2 radius of the entropy-balancing dual ball.
    #[arg(long)]
    ebw_radius: Option<f64>,
    /// MMD mixing coefficient.
    #[arg(long)]
    mmd_alpha: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario id: linear, tree, or nonlinear.
    #[arg(long)]
    scenario: Option<String>,
    /// Training size.
    #[arg(long)]
    n: Option<usize>,
    /// Test size.
    #[arg(long)]
    n_test: Option<usize>,
    /// Covariate dimension (>= 5).
    #[arg(long)]
    p: Option<usize>,
    /// Read the tree branch condition as X1 < -0.5 instead of the literal
    /// 2 X1 < -0.5.
    #[arg(long)]
    tree_plain_threshold: bool,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset CSV with header x1,...,xp,a,y and optional f_opt,pi columns.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Fraction of rows used for training in each replicate split.
    #[arg(long)]
    train_frac: Option<f64>,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args)]
struct WeightsArgs {
    /// Dataset CSV.
    #[arg(long)]
    csv: PathBuf,
    /// Scheme: ipw, mmd, or ebw.
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    lambda_ipw: Option<f64>,
    #[arg(long)]
    lambda_mmd: Option<f64>,
    #[arg(long)]
    lambda_ebw: Option<f64>,
    /// Ball radius (IPW parameter / EBW dual).
    #[arg(long)]
    radius: Option<f64>,
    /// MMD mixing coefficient.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output weights CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// gamma or gaussian.
    #[arg(long)]
    mechanism: String,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Per-sample gradient bound.
    #[arg(long)]
    zeta: f64,
    /// Hessian-trace bound.
    #[arg(long)]
    lam: f64,
    /// Stability aggregate W1; pass with --w2, or use --universal.
    #[arg(long)]
    w1: Option<f64>,
    /// Stability aggregate W2.
    #[arg(long)]
    w2: Option<f64>,
    /// Use the worst-case budget at the given n.
    #[arg(long)]
    universal: bool,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Results CSV produced by simulate or run.
    #[arg(long)]
    results: PathBuf,
    /// Optional summary CSV output; prints a table either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version pseudo-errors exit 0; real usage errors
            // exit 1 per the interface contract.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Run(args) => cmd_run(args),
        Command::Weights(args) => cmd_weights(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Summarize(args) => cmd_summarize(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

type CliResult = Result<(), Error>;

fn parse_list_f64(s: &str, what: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|tok| {
            let tok = tok.trim();
            if tok.eq_ignore_ascii_case("inf") {
                Ok(f64::INFINITY)
            } else {
                tok.parse::<f64>().map_err(|e| Error::invalid(format!("{what}: `{tok}`: {e}")))
            }
        })
        .collect()
}

/// Configuration layers below the flags: environment, then plan file.
struct Layers {
    plan_map: BTreeMap<String, String>,
    env_seed: Option<u64>,
    env_out: Option<PathBuf>,
}

impl Layers {
    fn load(plan_path: &Option<PathBuf>) -> Result<Self, Error> {
        let plan_map = match plan_path {
            Some(p) => parse_plan_file(p)?,
            None => BTreeMap::new(),
        };
        let env_seed = match std::env::var("DP2ERM_SEED") {
            Ok(v) => Some(
                v.parse::<u64>().map_err(|e| Error::invalid(format!("DP2ERM_SEED `{v}`: {e}")))?,
            ),
            Err(_) => None,
        };
        let env_out = std::env::var("DP2ERM_OUT").ok().map(PathBuf::from);
        Ok(Self { plan_map, env_seed, env_out })
    }

    fn plan_str(&self, key: &str) -> Option<&str> {
        self.plan_map.get(key).map(|s| s.as_str())
    }

    fn plan_parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, Error>
    where
        T::Err: std::fmt::Display,
    {
        match self.plan_map.get(key) {
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::invalid(format!("plan key {key} = `{v}`: {e}"))),
            None => Ok(None),
        }
    }
}

/// Merge the shared plan arguments over environment, plan file, defaults.
fn build_plan(args: &PlanArgs, source: DataSource) -> Result<(ExperimentPlan, PathBuf), Error> {
    let layers = Layers::load(&args.plan)?;
    let mut plan = ExperimentPlan::new(source);

    plan.seed = match args.seed.or(layers.env_seed) {
        Some(s) => s,
        None => match layers.plan_parse::<u64>("seed")? {
            Some(s) => s,
            None => {
                let s: u64 = rand::random();
                println!("seed drawn from system entropy: {s}");
                s
            }
        },
    };
    let schemes_src =
        args.schemes.as_deref().or_else(|| layers.plan_str("schemes")).unwrap_or("ipw,mmd,ebw");
    plan.schemes =
        schemes_src.split(',').map(|s| SchemeId::parse(s.trim())).collect::<Result<Vec<_>, _>>()?;
    let mech_src = args
        .mechanisms
        .as_deref()
        .or_else(|| layers.plan_str("mechanisms"))
        .unwrap_or("gamma,gaussian");
    plan.mechanisms =
        mech_src.split(',').map(|s| Mechanism::parse(s.trim())).collect::<Result<Vec<_>, _>>()?;
    if let Some(eps) = args.eps.as_deref().or_else(|| layers.plan_str("eps")) {
        plan.epsilons = parse_list_f64(eps, "eps")?;
    }
    if let Some(delta) = args.delta.as_deref().or_else(|| layers.plan_str("delta")) {
        plan.delta = if delta.trim() == "1/n" {
            DeltaRule::OneOverN
        } else {
            DeltaRule::Fixed(
                delta
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("delta `{delta}`: {e}")))?,
            )
        };
    }
    if let Some(reps) = args.reps.or(layers.plan_parse("reps")?) {
        plan.replicates = reps;
    }
    plan.workers = args.workers.or(layers.plan_parse("workers")?);
    plan.baseline = args.baseline || layers.plan_parse::<bool>("baseline")?.unwrap_or(false);
    plan.timing = args.timing || layers.plan_parse::<bool>("timing")?.unwrap_or(false);

    let mut grids = TuningGrids::default();
    let grid_of = |flag: &Option<String>, key: &str, fallback: &[f64]| -> Result<Vec<f64>, Error> {
        match flag.as_deref().or_else(|| layers.plan_str(key)) {
            Some(s) => parse_list_f64(s, key),
            None => Ok(fallback.to_vec()),
        }
    };
    grids.l1_radius = grid_of(&args.l1_grid, "l1_grid", &grids.l1_radius.clone())?;
    grids.ipw_ridge = grid_of(&args.ipw_ridge_grid, "ipw_ridge_grid", &grids.ipw_ridge.clone())?;
    grids.ebw_ridge = grid_of(&args.ebw_ridge_grid, "ebw_ridge_grid", &grids.ebw_ridge.clone())?;
    grids.mmd_ridge = grid_of(&args.mmd_ridge_grid, "mmd_ridge_grid", &grids.mmd_ridge.clone())?;
    if let Some(b) = args.bootstrap.or(layers.plan_parse("bootstrap")?) {
        grids.bootstrap_resamples = b;
    }
    plan.grids = grids;

    let mut defaults = SchemeDefaults::default();
    if let Some(v) = args.ipw_radius.or(layers.plan_parse("ipw_radius")?) {
        defaults.ipw_radius = v;
    }
    if let Some(v) = args.ebw_radius.or(layers.plan_parse("ebw_radius")?) {
        defaults.ebw_radius = v;
    }
    if let Some(v) = args.mmd_alpha.or(layers.plan_parse("mmd_alpha")?) {
        defaults.mmd_alpha = v;
    }
    plan.defaults = defaults;

    let out = args
        .out
        .clone()
        .or_else(|| layers.env_out.clone())
        .or_else(|| layers.plan_str("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((plan, out))
}

fn plan_metadata(plan: &ExperimentPlan) -> RunMetadata {
    let mut meta = RunMetadata::new(plan.seed);
    match &plan.source {
        DataSource::Scenario(spec) => {
            meta.push("mode", "simulate");
            meta.push("scenario", spec.scenario.name());
            meta.push("n_train", spec.n_train);
            meta.push("n_test", spec.n_test);
            meta.push("p", spec.p);
            meta.push("tree_literal_threshold", spec.tree_literal_threshold);
        }
        DataSource::Csv { path, train_fraction } => {
            meta.push("mode", "run");
            meta.push("csv", path.display());
            meta.push("train_fraction", train_fraction);
        }
    }
    meta.push("schemes", plan.schemes.iter().map(|s| s.name()).collect::<Vec<_>>().join(","));
    meta.push(
        "mechanisms",
        plan.mechanisms.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
    );
    meta.push(
        "epsilons",
        plan.epsilons
            .iter()
            .map(|e| if e.is_infinite() { "inf".to_string() } else { e.to_string() })
            .collect::<Vec<_>>()
            .join(","),
    );
    meta.push(
        "delta",
        match plan.delta {
            DeltaRule::OneOverN => "1/n".to_string(),
            DeltaRule::Fixed(d) => d.to_string(),
        },
    );
    meta.push("replicates", plan.replicates);
    meta.push("baseline", plan.baseline);
    meta.push("timing", plan.timing);
    meta.push("l1_grid", join_f64(&plan.grids.l1_radius));
    meta.push("ipw_ridge_grid", join_f64(&plan.grids.ipw_ridge));
    meta.push("ebw_ridge_grid", join_f64(&plan.grids.ebw_ridge));
    meta.push("mmd_ridge_grid", join_f64(&plan.grids.mmd_ridge));
    meta.push("bootstrap", plan.grids.bootstrap_resamples);
    meta.push("ipw_radius", plan.defaults.ipw_radius);
    meta.push("ebw_radius", plan.defaults.ebw_radius);
    meta.push("mmd_alpha", plan.defaults.mmd_alpha);
    meta.push("solver_tol", plan.solver.tol);
    meta
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn execute_plan(plan: &ExperimentPlan, out_dir: &PathBuf) -> CliResult {
    std::fs::create_dir_all(out_dir)?;
    let rows = dp2erm_core::bench::run_plan(plan)?;
    let meta = plan_metadata(plan);
    let results_path = out_dir.join("results.csv");
    write_results_csv(&results_path, &rows, &meta)?;
    let summaries = summarize(&rows);
    write_summary_csv(&out_dir.join("summary.csv"), &summaries, &meta)?;
    write_plot_data(out_dir, &summaries, &meta)?;
    std::fs::write(out_dir.join("metadata.txt"), meta.comment_block())?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("wrote {} rows to {} ({failed} failed cells)", rows.len(), results_path.display());
    print!("{}", format_summary_table(&summaries));
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    let layers = Layers::load(&args.plan.plan)?;
    let scenario_name = args
        .scenario
        .as_deref()
        .or_else(|| layers.plan_str("scenario"))
        .unwrap_or("linear")
        .to_string();
    let mut spec = ScenarioSpec::new(Scenario::parse(&scenario_name)?);
    if let Some(n) = args.n.or(layers.plan_parse("n")?) {
        spec.n_train = n;
    }
    if let Some(n) = args.n_test.or(layers.plan_parse("n_test")?) {
        spec.n_test = n;
    }
    if let Some(p) = args.p.or(layers.plan_parse("p")?) {
        spec.p = p;
    }
    if args.tree_plain_threshold {
        spec.tree_literal_threshold = false;
    } else if let Some(lit) = layers.plan_parse::<bool>("tree_literal")? {
        spec.tree_literal_threshold = lit;
    }
    spec.validate()?;
    let (plan, out) = build_plan(&args.plan, DataSource::Scenario(spec))?;
    execute_plan(&plan, &out)
}

fn cmd_run(args: RunArgs) -> CliResult {
    let layers = Layers::load(&args.plan.plan)?;
    let csv = match args.csv.or_else(|| layers.plan_str("csv").map(PathBuf::from)) {
        Some(p) => p,
        None => return Err(Error::invalid("run mode needs --csv (or `csv` in the plan file)")),
    };
    if !csv.exists() {
        return Err(Error::invalid(format!("csv file {} does not exist", csv.display())));
    }
    let train_fraction = args.train_frac.or(layers.plan_parse("train_frac")?).unwrap_or(0.10);
    let (plan, out) = build_plan(&args.plan, DataSource::Csv { path: csv, train_fraction })?;
    execute_plan(&plan, &out)
}

fn cmd_weights(args: WeightsArgs) -> CliResult {
    let eval = read_dataset_csv(&args.csv)?;
    let ds = &eval.dataset;
    let opts = PgdOptions::default();
    let mut meta = RunMetadata::new(0);
    meta.push("mode", "weights");
    meta.push("csv", args.csv.display());
    meta.push("scheme", &args.scheme);
    let weights: Vec<f64> = match args.scheme.as_str() {
        "ipw" => {
            let radius = args.radius.unwrap_or(1.0);
            let ridge = args.lambda_ipw.unwrap_or(0.0);
            meta.push("radius", radius);
            meta.push("lambda_ipw", ridge);
            let fit = ipw_estimated(ds, radius, ridge, &opts)?;
            meta.push("lambda_hat_norm", fit.lambda_hat.dot(&fit.lambda_hat).sqrt());
            meta.push("clamped_exponents", fit.clamped);
            meta.push("solver_iterations", fit.diagnostics.iterations);
            fit.weights.as_slice().to_vec()
        }
        "mmd" => {
            let alpha = args.alpha.unwrap_or(0.5);
            let ridge = args.lambda_mmd.unwrap_or(1.0);
            let cfg = MmdConfig::new(alpha, ridge)?;
            meta.push("alpha", alpha);
            meta.push("lambda_mmd", ridge);
            let sol = mmd_weights(ds, &cfg, &opts)?;
            meta.push("kkt_residual", sol.diagnostics.grad_map_norm);
            meta.push("weight_cap", sol.cap);
            sol.weights.as_slice().to_vec()
        }
        "ebw" => {
            let radius = args.radius.unwrap_or(1.0);
            let ridge = args.lambda_ebw.unwrap_or(0.0);
            let cfg = EbwConfig::new(radius, ridge)?;
            meta.push("radius", radius);
            meta.push("lambda_ebw", ridge);
            let sol = ebw_weights(ds, &cfg, &opts)?;
            meta.push("max_moment_residual", sol.max_moment_residual());
            meta.push("moment_scale", sol.scale);
            meta.push("dual_norm_constraint_active", sol.constraint_active);
            sol.weights.as_slice().to_vec()
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown scheme `{other}` (expected ipw, mmd, or ebw)"
            )))
        }
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from("weights.csv"));
    write_weights_csv(&out, &weights, &meta)?;
    let sum: f64 = weights.iter().sum();
    println!("wrote {} weights (sum {sum}) to {}", weights.len(), out.display());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult {
    let mechanism = Mechanism::parse(&args.mechanism)?;
    let privacy = PrivacyParams::new(args.eps, args.delta, mechanism)?;
    let budget = if args.universal {
        budget_universal(args.n)
    } else {
        match (args.w1, args.w2) {
            (Some(w1), Some(w2)) => StabilityBudget {
                w1_bar: w1,
                w2_bar: w2,
                scheme: "supplied".to_string(),
                provenance: BudgetProvenance::SchemeBound,
            },
            _ => {
                return Err(Error::invalid(
                    "pass both --w1 and --w2, or --universal for the worst-case budget",
                ))
            }
        }
    };
    // The calibration consumes only the gradient and trace bounds; the
    // remaining constants are placeholders in this report.
    let constants = ProblemConstants {
        covariate_bound: 1.0,
        outcome_bound: 1.0,
        l1_radius: 1.0,
        grad_bound: args.zeta,
        hessian_trace_bound: args.lam,
    };
    let cal = calibrate(&privacy, &constants, &budget, args.n, args.p)?;
    println!("mechanism   = {}", mechanism.name());
    println!("epsilon     = {}", args.eps);
    println!("delta       = {}", args.delta);
    println!("w1_bar      = {}", budget.w1_bar);
    println!("w2_bar      = {}", budget.w2_bar);
    println!(
        "provenance  = {}",
        match budget.provenance {
            BudgetProvenance::Universal => "universal",
            BudgetProvenance::SchemeBound => "scheme-bound",
        }
    );
    println!("noise_scale = {}", cal.noise_scale);
    println!("gamma_ridge = {}", cal.gamma_ridge);
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> CliResult {
    let rows = read_results_csv(&args.results)?;
    if rows.is_empty() {
        return Err(Error::invalid("results file has no rows"));
    }
    let summaries = summarize(&rows);
    if let Some(out) = &args.out {
        let meta = RunMetadata::new(rows[0].seed);
        write_summary_csv(out, &summaries, &meta)?;
    }
    print!("{}", format_summary_table(&summaries));
    Ok(())
}
