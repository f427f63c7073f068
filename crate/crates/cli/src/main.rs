use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use coxdebias_cli::{
    bench, classify_core_error, config, contrast, csvio,
    manifest::{digest_file, RunManifest},
    output, runner, CliError, CliResult, StageClock,
};
use coxdebias_core::data::{risk_index, standardize, StandardizeMode};
use coxdebias_core::inference;
use coxdebias_core::lasso::CvLoss;
use coxdebias_core::linalg::Mat;
use coxdebias_core::sim::{
    self, fit_debias_stage, fit_lasso_stage, FitOptions, GammaRule, LambdaRule,
};

#[derive(Parser)]
#[command(
    name = "coxdebias",
    version,
    about = "Debiased-lasso estimation and inference for Cox proportional hazards models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the l1-penalized Cox model (fixed or cross-validated penalty)
    Fit(FitArgs),
    /// Debiased estimates, confidence intervals, Wald and chi-square tests
    Infer(InferArgs),
    /// Replicated synthetic experiments driven by a TOML scenario
    Simulate(SimulateArgs),
    /// Timing harnesses
    Bench {
        #[command(subcommand)]
        target: BenchTarget,
    },
}

#[derive(Subcommand)]
enum BenchTarget {
    /// Per-row wall time and active-set size of the inverse-information QPs
    Qp(BenchArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV with a header row
    data: PathBuf,
    /// Name of the observed-time column
    #[arg(long, default_value = "time")]
    time_col: String,
    /// Name of the event-indicator column
    #[arg(long, default_value = "status")]
    status_col: String,
    /// Covariate standardization applied before fitting
    #[arg(long, default_value = "none", value_parser = parse_standardize)]
    standardize: StandardizeMode,
}

fn parse_standardize(s: &str) -> Result<StandardizeMode, String> {
    match s {
        "none" => Ok(StandardizeMode::None),
        "center" => Ok(StandardizeMode::Center),
        "zscore" => Ok(StandardizeMode::Zscore),
        other => Err(format!("unknown mode `{other}` (none | center | zscore)")),
    }
}

#[derive(Args, Clone)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fixed penalty level; omitted means K-fold cross-validation
    #[arg(long)]
    lambda: Option<f64>,
    /// Cross-validation folds for the penalty
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Penalty grid size
    #[arg(long, default_value_t = 50)]
    grid_count: usize,
    /// Smallest grid penalty as a fraction of the largest
    #[arg(long, default_value_t = 0.01)]
    grid_ratio: f64,
    /// Cross-validation loss (held-out | vvh)
    #[arg(long, default_value = "held-out")]
    cv_loss: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fixed penalty level; omitted means 10-fold cross-validation
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 10)]
    lambda_folds: usize,
    /// Fixed constraint width; omitted means K-fold cross-validation
    #[arg(long)]
    gamma: Option<f64>,
    /// Cross-validation folds for the constraint width
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Confidence/test level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bonferroni level of the hard-thresholding step
    #[arg(long, default_value_t = 0.1)]
    threshold_alpha: f64,
    /// Denominator of the thresholding statistic (sqrt-diag | diag)
    #[arg(long, default_value = "sqrt-diag")]
    threshold_denominator: String,
    /// Wald test of a linear contrast, e.g. "x2-x3=0" (repeatable)
    #[arg(long)]
    contrast: Vec<String>,
    /// Joint chi-square test of listed covariates, e.g. "x2,x3" (repeatable)
    #[arg(long)]
    joint: Vec<String>,
    /// Export the inverse-information matrix as CSV with a JSON sidecar
    #[arg(long)]
    export_theta: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Worker threads for the fold and row solves (default: logical cores)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SimulateArgs {
    /// Scenario TOML file (or use --preset)
    config: Option<PathBuf>,
    /// Bundled scenario (tuning_sweep | independent_p100 | independent_p50)
    #[arg(long)]
    preset: Option<String>,
    /// Re-run the scenario stored in a manifest
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Override the replication count
    #[arg(long)]
    replications: Option<usize>,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct BenchArgs {
    /// Dimensions to benchmark
    #[arg(long, value_delimiter = ',', default_values_t = vec![20usize, 100, 200])]
    p_grid: Vec<usize>,
    /// Constraint widths as multipliers of sqrt(log(p)/n)
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.3f64, 1.0, 2.0])]
    gamma_multipliers: Vec<f64>,
    /// Datasets per cell
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench {
            target: BenchTarget::Qp(args),
        } => cmd_bench_qp(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn load_standardized(
    data: &DataArgs,
) -> CliResult<(
    coxdebias_core::data::SurvivalDataset,
    Vec<String>,
    coxdebias_core::data::ScalingInfo,
)> {
    let loaded = csvio::load_csv(&data.data, &data.time_col, &data.status_col)?;
    let (ds, scaling) =
        standardize(&loaded.dataset, data.standardize).map_err(classify_core_error)?;
    Ok((ds, loaded.covariate_names, scaling))
}

fn cmd_fit(args: FitArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    let mut clock = StageClock::new();
    let (ds, names, scaling) = clock.time("load", || load_standardized(&args.data))?;
    let index = risk_index(&ds);
    let cv_loss = match args.cv_loss.as_str() {
        "held-out" => CvLoss::HeldOut,
        "vvh" => CvLoss::VerweijVanHouwelingen,
        other => return Err(CliError::Parse(format!("unknown cv loss `{other}`"))),
    };
    let opts = FitOptions {
        lambda: match args.lambda {
            Some(v) => LambdaRule::Fixed { value: v },
            None => LambdaRule::Cv,
        },
        lambda_folds: args.folds,
        lambda_grid_count: args.grid_count,
        lambda_grid_ratio: args.grid_ratio,
        cv_loss,
        tol: args.tol,
        max_iter: args.max_iter,
        ..FitOptions::default()
    };
    let rng = coxdebias_core::rng::SplitMix64::new(args.seed);
    let stage = clock
        .time("fit", || fit_lasso_stage(&ds, &index, &opts, &rng))
        .map_err(classify_core_error)?;

    let config = json!({
        "data": args.data.data.display().to_string(),
        "time_col": args.data.time_col,
        "status_col": args.data.status_col,
        "standardize": args.data.standardize,
        "lambda": args.lambda,
        "folds": args.folds,
        "grid_count": args.grid_count,
        "grid_ratio": args.grid_ratio,
        "cv_loss": args.cv_loss,
        "tol": args.tol,
        "max_iter": args.max_iter,
    });
    let digests = vec![digest_file(&args.data.data)?];
    let man = RunManifest::new("fit", config, vec![args.seed], digests).with_timings(&clock);

    let beta_original: Vec<f64> = stage
        .fit
        .beta
        .iter()
        .enumerate()
        .map(|(j, b)| scaling.to_original_scale(j, *b))
        .collect();
    output::write_json(
        &args.out.join("coxfit.json"),
        &man.digest,
        "coxfit",
        json!({
            "fit": stage.fit,
            "beta_original_scale": beta_original,
            "covariates": names,
            "scaling": scaling,
            "ties": "breslow",
        }),
    )?;
    if let Some(curve) = &stage.lambda_curve {
        output::write_json(
            &args.out.join("cv_lambda.json"),
            &man.digest,
            "cv_lambda",
            json!({ "curve": curve }),
        )?;
    }
    man.write(&args.out.join("manifest.json"))?;
    println!(
        "fit: lambda = {:.6e}, {} nonzero of {}, converged = {}",
        stage.lambda,
        stage.fit.beta.iter().filter(|b| **b != 0.0).count(),
        ds.p(),
        stage.fit.converged
    );
    Ok(())
}

fn cmd_infer(args: InferArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    let mut clock = StageClock::new();
    let (ds, names, scaling) = clock.time("load", || load_standardized(&args.data))?;
    let index = risk_index(&ds);
    let denominator = config::parse_denominator(&args.threshold_denominator)?;
    let opts = FitOptions {
        lambda: match args.lambda {
            Some(v) => LambdaRule::Fixed { value: v },
            None => LambdaRule::Cv,
        },
        lambda_folds: args.lambda_folds,
        gamma: match args.gamma {
            Some(v) => GammaRule::Fixed { value: v },
            None => GammaRule::Cv,
        },
        gamma_folds: args.folds,
        threshold_alpha: args.threshold_alpha,
        threshold_denominator: denominator,
        tol: args.tol,
        max_iter: args.max_iter,
        ..FitOptions::default()
    };
    let threads = args.threads.unwrap_or_else(runner::default_threads);
    let rng = coxdebias_core::rng::SplitMix64::new(args.seed);
    let stage = clock
        .time("lasso", || fit_lasso_stage(&ds, &index, &opts, &rng))
        .map_err(classify_core_error)?;
    // same staging as the core pipeline, with the fold and row solves
    // spread across threads (bit-identical reductions)
    let debias = clock
        .time("debias", || -> coxdebias_core::Result<_> {
            let sigma = coxdebias_core::kernel::sigma_hat(&ds, &index, &stage.fit.beta)?;
            let grid_storage;
            let grid: &[f64] = match &opts.gamma_grid {
                Some(g) => g,
                None => {
                    grid_storage = coxdebias_core::theta::default_gamma_grid(ds.p(), ds.n());
                    &grid_storage
                }
            };
            let (gamma, gamma_curve) = match opts.gamma {
                GammaRule::Fixed { value } => (value, None),
                GammaRule::Cv => {
                    let lambda = stage.lambda;
                    let (tol, max_iter) = (opts.tol, opts.max_iter);
                    let builder = |train: &coxdebias_core::data::SurvivalDataset| {
                        let train_index = risk_index(train);
                        let fit = coxdebias_core::lasso::fit_lasso(
                            train,
                            &train_index,
                            lambda,
                            &[],
                            tol,
                            max_iter,
                        )?;
                        let sigma =
                            coxdebias_core::kernel::sigma_hat(train, &train_index, &fit.beta)?;
                        Ok((fit.beta, sigma))
                    };
                    let curve = runner::cv_gamma_parallel(
                        &ds,
                        &builder,
                        grid,
                        opts.gamma_folds,
                        opts.threshold_alpha,
                        rng.child_seed(2),
                        opts.threshold_denominator,
                        opts.qp_tol,
                        threads,
                    )?;
                    (curve.grid[curve.chosen], Some(curve))
                }
            };
            let theta = runner::estimate_theta_parallel(&sigma, gamma, opts.qp_tol, threads)?;
            let score_at_fit = coxdebias_core::kernel::score(&ds, &index, &stage.fit.beta)?;
            let debiased = inference::debias(&stage.fit.beta, &theta, &score_at_fit)?;
            Ok(coxdebias_core::sim::DebiasStage {
                sigma,
                gamma,
                gamma_curve,
                theta,
                score_at_fit,
                debiased,
            })
        })
        .map_err(classify_core_error)?;
    let inf = inference::infer_coordinates(&debias.debiased, &debias.theta, ds.n(), args.alpha)
        .map_err(classify_core_error)?;
    let table = inference::report_table(&inf, &names).map_err(classify_core_error)?;
    // map back to the original covariate scale (identity unless standardized)
    let table_original = {
        let mut t = table.clone();
        for (j, row) in t.rows.iter_mut().enumerate() {
            row.estimate = scaling.to_original_scale(j, row.estimate);
            row.se = scaling.to_original_scale(j, row.se);
            row.ci_lower = scaling.to_original_scale(j, row.ci_lower);
            row.ci_upper = scaling.to_original_scale(j, row.ci_upper);
        }
        t
    };

    let config_json = json!({
        "data": args.data.data.display().to_string(),
        "time_col": args.data.time_col,
        "status_col": args.data.status_col,
        "standardize": args.data.standardize,
        "lambda": args.lambda,
        "lambda_folds": args.lambda_folds,
        "gamma": args.gamma,
        "gamma_folds": args.folds,
        "alpha": args.alpha,
        "threshold_alpha": args.threshold_alpha,
        "threshold_denominator": args.threshold_denominator,
        "contrast": args.contrast,
        "joint": args.joint,
        "tol": args.tol,
        "max_iter": args.max_iter,
    });
    let digests = vec![digest_file(&args.data.data)?];
    let man = RunManifest::new("infer", config_json, vec![args.seed], digests).with_timings(&clock);

    output::write_coefficients_csv(
        &args.out.join("coefficients.csv"),
        &man.digest,
        &table_original,
    )?;
    output::write_json(
        &args.out.join("coefficients.json"),
        &man.digest,
        "coefficients",
        json!({
            "table": table_original,
            "model_scale_table": table,
            "scaling": scaling,
            "lambda": stage.lambda,
            "gamma": debias.gamma,
            "ridge": debias.theta.ridge,
            "n": ds.n(),
            "p": ds.p(),
        }),
    )?;
    if let Some(curve) = &stage.lambda_curve {
        output::write_json(
            &args.out.join("cv_lambda.json"),
            &man.digest,
            "cv_lambda",
            json!({ "curve": curve }),
        )?;
    }
    if let Some(curve) = &debias.gamma_curve {
        output::write_json(
            &args.out.join("cv_gamma.json"),
            &man.digest,
            "cv_gamma",
            json!({ "curve": curve }),
        )?;
    }

    // tests operate on original-scale loadings; rescale into model scale
    let mut tests = Vec::new();
    for expr in &args.contrast {
        let (c_orig, a0) = contrast::parse_contrast(expr, &names)?;
        let c_model: Vec<f64> = c_orig
            .iter()
            .zip(&scaling.scales)
            .map(|(c, s)| c / s)
            .collect();
        let test = inference::wald_test(
            &debias.debiased,
            &debias.theta,
            ds.n(),
            &c_model,
            a0,
            args.alpha,
        )
        .map_err(classify_core_error)?;
        tests.push(json!({
            "kind": "wald",
            "expression": expr,
            "statistic": test.statistic,
            "df": 1,
            "p_value": test.p_value,
            "reject": test.reject,
            "alpha": test.alpha,
            "ci": { "lower": test.ci.lower, "upper": test.ci.upper },
            "asymmetry_warning": test.ci.asymmetry_warning,
        }));
        println!(
            "wald {expr}: T = {:.4}, p = {:.4}",
            test.statistic, test.p_value
        );
    }
    for expr in &args.joint {
        let indices = contrast::parse_joint(expr, &names)?;
        let mut a = Mat::zeros(indices.len(), ds.p());
        for (r, &j) in indices.iter().enumerate() {
            a[(r, j)] = 1.0 / scaling.scales[j];
        }
        let a0 = vec![0.0; indices.len()];
        let test =
            inference::chisq_test(&debias.debiased, &debias.theta, ds.n(), &a, &a0, args.alpha)
                .map_err(classify_core_error)?;
        tests.push(json!({
            "kind": "chisq",
            "expression": expr,
            "statistic": test.statistic,
            "df": test.df,
            "p_value": test.p_value,
            "reject": test.reject,
            "alpha": test.alpha,
        }));
        println!(
            "chisq {expr}: T' = {:.4} (df {}), p = {:.4}",
            test.statistic, test.df, test.p_value
        );
    }
    if !tests.is_empty() {
        output::write_json(
            &args.out.join("tests.json"),
            &man.digest,
            "tests",
            json!({ "tests": tests }),
        )?;
    }
    if args.export_theta {
        output::write_matrix_csv(
            &args.out.join("theta.csv"),
            &man.digest,
            &debias.theta.matrix,
        )?;
        output::write_json(
            &args.out.join("theta_meta.json"),
            &man.digest,
            "theta_meta",
            json!({
                "gamma": debias.theta.gamma,
                "ridge": debias.theta.ridge,
                "max_row_kkt": debias.theta.max_row_kkt(),
            }),
        )?;
    }
    man.write(&args.out.join("manifest.json"))?;
    println!(
        "infer: lambda = {:.6e}, gamma = {:.6e}, wrote {}",
        stage.lambda,
        debias.gamma,
        args.out.join("coefficients.csv").display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    let mut clock = StageClock::new();
    let (text, source, input_digests, mut plan) = if let Some(man_path) = &args.from_manifest {
        let man = RunManifest::load(man_path)?;
        let text = man
            .config
            .get("scenario_toml")
            .and_then(|v| v.as_str())
            .ok_or_else(|| CliError::Parse("manifest does not embed a simulate scenario".into()))?
            .to_string();
        let plan: config::SimPlan = serde_json::from_value(
            man.config
                .get("plan")
                .cloned()
                .ok_or_else(|| CliError::Parse("manifest does not embed a resolved plan".into()))?,
        )
        .map_err(|e| CliError::Parse(format!("manifest plan: {e}")))?;
        (
            text,
            format!("manifest:{}", man_path.display()),
            man.input_digests.clone(),
            plan,
        )
    } else if let Some(name) = &args.preset {
        let text = config::preset(name).ok_or_else(|| {
            CliError::Parse(format!(
                "unknown preset `{name}` (available: {})",
                config::preset_names().join(", ")
            ))
        })?;
        let plan = config::parse_sim_file(text)?;
        (text.to_string(), format!("preset:{name}"), vec![], plan)
    } else if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let digest = digest_file(path)?;
        let plan = config::parse_sim_file(&text)?;
        (text, path.display().to_string(), vec![digest], plan)
    } else {
        return Err(CliError::Parse(
            "simulate needs a config path, --preset or --from-manifest".into(),
        ));
    };
    if let Some(r) = args.replications {
        plan.replications = r;
    }
    if let Some(s) = args.seed {
        plan.config.seed = s;
    }
    let threads = args.threads.unwrap_or_else(runner::default_threads);

    let config_json = json!({
        "scenario_toml": text,
        "plan": plan,
    });
    let man = RunManifest::new(
        "simulate",
        config_json,
        vec![plan.config.seed],
        input_digests,
    )
    .with_provenance(&source);

    let mut summaries: Vec<(Option<f64>, coxdebias_core::sim::SimSummary)> = Vec::new();
    if let Some(sweep) = plan.gamma_sweep.clone() {
        let per_gamma = clock.time("gamma sweep", || {
            runner::run_gamma_sweep_parallel(
                &plan.config,
                &plan.options,
                &sweep,
                plan.replications,
                &plan.targets,
                &plan.joint_targets,
                plan.alpha,
                threads,
            )
        });
        for (gamma, summary) in per_gamma {
            for row in &summary.rows {
                println!(
                    "gamma {gamma:.4}: {} {} bias {:+.4} coverage {}",
                    row.method,
                    row.target,
                    row.bias,
                    row.coverage
                        .map_or_else(|| "-".to_string(), |c| format!("{c:.3}")),
                );
            }
            summaries.push((Some(gamma), summary));
        }
    } else {
        let summary = clock.time("replications", || {
            runner::run_replications_parallel(
                &plan.config,
                &plan.options,
                &plan.methods,
                plan.replications,
                &plan.targets,
                &plan.joint_targets,
                plan.alpha,
                threads,
            )
        });
        summaries.push((None, summary));
    }

    if let Some(target_idx) = plan.decompose_target {
        let rows = clock.time("decomposition", || {
            decomposition_rows(&plan, target_idx, threads)
        })?;
        let mut out = output::csv_header(&man.digest);
        out.push_str("replication,total,leading,remainder\n");
        for (rep, d) in &rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                rep,
                csvio::format_float(d.total),
                csvio::format_float(d.leading),
                csvio::format_float(d.remainder),
            ));
        }
        std::fs::write(args.out.join("decomposition.csv"), out)?;
    }

    let man = man.with_timings(&clock);
    output::write_summary_csv(
        &args.out.join("summary.csv"),
        &man.digest,
        &summaries.iter().map(|(g, s)| (*g, s)).collect::<Vec<_>>(),
    )?;
    output::write_json(
        &args.out.join("summary.json"),
        &man.digest,
        "summary",
        json!({
            "sweep": summaries
                .iter()
                .map(|(gamma, s)| json!({ "gamma": gamma, "summary": s }))
                .collect::<Vec<_>>(),
            "replications": plan.replications,
        }),
    )?;
    man.write(&args.out.join("manifest.json"))?;
    println!(
        "simulate: {} replications x {} scenario(s), wrote {}",
        plan.replications,
        summaries.len(),
        args.out.join("summary.csv").display()
    );
    Ok(())
}

/// Error-decomposition rows for every replication of the plan's scenario.
fn decomposition_rows(
    plan: &config::SimPlan,
    target_idx: usize,
    threads: usize,
) -> CliResult<Vec<(u64, coxdebias_core::sim::DecompositionDiag)>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let total = plan.replications;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<coxdebias_core::sim::DecompositionDiag>>> =
        Mutex::new(vec![None; total]);
    let worker = || -> Result<(), coxdebias_core::Error> {
        loop {
            let r = next.fetch_add(1, Ordering::Relaxed);
            if r >= total {
                return Ok(());
            }
            let rep = r as u64;
            let ds = sim::replication_dataset(&plan.config, rep);
            let index = risk_index(&ds);
            let rng = sim::replication_stream(&plan.config, rep);
            let stage = fit_lasso_stage(&ds, &index, &plan.options, &rng)?;
            let debias =
                fit_debias_stage(&ds, &index, &plan.options, stage.lambda, &stage.fit, &rng)?;
            let mut c = vec![0.0; plan.config.p];
            c[target_idx] = 1.0;
            let diag = sim::decompose_error(
                &ds,
                &index,
                &plan.config.beta0,
                &stage.fit.beta,
                &debias.theta,
                &c,
            )?;
            slots.lock().expect("decomposition slots")[r] = Some(diag);
        }
    };
    let result: Result<(), coxdebias_core::Error> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads.max(1)).map(|_| scope.spawn(worker)).collect();
        let mut first_err = None;
        for h in handles {
            if let Err(e) = h.join().expect("decomposition worker") {
                first_err.get_or_insert(e);
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    });
    result.map_err(classify_core_error)?;
    Ok(slots
        .into_inner()
        .expect("decomposition slots")
        .into_iter()
        .enumerate()
        .map(|(i, d)| (i as u64, d.expect("decomposition complete")))
        .collect())
}

fn cmd_bench_qp(args: BenchArgs) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    let mut clock = StageClock::new();
    let (summaries, rows) = clock.time("bench", || {
        bench::bench_theta(
            &args.p_grid,
            &args.gamma_multipliers,
            args.reps,
            args.n,
            args.seed,
        )
    })?;
    let config_json = json!({
        "p_grid": args.p_grid,
        "gamma_multipliers": args.gamma_multipliers,
        "reps": args.reps,
        "n": args.n,
    });
    let man =
        RunManifest::new("bench qp", config_json, vec![args.seed], vec![]).with_timings(&clock);
    std::fs::write(
        args.out.join("bench_qp.csv"),
        bench::summary_csv(&man.digest, &summaries),
    )?;
    std::fs::write(
        args.out.join("bench_qp_rows.csv"),
        bench::rows_csv(&man.digest, &rows),
    )?;
    man.write(&args.out.join("manifest.json"))?;
    for s in &summaries {
        println!(
            "p = {:3}  gamma = {:.4} ({}x): mean theta time {:.4}s, mean active set {:.1}",
            s.p, s.gamma, s.gamma_multiplier, s.mean_seconds_total, s.mean_active_set_size
        );
    }
    Ok(())
}
