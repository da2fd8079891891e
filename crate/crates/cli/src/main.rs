//! Command-line driver: simulation, fitting, forecasting, penalty sweeps,
//! latent-dimension selection and model comparison, all file-based and
//! deterministic given flags and seeds.

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use plds_cli::archive::{
    self, ModelArchive, ParamsJson, Provenance, ARCHIVE_FORMAT, ARCHIVE_VERSION,
};
use plds_cli::{io, CliError};
use plds_core::em::{self, CPenaltyMode, FitOptions};
use plds_core::forecast::k_step_predict;
use plds_core::metrics::{amari_error, prediction_scores, subspace_distance};
use plds_core::model::{Hyperparams, ObservationSeries};
use plds_core::selection::{lambda_sweep, log_lambda_grid, profile_likelihood_d, PairOutcome};
use plds_core::sim::{generate_params, simulate_series, SimConfig};
use serde::Deserialize;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "plds",
    version,
    about = "Penalized reduced-rank linear dynamical system identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth parameters and a simulated series.
    Simulate(SimulateArgs),
    /// Fit the penalized model to an observed series.
    Fit(FitArgs),
    /// k-step-ahead forecasts from a fitted model archive.
    Predict(PredictArgs),
    /// Penalty sweep with a train/test split, driven by a config file.
    Sweep(SweepArgs),
    /// Latent-dimension selection from the singular-value spectrum.
    SelectD(SelectDArgs),
    /// Permutation/scale-invariant distance between two fitted models.
    Distance(DistanceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    p: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long = "T", visible_alias = "t", value_parser = clap::value_parser!(u64).range(1..))]
    t: u64,
    /// Fraction of transition-matrix entries truncated to zero.
    #[arg(long, default_value_t = 0.2)]
    sparsity: f64,
    #[arg(long, default_value_t = 1.0)]
    diag_boost: f64,
    #[arg(long, default_value_t = 1.0)]
    r_scale: f64,
    #[arg(long)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FileFormat::Bin)]
    format: FileFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Bin,
    Csv,
}

impl FileFormat {
    fn extension(self) -> &'static str {
        match self {
            FileFormat::Bin => "mbin",
            FileFormat::Csv => "csv",
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Observed series, p x T (.mbin or .csv).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, default_value_t = 0.0)]
    lambda_a: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_c: f64,
    #[arg(long, default_value_t = 30)]
    max_iters: usize,
    #[arg(long, default_value_t = 30)]
    inner_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Penalize C without whitening by the noise (per-row ridge scaling).
    #[arg(long)]
    unwhitened_c_penalty: bool,
    /// Update the noise diagonal with the previous C instead of the new one.
    #[arg(long)]
    r_with_old_c: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Fitted model archive.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    /// Held-out truth, p x k; enables per-step scores.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also forecast with this baseline method.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Training series, required by --baseline.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Predictions output (p x k matrix file).
    #[arg(long)]
    out: PathBuf,
    /// Per-step scores CSV (requires --truth).
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    /// Rank-d SVD plus VAR(1) on the latent proxy.
    Svd,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SelectDArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    d_max: Option<usize>,
    /// Optional CSV of (candidate, profile log-likelihood).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistanceArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Which parameter matrix to compare.
    #[arg(long, value_enum, default_value_t = WhichMatrix::A)]
    matrix: WhichMatrix,
    /// Also print the Amari error (square matrices only).
    #[arg(long)]
    amari: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichMatrix {
    A,
    C,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::SelectD(args) => cmd_select_d(args),
        Command::Distance(args) => cmd_distance(args),
    }
}

fn base_archive(
    p: usize,
    d: usize,
    t: usize,
    params: ParamsJson,
    seed: Option<u64>,
) -> ModelArchive {
    ModelArchive {
        format: ARCHIVE_FORMAT.to_string(),
        version: ARCHIVE_VERSION,
        p,
        d,
        t,
        hyperparams: None,
        params,
        objective_trace: Vec::new(),
        iterations_run: None,
        converged: None,
        x_last: None,
        v_last: None,
        provenance: Provenance::from_env(seed),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = SimConfig {
        sparsity_level: args.sparsity,
        diag_boost: args.diag_boost,
        r_scale: args.r_scale,
        ..SimConfig::new(args.p as usize, args.d as usize, args.t as usize, args.seed)
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let params = generate_params(&cfg)?;
    let (x, y) = simulate_series(&params, cfg.t, cfg.seed)?;

    fs::create_dir_all(&args.out)?;
    let ext = args.format.extension();
    let y_path = args.out.join(format!("Y.{ext}"));
    let x_path = args.out.join(format!("X.{ext}"));
    io::write_matrix(&y_path, y.matrix())?;
    io::write_matrix(&x_path, &x.x)?;

    let mut truth = base_archive(
        cfg.p,
        cfg.d,
        cfg.t,
        ParamsJson::from_params(&params),
        Some(cfg.seed),
    );
    truth.x_last = Some(x.x.column(cfg.t).iter().copied().collect());
    truth.v_last = Some(archive::MatrixJson::from_matrix(&DMatrix::zeros(
        cfg.d, cfg.d,
    )));
    let truth_path = args.out.join("truth.json");
    truth.save(&truth_path)?;

    println!(
        "simulated p={} d={} T={} (seed {}) -> {}, {}, {}",
        cfg.p,
        cfg.d,
        cfg.t,
        cfg.seed,
        y_path.display(),
        x_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn load_series(path: &Path) -> Result<ObservationSeries, CliError> {
    let m = io::read_matrix(path)?;
    Ok(ObservationSeries::new(m)?)
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let y = load_series(&args.data)?;
    let hp = Hyperparams {
        lambda_a: args.lambda_a,
        lambda_c: args.lambda_c,
        d: args.d as usize,
        max_em_iters: args.max_iters,
        max_inner_iters: args.inner_iters,
        em_tol: args.tol,
    };
    let opts = FitOptions {
        c_penalty: if args.unwhitened_c_penalty {
            CPenaltyMode::Unwhitened
        } else {
            CPenaltyMode::Whitened
        },
        r_uses_new_c: !args.r_with_old_c,
        ..FitOptions::default()
    };

    let start = Instant::now();
    let report = em::fit_with_options(&y, &hp, &opts)?;
    let elapsed = start.elapsed();

    let t_len = y.len();
    let mut out = base_archive(
        y.obs_dim(),
        hp.d,
        t_len,
        ParamsJson::from_params(&report.params),
        None,
    );
    out.hyperparams = Some((&hp).into());
    out.objective_trace = report.objective_trace.clone();
    out.iterations_run = Some(report.iterations_run);
    out.converged = Some(report.converged);
    out.x_last = Some(report.moments.x_hat.column(t_len).iter().copied().collect());
    out.v_last = Some(archive::MatrixJson::from_matrix(
        &report.moments.covariance(t_len),
    ));
    out.save(&args.out)?;

    // Human-readable report; wall-clock timing stays out of the archive so
    // identical runs produce identical files.
    println!(
        "fit: p={} d={} T={} lambda_a={} lambda_c={}",
        y.obs_dim(),
        hp.d,
        t_len,
        hp.lambda_a,
        hp.lambda_c
    );
    for (k, v) in report.objective_trace.iter().enumerate() {
        println!("  iter {:>3}: objective {v:.6}", k + 1);
    }
    println!(
        "converged: {} after {} iterations",
        report.converged, report.iterations_run
    );
    println!("time: {:.3} s", elapsed.as_secs_f64());
    println!("model written to {}", args.out.display());
    Ok(())
}

fn write_scores_csv(
    path: &Path,
    truth: &DMatrix<f64>,
    pred: &DMatrix<f64>,
    baseline: Option<&DMatrix<f64>>,
) -> Result<(), CliError> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header = "step,mse,correlation".to_string();
    if baseline.is_some() {
        header.push_str(",baseline_mse,baseline_correlation");
    }
    writeln!(w, "{header}")?;
    let fmt_corr = |c: Option<f64>| c.map_or("NA".to_string(), |v| format!("{v:.16e}"));
    for step in 0..truth.ncols() {
        let t_col = truth.column(step).into_owned();
        let t_m = DMatrix::from_column_slice(truth.nrows(), 1, t_col.as_slice());
        let p_col = pred.column(step).into_owned();
        let p_m = DMatrix::from_column_slice(pred.nrows(), 1, p_col.as_slice());
        let s = prediction_scores(&t_m, &p_m)?;
        write!(w, "{},{:.16e},{}", step + 1, s.mse, fmt_corr(s.correlation))?;
        if let Some(base) = baseline {
            let b_col = base.column(step).into_owned();
            let b_m = DMatrix::from_column_slice(base.nrows(), 1, b_col.as_slice());
            let b = prediction_scores(&t_m, &b_m)?;
            write!(w, ",{:.16e},{}", b.mse, fmt_corr(b.correlation))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let model = ModelArchive::load(&args.model)?;
    let params = model.params.to_params()?;
    let steps = args.steps as usize;
    let x_last = model.x_last_vector()?;
    let pred = k_step_predict(&params.a, &params.c, &x_last, steps)?;
    io::write_matrix(&args.out, &pred)?;
    println!(
        "predictions ({}x{steps}) written to {}",
        pred.nrows(),
        args.out.display()
    );

    let baseline_pred = match args.baseline {
        Some(Baseline::Svd) => {
            let data = args.data.as_ref().ok_or_else(|| {
                CliError::Usage("--baseline requires --data with the training series".into())
            })?;
            let train = load_series(data)?;
            let init = em::svd_initialize(&train, model.d)?;
            let x_proxy = init.latent_proxy.column(train.len() - 1).into_owned();
            Some(k_step_predict(
                &init.params.a,
                &init.params.c,
                &x_proxy,
                steps,
            )?)
        }
        None => None,
    };

    if let Some(truth_path) = &args.truth {
        let truth = io::read_matrix(truth_path)?;
        if truth.nrows() != pred.nrows() || truth.ncols() != steps {
            return Err(CliError::Usage(format!(
                "truth is {}x{}, expected {}x{steps}",
                truth.nrows(),
                truth.ncols(),
                pred.nrows()
            )));
        }
        let s = prediction_scores(&truth, &pred)?;
        match s.correlation {
            Some(c) => println!("scores: mse {:.6e}, correlation {c:.6}", s.mse),
            None => println!("scores: mse {:.6e}, correlation undefined", s.mse),
        }
        if let Some(base) = &baseline_pred {
            let b = prediction_scores(&truth, base)?;
            match b.correlation {
                Some(c) => println!("baseline: mse {:.6e}, correlation {c:.6}", b.mse),
                None => println!("baseline: mse {:.6e}, correlation undefined", b.mse),
            }
        }
        if let Some(scores_path) = &args.scores {
            write_scores_csv(scores_path, &truth, &pred, baseline_pred.as_ref())?;
            println!("per-step scores written to {}", scores_path.display());
        }
    } else if args.scores.is_some() {
        return Err(CliError::Usage("--scores requires --truth".into()));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    data: PathBuf,
    d: usize,
    train_fraction: f64,
    horizon: usize,
    /// Explicit grid of lambda_c values; overrides the log-spaced range.
    lambda_c: Option<Vec<f64>>,
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    points: Option<usize>,
    /// lambda_a = lambda_ratio * lambda_c.
    #[serde(default = "default_ratio")]
    lambda_ratio: f64,
    #[serde(default = "default_em_iters")]
    max_em_iters: usize,
    #[serde(default = "default_em_iters")]
    max_inner_iters: usize,
    #[serde(default = "default_em_tol")]
    em_tol: f64,
    out: PathBuf,
}

fn default_ratio() -> f64 {
    1.0
}
fn default_em_iters() -> usize {
    30
}
fn default_em_tol() -> f64 {
    1e-6
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config)?;
    let cfg: SweepConfig = toml::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.config.display())))?;

    let grid: Vec<(f64, f64)> = match (&cfg.lambda_c, cfg.lambda_min, cfg.lambda_max) {
        (Some(list), _, _) => list.iter().map(|&lc| (cfg.lambda_ratio * lc, lc)).collect(),
        (None, Some(lo), Some(hi)) => {
            let points = cfg.points.unwrap_or(11);
            if points < 2 || !(lo > 0.0 && hi > lo) {
                return Err(CliError::Usage(
                    "lambda_min/lambda_max need 0 < min < max and points >= 2".into(),
                ));
            }
            log_lambda_grid(lo, hi, points, cfg.lambda_ratio)
        }
        _ => {
            return Err(CliError::Usage(
                "config needs either lambda_c = [..] or lambda_min/lambda_max".into(),
            ))
        }
    };

    let y = load_series(&cfg.data)?;
    let hp = Hyperparams {
        lambda_a: 0.0,
        lambda_c: 0.0,
        d: cfg.d,
        max_em_iters: cfg.max_em_iters,
        max_inner_iters: cfg.max_inner_iters,
        em_tol: cfg.em_tol,
    };
    let start = Instant::now();
    let sweep = lambda_sweep(&y, &hp, &grid, cfg.train_fraction, cfg.horizon)?;
    let elapsed = start.elapsed();

    let mut w = std::io::BufWriter::new(fs::File::create(&cfg.out)?);
    writeln!(w, "lambda_a,lambda_c,mse,correlation,objective,status")?;
    for (&(la, lc), outcome) in sweep.grid.iter().zip(&sweep.outcomes) {
        match outcome {
            PairOutcome::Scored(score) => {
                let corr = score
                    .scores
                    .correlation
                    .map_or("NA".to_string(), |v| format!("{v:.16e}"));
                writeln!(
                    w,
                    "{la:.16e},{lc:.16e},{:.16e},{corr},{:.16e},ok",
                    score.scores.mse, score.objective
                )?;
            }
            PairOutcome::Failed(msg) => {
                let clean = msg.replace([',', '\n'], ";");
                writeln!(w, "{la:.16e},{lc:.16e},NA,NA,NA,{clean}")?;
            }
        }
    }
    w.flush()?;

    let (best_a, best_c) = sweep.best_pair();
    println!(
        "sweep over {} pairs finished in {:.3} s; best lambda_a={best_a:.3e} lambda_c={best_c:.3e}",
        sweep.grid.len(),
        elapsed.as_secs_f64()
    );
    println!("results written to {}", cfg.out.display());
    Ok(())
}

fn cmd_select_d(args: SelectDArgs) -> Result<(), CliError> {
    let y = load_series(&args.data)?;
    let svd = y.matrix().clone().svd(false, false);
    let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let tol = values[0] * y.obs_dim().max(y.len()) as f64 * f64::EPSILON;
    values.retain(|&v| v > tol);
    if values.len() < 3 {
        return Err(CliError::Data(format!(
            "only {} informative singular values; need at least 3",
            values.len()
        )));
    }
    let d_max = args.d_max.unwrap_or(values.len() - 1);
    let (selected, profile) = profile_likelihood_d(&values, d_max)?;

    if let Some(out) = &args.out {
        let mut w = std::io::BufWriter::new(fs::File::create(out)?);
        writeln!(w, "candidate_d,profile_log_likelihood")?;
        for (idx, value) in profile.iter().enumerate() {
            writeln!(w, "{},{value:.16e}", idx + 1)?;
        }
        w.flush()?;
        println!("profile written to {}", out.display());
    }
    println!("selected d = {selected}");
    Ok(())
}

fn cmd_distance(args: DistanceArgs) -> Result<(), CliError> {
    let a = ModelArchive::load(&args.a)?.params.to_params()?;
    let b = ModelArchive::load(&args.b)?.params.to_params()?;
    let (ma, mb) = match args.matrix {
        WhichMatrix::A => (&a.a, &b.a),
        WhichMatrix::C => (&a.c, &b.c),
    };
    let result = subspace_distance(ma, mb)?;
    println!("distance {:.12e}", result.distance);
    if args.amari {
        let err = amari_error(ma, mb)?;
        println!("amari {err:.12e}");
    }
    Ok(())
}
