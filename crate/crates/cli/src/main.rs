//! `sensprec`: sensor precision design from JSON model files.

mod model;
mod result;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sensprec::linalg::masked_trace;
use sensprec::precision::{
    onestep_verified_trace, optimize_onestep, optimize_steadystate, prune_and_rescale, scale_solution,
    steady_state_trace, DesignOptions, PrecisionSolution, BISECTION_ITERS, VERIFY_SLACK,
};
use sensprec::sdpsolve::{SolveStatus, SolverSettings, DEFAULT_TOL_FEAS, DEFAULT_TOL_GAP};
use sensprec::sysmodel::{build_lifted, build_periodic_augmented, PeriodicAugmentedSystem};

use model::{Model, ModelFile};
use result::{Mode, Summary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Lib(#[from] sensprec::Error),
    #[error("verified trace {trace:.9e} exceeds gamma_d = {gamma_d:.9e}")]
    BoundViolated { trace: f64, gamma_d: f64 },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Lib(sensprec::Error::Config(_)) => 1,
            CliError::Lib(sensprec::Error::InfeasibleBudget(_) | sensprec::Error::Detectability(_)) => 2,
            CliError::Lib(sensprec::Error::Numerical(_)) => 3,
            CliError::BoundViolated { .. } => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "sensprec", version, about = "Sensor precision design for linear estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design precisions that bound the error after one window of updates.
    Onestep(OnestepArgs),
    /// Design precisions that bound the steady-state error of a periodic system.
    Steadystate(SteadyArgs),
    /// Recompute the error trace of a result file and check it against its budget.
    Verify(VerifyArgs),
    /// Write a model in explicit form (builtins expanded to their matrices).
    Export(ExportArgs),
}

#[derive(Args)]
#[group(id = "budget", required = true, multiple = false)]
struct Budget {
    /// Error budget gamma_d.
    #[arg(long)]
    gamma: Option<f64>,
    /// Error budget as a fraction of the prior trace at the end of the horizon.
    #[arg(long)]
    gamma_frac: Option<f64>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    budget: Budget,
    /// Upper bound applied to every channel precision.
    #[arg(long, default_value_t = f64::INFINITY)]
    s_max: f64,
    #[arg(long, default_value_t = 5)]
    rew_iters: usize,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOL_FEAS)]
    tol_feas: f64,
    #[arg(long, default_value_t = DEFAULT_TOL_GAP)]
    tol_gap: f64,
}

#[derive(Args)]
struct OnestepArgs {
    #[command(flatten)]
    common: Common,
    /// Row-major prior covariance, overriding the model file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    prior_cov: Option<Vec<f64>>,
    /// First step of the design window.
    #[arg(long, default_value_t = 0)]
    start: usize,
}

#[derive(Args)]
struct SteadyArgs {
    #[command(flatten)]
    common: Common,
    /// Young's inequality parameter.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Drop channels below this fraction of the largest precision before rescaling.
    #[arg(long)]
    prune: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Result prefix, or either of its `.csv` / `.json` files.
    #[arg(long)]
    result: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    prior_cov: Option<Vec<f64>>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ModelFile::parse(&text)?.build()
}

fn with_prior_flag(mut model: Model, flag: &Option<Vec<f64>>) -> Result<Model, CliError> {
    if let Some(values) = flag {
        model.prior = Some(model::prior_from_flag(values, model.sys.nx())?);
    }
    Ok(model)
}

fn options(c: &Common) -> DesignOptions {
    DesignOptions {
        rew_iters: c.rew_iters,
        eps: None,
        solver: SolverSettings {
            tol_feas: c.tol_feas,
            tol_gap: c.tol_gap,
            ..SolverSettings::default()
        },
    }
}

fn budget(b: &Budget, reference: impl FnOnce() -> Result<f64, CliError>) -> Result<f64, CliError> {
    match (b.gamma, b.gamma_frac) {
        (Some(g), _) => Ok(g),
        (None, Some(f)) => Ok(f * reference()?),
        (None, None) => Err(CliError::Config("one of --gamma or --gamma-frac is required".into())),
    }
}

fn augmented(model: &Model) -> Result<PeriodicAugmentedSystem, CliError> {
    let filter = model
        .filter
        .as_ref()
        .ok_or_else(|| CliError::Config("steady-state design needs a noise filter in the model file".into()))?;
    Ok(build_periodic_augmented(&model.sys, filter)?)
}

/// `(step, name)` of each measurement row.
fn labels(model: &Model, raw: Vec<(usize, usize)>) -> Vec<(usize, String)> {
    raw.into_iter()
        .map(|(step, c)| {
            let name = match &model.channel_names {
                Some(names) if c < names.len() => names[c].clone(),
                _ => c.to_string(),
            };
            (step, name)
        })
        .collect()
}

/// Prints the summary, writes the result files and maps the solver status to an exit code.
fn finish(sol: &PrecisionSolution, labels: &[(usize, String)], summary: &Summary, out: &Option<PathBuf>) -> Result<u8, CliError> {
    if let Some(prefix) = out {
        result::write(prefix, &result::render_csv(sol, labels), summary)?;
    }
    println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
    if sol.status == SolveStatus::Optimal {
        Ok(0)
    } else {
        eprintln!("solver finished with status {}", summary.status);
        Ok(3)
    }
}

fn cmd_onestep(args: &OnestepArgs) -> Result<u8, CliError> {
    let c = &args.common;
    let model = with_prior_flag(load_model(&c.model)?, &args.prior_cov)?;
    let prior = model
        .prior
        .clone()
        .ok_or_else(|| CliError::Config("one-step design needs a prior (model file or --prior-cov)".into()))?;
    let lift = build_lifted(&model.sys, args.start)?;
    let gamma_d = budget(&c.budget, || {
        Ok(masked_trace(&lift.mask_m, &lift.prior_covariance(&prior.cov)))
    })?;
    let opts = options(c);
    let sol = optimize_onestep(&model.sys, &prior, args.start, gamma_d, &vec![c.s_max; lift.ny()], &opts)?;
    let mut summary = Summary::new(&sol, Mode::Onestep, &opts.solver);
    summary.start = Some(args.start);
    finish(&sol, &labels(&model, lift.channel_labels()), &summary, &c.out)
}

fn cmd_steadystate(args: &SteadyArgs) -> Result<u8, CliError> {
    let c = &args.common;
    let model = load_model(&c.model)?;
    let aug = augmented(&model)?;
    let gamma_d = budget(&c.budget, || {
        steady_state_trace(&aug, &vec![0.0; aug.ny()], 1.0).map_err(|e| {
            CliError::Config(format!("--gamma-frac needs a finite open-loop steady-state covariance: {e}"))
        })
    })?;
    let opts = options(c);
    let sol = optimize_steadystate(&aug, gamma_d, args.delta, &vec![c.s_max; aug.ny()], &opts)?;
    let scaled = match args.prune {
        Some(t) => prune_and_rescale(&aug, &sol, t, gamma_d, BISECTION_ITERS)?,
        None => scale_solution(&aug, &sol, gamma_d, BISECTION_ITERS)?,
    };
    let mut summary = Summary::new(&scaled, Mode::Steadystate, &opts.solver);
    summary.delta = Some(args.delta);
    summary.prune = args.prune;
    finish(&scaled, &labels(&model, aug.channel_labels()), &summary, &c.out)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8, CliError> {
    let model = with_prior_flag(load_model(&args.model)?, &args.prior_cov)?;
    let (summary, s) = result::read(&args.result)?;
    let trace = match summary.mode {
        Mode::Onestep => {
            let prior = model
                .prior
                .as_ref()
                .ok_or_else(|| CliError::Config("verification of a one-step result needs a prior".into()))?;
            let lift = build_lifted(&model.sys, summary.start.unwrap_or(0))?;
            check_len(s.len(), lift.ny())?;
            onestep_verified_trace(&lift, &lift.prior_covariance(&prior.cov), &s)?
        }
        Mode::Steadystate => {
            let aug = augmented(&model)?;
            check_len(s.len(), aug.ny())?;
            steady_state_trace(&aug, &s, 1.0)?
        }
    };
    println!("verified_trace {trace:.9e} gamma_d {:.9e}", summary.gamma_d);
    if trace <= summary.gamma_d + VERIFY_SLACK {
        Ok(0)
    } else {
        Err(CliError::BoundViolated {
            trace,
            gamma_d: summary.gamma_d,
        })
    }
}

fn check_len(got: usize, want: usize) -> Result<(), CliError> {
    if got != want {
        return Err(CliError::Config(format!("result has {got} channels, model has {want}")));
    }
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<u8, CliError> {
    let model = load_model(&args.model)?;
    let text = serde_json::to_string_pretty(&ModelFile::from_model(&model)).expect("model serializes") + "\n";
    match &args.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    if let Ok(seed) = std::env::var("KP_SEED") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| CliError::Config(format!("KP_SEED must be an unsigned integer, got {seed:?}")))?;
        // Every workflow is deterministic, so the seed is only recorded.
        log::debug!("KP_SEED = {seed}");
    }
    match &cli.command {
        Command::Onestep(a) => cmd_onestep(a),
        Command::Steadystate(a) => cmd_steadystate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are configuration errors (exit 1); clap's default of 2 means "infeasible" here.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
