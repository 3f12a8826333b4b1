use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use inperturb::analysis::{run_verification_suite, SuiteSize};
use inperturb::calibration::{
    calibrate, delta0_bounds, local_dp_level, recommend_delta, scale_budget, sigma_u_envelope, DEFAULT_SLACK,
};
use inperturb::harness::{self, CsvOptions, DeltaCap, ExperimentConfig, ReportFormat};
use inperturb::perturb::{perturb_dataset, read_perturbed_csv_path, write_perturbed_csv, write_perturbed_csv_path};
use inperturb::solver::{learn_input_perturbed, Mechanism, ModelArtifact, SolverConfig};
use inperturb::{LossKind, LossSpec, PrivacyBudget, RngStream};

#[derive(Parser)]
#[command(
    name = "inperturb",
    version,
    about = "Input perturbation for private ERM with quadratic losses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the noise calibration and local privacy level as JSON.
    Calibrate(CalibrateArgs),
    /// Perturb a CSV dataset as its contributors would.
    Perturb(PerturbArgs),
    /// Learn a model from a perturbed CSV.
    Learn(LearnArgs),
    /// Run an experiment and write its report.
    Experiment(ExperimentArgs),
    /// Run the Monte-Carlo and exact check suite.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    LinearRegression,
    Logistic,
}

impl From<Task> for LossKind {
    fn from(t: Task) -> Self {
        match t {
            Task::LinearRegression => LossKind::LinearRegression,
            Task::Logistic => LossKind::LogisticQuadratic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value = "linear-regression")]
    task: Task,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Fraction of epsilon spent on the contributors' release.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = DEFAULT_SLACK)]
    slack: f64,
}

impl Common {
    fn spec(&self, d: usize) -> Result<LossSpec> {
        Ok(LossSpec::for_kind(self.task.into(), d, self.eta)?)
    }

    fn input_budget(&self) -> Result<PrivacyBudget> {
        let b = PrivacyBudget::new(self.epsilon, self.delta)?;
        Ok(scale_budget(&b, self.alpha)?)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    common: Common,
    /// Raw CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    target: String,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip rescaling; every row must already satisfy the unit bounds.
    #[arg(long)]
    no_scale: bool,
    /// Binarize the target at this value for classification.
    #[arg(long)]
    label_threshold: Option<f64>,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    common: Common,
    /// Perturbed CSV as written by `perturb`.
    #[arg(long)]
    input: PathBuf,
    /// Regularization cap; defaults to the recommended value.
    #[arg(long)]
    delta_cap: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the perturbation, echoed in the artifact.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Comma-separated subset of non_private,input,objective,output.
    #[arg(long, value_delimiter = ',')]
    mechanisms: Option<Vec<String>>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smaller Monte-Carlo loops.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_out(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let spec = a.common.spec(a.d)?;
    let budget = a.common.input_budget()?;
    let cal = calibrate(budget, a.n, spec.constants, a.common.slack)?;
    let local = local_dp_level(&cal, 2.0 * spec.bound_q, 2.0 * spec.bound_p);
    let out = json!({
        "calibration": cal,
        "local_dp": local,
        "sigma_u_envelope": sigma_u_envelope(a.n, cal.gamma, a.d, spec.constants.lambda, budget.epsilon),
        "delta0_bounds": delta0_bounds(a.n, cal.gamma, cal.sigma_u(), spec.constants.lambda, a.d),
        "recommended_delta_cap": recommend_delta(&spec.constants, &budget, spec.constants.eta)?,
    });
    write_out(&None, &(serde_json::to_string_pretty(&out)? + "\n"))
}

fn cmd_perturb(a: PerturbArgs) -> Result<()> {
    let loaded = harness::load_csv(
        &a.input,
        &CsvOptions {
            target_column: a.target.clone(),
            scale: !a.no_scale,
            label_threshold: a.label_threshold,
        },
    )?;
    let ds = loaded.dataset;
    let spec = a.common.spec(ds.dim())?;
    let cal = calibrate(a.common.input_budget()?, ds.len(), spec.constants, a.common.slack)?;
    let rows = perturb_dataset(&ds, &spec, &cal, RngStream::new(a.seed, 0))?;
    match &a.out {
        Some(p) => write_perturbed_csv_path(p, &rows)?,
        None => write_perturbed_csv(std::io::stdout().lock(), &rows)?,
    }
    if let Some(s) = loaded.scale {
        eprintln!("scaled features by 1/{} and target by 1/{}", s.feature, s.target);
    }
    Ok(())
}

fn cmd_learn(a: LearnArgs) -> Result<()> {
    let rows = read_perturbed_csv_path(&a.input)?;
    let spec = a.common.spec(rows[0].dim())?;
    let budget = a.common.input_budget()?;
    let cal = calibrate(budget, rows.len(), spec.constants, a.common.slack)?;
    let delta_cap = match a.delta_cap {
        Some(v) => v,
        None => recommend_delta(&spec.constants, &budget, spec.constants.eta)?,
    };
    let w = learn_input_perturbed(
        &rows,
        delta_cap,
        &spec.constants,
        budget.epsilon,
        &SolverConfig::default(),
    )?;
    let art = ModelArtifact::new(&w, Mechanism::Input, Some(cal), a.seed);
    write_out(&a.out, &(serde_json::to_string_pretty(&art)? + "\n"))
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(ms) = &a.mechanisms {
        cfg.mechanisms = ms
            .iter()
            .filter(|m| !m.trim().is_empty())
            .map(|m| m.parse::<Mechanism>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(e) = a.epsilon {
        cfg.budget.epsilon = e;
    }
    if let Some(d) = a.delta {
        cfg.budget.delta = d;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(g) = a.n_grid {
        cfg.n_grid = g;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    if let DeltaCap::Explicit(v) = cfg.delta_cap {
        if !(v.is_finite()) {
            bail!("delta_cap must be finite");
        }
    }
    let report = harness::run_experiment(&cfg)?;
    let format = match a.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    write_out(&a.out, &harness::render(&report, format)?)
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let size = if a.quick {
        SuiteSize {
            coverage_trials: 2_000,
            tail_trials: 20_000,
            identity_instances: 10,
        }
    } else {
        SuiteSize::default()
    };
    let reports = run_verification_suite(a.seed, size)?;
    write_out(&a.out, &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    let failed: Vec<_> = reports
        .iter()
        .filter(|r| !r.pass && !r.is_informational())
        .map(|r| r.check.as_str())
        .collect();
    if !failed.is_empty() {
        bail!("failed checks: {}", failed.join(", "));
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Verify(a) => cmd_verify(a),
    }
}
