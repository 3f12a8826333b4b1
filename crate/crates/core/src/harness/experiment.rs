//! Orchestration of (mechanism, n, trial) cells.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, DeltaCap, ExperimentConfig};
use super::data::{generate_synthetic, load_csv, CsvOptions, ScaleFactors};
use crate::analysis::clamp_excess;
use crate::calibration::{
    calibrate, local_dp_level, recommend_delta, scale_budget, sigma_b2, LocalDpLevel, NoiseCalibration,
};
use crate::domain::project_unchecked;
use crate::domain::{Dataset, PrivacyBudget};
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec, QuadraticForm};
use crate::perturb::perturb_forms;
use crate::rng::RngStream;
use crate::solver::{
    input_perturbed_program, minimize_ball_constrained, objective_noise, objective_perturbed_program, output_noise,
    output_noise_scale, ridge_program, Mechanism, QuadraticProgram,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExcessRisk,
    Rmse,
    Accuracy,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::ExcessRisk => "excess_risk",
            Metric::Rmse => "rmse",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn held_out(task: LossKind) -> Metric {
        match task {
            LossKind::LinearRegression => Metric::Rmse,
            LossKind::LogisticQuadratic => Metric::Accuracy,
        }
    }
}

/// Aggregate of one metric over the trials of a (mechanism, n) cell. `mean` and
/// `sd` are absent when the cell is infeasible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mechanism: Mechanism,
    pub n: usize,
    pub metric: Metric,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub trials: usize,
    pub infeasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEcho {
    pub n: usize,
    /// Budget given to the input mechanism, i.e. epsilon scaled by alpha.
    pub input_budget: PrivacyBudget,
    pub calibration: Option<NoiseCalibration>,
    pub local_dp: Option<LocalDpLevel>,
    pub input_delta_cap: f64,
    pub objective_delta_cap: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// The configuration that produced the report, without the worker count.
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub calibrations: Vec<CalibrationEcho>,
    pub scale: Option<ScaleFactors>,
}

impl ExperimentReport {
    pub fn cell(&self, mechanism: Mechanism, n: usize, metric: Metric) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.mechanism == mechanism && c.n == n && c.metric == metric)
    }

    /// `(n, mean)` over the feasible cells of one curve, in ascending `n`.
    pub fn curve(&self, mechanism: Mechanism, metric: Metric) -> Vec<(usize, f64)> {
        self.cells
            .iter()
            .filter(|c| c.mechanism == mechanism && c.metric == metric)
            .filter_map(|c| c.mean.map(|m| (c.n, m)))
            .collect()
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(_, y)| !(y > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Per-trial values of one mechanism: `(excess risk, held-out metric)`, or `None`
/// when calibration was infeasible.
type Outcome = Option<(f64, f64)>;

fn cell_stream(seed: u64, n_idx: usize, trial: usize) -> RngStream {
    RngStream::new(seed, 0)
        .derive("cell")
        .substream(n_idx as u64)
        .substream(trial as u64)
}

/// Pool indices used by one trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialSplit {
    /// The first `n` of the shuffled training part.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of the pool: the first `test_size` indices are held out and the
/// next `n` form the training subsample.
pub fn trial_split(seed: u64, n_idx: usize, trial: usize, pool_len: usize, test_size: usize, n: usize) -> TrialSplit {
    let mut order: Vec<usize> = (0..pool_len).collect();
    order.shuffle(&mut cell_stream(seed, n_idx, trial).derive("split").rng());
    let (test, rest) = order.split_at(test_size);
    TrialSplit {
        train: rest[..n].to_vec(),
        test: test.to_vec(),
    }
}

/// Held-out size for a pool of `size` examples.
pub fn test_size(test_fraction: f64, size: usize) -> usize {
    ((test_fraction * size as f64).round() as usize).clamp(1, size.saturating_sub(1).max(1))
}

struct Plan<'a> {
    config: &'a ExperimentConfig,
    spec: LossSpec,
    pool: &'a Dataset,
    test_size: usize,
    calibrations: Vec<CalibrationEcho>,
}

fn delta_for(policy: DeltaCap, spec: &LossSpec, budget: &PrivacyBudget, est: f64) -> Result<f64> {
    match policy {
        DeltaCap::Recommended => recommend_delta(&spec.constants, budget, est),
        DeltaCap::Explicit(v) => Ok(v),
    }
}

fn held_out_metric(w: &DVector<f64>, test: &[&crate::domain::Example], task: LossKind) -> f64 {
    let k = test.len() as f64;
    match task {
        LossKind::LinearRegression => {
            let se: f64 = test.iter().map(|e| (w.dot(&e.x) - e.y).powi(2)).sum();
            (se / k).sqrt()
        }
        LossKind::LogisticQuadratic => {
            let hits = test
                .iter()
                .filter(|e| (if w.dot(&e.x) >= 0.0 { 1.0 } else { -1.0 }) == e.y)
                .count();
            hits as f64 / k
        }
    }
}

impl Plan<'_> {
    fn run_unit(&self, n_idx: usize, trial: usize) -> Result<Vec<Outcome>> {
        let cfg = self.config;
        let n = cfg.n_grid[n_idx];
        let stream = cell_stream(cfg.seed, n_idx, trial);
        let split = trial_split(cfg.seed, n_idx, trial, self.pool.len(), self.test_size, n);
        let train: Vec<&crate::domain::Example> = split.train.iter().map(|&i| &self.pool.examples()[i]).collect();
        let test: Vec<&crate::domain::Example> = split.test.iter().map(|&i| &self.pool.examples()[i]).collect();

        let forms: Vec<QuadraticForm> = train.iter().map(|e| self.spec.encode(e)).collect::<Result<_>>()?;
        let eta = self.spec.constants.eta;
        let base = QuadraticProgram::from_forms(&forms, 0.0, eta)?;
        let w_hat = minimize_ball_constrained(&base, &cfg.solver)?.into_model()?;
        let j_hat = base.objective(&w_hat);
        let evaluate = |w: &DVector<f64>| -> (f64, f64) {
            (
                clamp_excess(base.objective(w) - j_hat),
                held_out_metric(w, &test, cfg.task),
            )
        };

        let echo = &self.calibrations[n_idx];
        let mut input_b: Option<DVector<f64>> = None;
        // Input runs first so that its aggregate noise is available for pairing.
        let mut ordered: Vec<(usize, Mechanism)> = cfg.mechanisms.iter().copied().enumerate().collect();
        ordered.sort_by_key(|&(_, m)| m != Mechanism::Input);
        let mut slots: Vec<Outcome> = vec![None; cfg.mechanisms.len()];
        for (slot, mech) in ordered {
            let outcome = match mech {
                Mechanism::NonPrivate => Some(evaluate(w_hat.as_vector())),
                Mechanism::Input => match &echo.calibration {
                    None => None,
                    Some(cal) => {
                        let released = perturb_forms(&forms, cal, stream.derive("input"))?;
                        let mut b = DVector::zeros(forms[0].dim());
                        for (f, r) in forms.iter().zip(&released) {
                            b += &f.p - &r.p_tilde;
                        }
                        input_b = Some(b);
                        let qp = input_perturbed_program(
                            &released,
                            echo.input_delta_cap,
                            &self.spec.constants,
                            cal.budget.epsilon,
                        )?;
                        let w = minimize_ball_constrained(&qp, &cfg.solver)?.into_model()?;
                        Some(evaluate(w.as_vector()))
                    }
                },
                Mechanism::Objective => {
                    let budget = cfg.budget;
                    let b = match (&input_b, &echo.calibration) {
                        (Some(b_in), Some(cal)) if cfg.paired_noise => {
                            let ratio = (sigma_b2(self.spec.constants.zeta, &budget) / cal.sigma_b2).sqrt();
                            b_in * ratio
                        }
                        _ => objective_noise(&self.spec.constants, &budget, stream.derive("objective")),
                    };
                    let qp = objective_perturbed_program(
                        &forms,
                        echo.objective_delta_cap,
                        &self.spec.constants,
                        budget.epsilon,
                        &b,
                    )?;
                    let w = minimize_ball_constrained(&qp, &cfg.solver)?.into_model()?;
                    Some(evaluate(w.as_vector()))
                }
                Mechanism::Output => {
                    let qp = ridge_program(&forms, cfg.output_reg, eta)?;
                    let w = minimize_ball_constrained(&qp, &cfg.solver)?.into_model()?;
                    let scale = output_noise_scale(self.spec.constants.zeta, n, cfg.output_reg, cfg.budget.epsilon);
                    let v = output_noise(self.spec.constants.d, scale, stream.derive("output"))?;
                    let released = project_unchecked(&(w.as_vector() + v), eta);
                    Some(evaluate(&released))
                }
            };
            slots[slot] = outcome;
        }
        Ok(slots)
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

/// Loads or generates the data pool named by the configuration.
pub fn load_pool(config: &ExperimentConfig) -> Result<(Dataset, Option<ScaleFactors>)> {
    match &config.data {
        DataSource::Synthetic { d, noise_sd, size } => {
            let size = size.unwrap_or_else(|| (1.25 * config.max_n() as f64).ceil() as usize);
            let stream = RngStream::new(config.seed, 0).derive("data");
            let (ds, _) = generate_synthetic(size, *d, *noise_sd, config.eta, config.task, stream)?;
            Ok((ds, None))
        }
        DataSource::Csv {
            path,
            target_column,
            scale,
            label_threshold,
        } => {
            let threshold = match (config.task, label_threshold) {
                (LossKind::LogisticQuadratic, None) => {
                    return Err(Error::InvalidInput(
                        "classification from CSV needs `label_threshold`".into(),
                    ))
                }
                (_, t) => *t,
            };
            let loaded = load_csv(
                path,
                &CsvOptions {
                    target_column: target_column.clone(),
                    scale: *scale,
                    label_threshold: threshold,
                },
            )?;
            Ok((loaded.dataset, loaded.scale))
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (pool, scale) = load_pool(config)?;
    run_experiment_on(config, &pool, scale)
}

/// Runs the experiment over an already materialized pool.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    pool: &Dataset,
    scale: Option<ScaleFactors>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let spec = LossSpec::for_kind(config.task, pool.dim(), config.eta)?;
    let size = pool.len();
    let test_size = test_size(config.test_fraction, size);
    let train_size = size - test_size;
    if let Some(&n) = config.n_grid.iter().find(|&&n| n > train_size) {
        return Err(Error::InvalidInput(format!(
            "n = {n} exceeds the {train_size} training examples left after the split"
        )));
    }

    let est = config.w_norm_estimate.unwrap_or(config.eta);
    let input_budget = scale_budget(&config.budget, config.alpha)?;
    let input_delta_cap = delta_for(config.delta_cap, &spec, &input_budget, est)?;
    let objective_delta_cap = delta_for(config.objective_delta_cap, &spec, &config.budget, est)?;
    let calibrations = config
        .n_grid
        .iter()
        .map(|&n| {
            let (calibration, error) = match calibrate(input_budget, n, spec.constants, config.slack) {
                Ok(c) => (Some(c), None),
                Err(e @ Error::CalibrationInfeasible { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            let local_dp = calibration.map(|c| local_dp_level(&c, 2.0 * spec.bound_q, 2.0 * spec.bound_p));
            Ok(CalibrationEcho {
                n,
                input_budget,
                calibration,
                local_dp,
                input_delta_cap,
                objective_delta_cap,
                error,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let plan = Plan {
        config,
        spec,
        pool,
        test_size,
        calibrations,
    };

    let units: Vec<(usize, usize)> = if config.mechanisms.is_empty() {
        Vec::new()
    } else {
        (0..config.n_grid.len())
            .flat_map(|i| (0..config.trials).map(move |t| (i, t)))
            .collect()
    };
    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    let outcomes: Vec<Vec<Outcome>> = threads.install(|| {
        units
            .par_iter()
            .map(|&(i, t)| plan.run_unit(i, t))
            .collect::<Result<Vec<_>>>()
    })?;

    let held_out = Metric::held_out(config.task);
    let mut cells = Vec::new();
    for (m_idx, &mech) in config.mechanisms.iter().enumerate() {
        for (n_idx, &n) in config.n_grid.iter().enumerate() {
            let per_trial: Vec<Outcome> = units
                .iter()
                .zip(&outcomes)
                .filter(|((i, _), _)| *i == n_idx)
                .map(|(_, o)| o[m_idx])
                .collect();
            let feasible: Option<Vec<(f64, f64)>> = per_trial.into_iter().collect();
            for (k, metric) in [Metric::ExcessRisk, held_out].into_iter().enumerate() {
                let cell = match &feasible {
                    Some(values) => {
                        let xs: Vec<f64> = values.iter().map(|v| if k == 0 { v.0 } else { v.1 }).collect();
                        let (mean, sd) = mean_sd(&xs);
                        CellSummary {
                            mechanism: mech,
                            n,
                            metric,
                            mean: Some(mean),
                            sd: Some(sd),
                            trials: xs.len(),
                            infeasible: false,
                        }
                    }
                    None => CellSummary {
                        mechanism: mech,
                        n,
                        metric,
                        mean: None,
                        sd: None,
                        trials: 0,
                        infeasible: true,
                    },
                };
                cells.push(cell);
            }
        }
    }

    let mut echo = config.clone();
    echo.workers = None;
    Ok(ExperimentReport {
        config: echo,
        cells,
        calibrations: plan.calibrations,
        scale,
    })
}
