use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::DEFAULT_SLACK;
use crate::domain::PrivacyBudget;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::solver::{Mechanism, SolverConfig, DEFAULT_OUTPUT_REG};

/// How the regularization cap is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaCap {
    #[default]
    Recommended,
    Explicit(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        d: usize,
        noise_sd: f64,
        /// Pool size before the train/test split; defaults to `ceil(1.25 max n)`.
        #[serde(default)]
        size: Option<usize>,
    },
    Csv {
        path: PathBuf,
        target_column: String,
        #[serde(default = "yes")]
        scale: bool,
        /// Targets above this become `+1`, the rest `-1`; used for classification.
        #[serde(default)]
        label_threshold: Option<f64>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: LossKind,
    pub mechanisms: Vec<Mechanism>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub budget: PrivacyBudget,
    /// Fraction of epsilon spent by the input mechanism.
    pub alpha: f64,
    pub eta: f64,
    pub delta_cap: DeltaCap,
    pub objective_delta_cap: DeltaCap,
    /// Estimate of `||w_hat||` used by the recommended cap; defaults to `eta`.
    pub w_norm_estimate: Option<f64>,
    pub seed: u64,
    pub data: DataSource,
    pub test_fraction: f64,
    /// Ridge strength of the output-perturbation baseline.
    pub output_reg: f64,
    pub slack: f64,
    /// Reuse the input mechanism's aggregate linear noise, rescaled, as the
    /// objective mechanism's noise so that the two are compared on common draws.
    pub paired_noise: bool,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: LossKind::LinearRegression,
            mechanisms: Mechanism::ALL.to_vec(),
            n_grid: vec![128, 512, 2048, 8192, 32768],
            trials: 50,
            budget: PrivacyBudget {
                epsilon: 1.0,
                delta: 0.01,
            },
            alpha: 1.0,
            eta: 1.0,
            delta_cap: DeltaCap::Recommended,
            objective_delta_cap: DeltaCap::Recommended,
            w_norm_estimate: None,
            seed: 0,
            data: DataSource::Synthetic {
                d: 14,
                noise_sd: 0.1,
                size: None,
            },
            test_fraction: 0.2,
            output_reg: DEFAULT_OUTPUT_REG,
            slack: DEFAULT_SLACK,
            paired_noise: true,
            workers: None,
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        PrivacyBudget::new(self.budget.epsilon, self.budget.delta)?;
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::InvalidInput(
                "n_grid must be non-empty with positive sizes".into(),
            ));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("n_grid must be strictly ascending".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::OutOfRange {
                name: "alpha",
                value: self.alpha,
                expected: "in (0, 1]".into(),
            });
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::OutOfRange {
                name: "eta",
                value: self.eta,
                expected: "finite and > 0".into(),
            });
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::OutOfRange {
                name: "test_fraction",
                value: self.test_fraction,
                expected: "in (0, 1)".into(),
            });
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidInput("workers must be at least 1".into()));
        }
        if let DataSource::Synthetic { d, .. } = self.data {
            if d == 0 {
                return Err(Error::InvalidInput("synthetic dimension must be positive".into()));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(m) = self.mechanisms.iter().find(|m| !seen.insert(**m)) {
            return Err(Error::InvalidInput(format!("mechanism `{m}` listed twice")));
        }
        Ok(())
    }

    pub fn max_n(&self) -> usize {
        self.n_grid.iter().copied().max().unwrap_or(0)
    }
}
