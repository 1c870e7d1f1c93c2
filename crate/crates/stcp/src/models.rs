//! JSON snapshots of fitted models: `{"kind", "dim", "parameters"}`.
//!
//! Parameter layouts:
//! - `linear_mean`: weights, then intercept.
//! - `linear_quantile`: weights, intercept, then the quantile level.
//! - `cond_cdf`: location weights, location intercept, scale weights, raw
//!   scale intercept (before softplus).

use serde::{Deserialize, Serialize};
use stcp_core::predictors::{CondCdfParams, MeanPredictor, QuantilePredictor};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSnapshot {
    pub kind: String,
    pub dim: usize,
    pub parameters: Vec<f64>,
}

fn mismatch(kind: &str, expected: usize, got: usize) -> CliError {
    CliError::Config {
        pointer: "/parameters".into(),
        message: format!("{kind} of this dim needs {expected} parameters, got {got}"),
    }
}

impl ModelSnapshot {
    fn expect(&self, kind: &str, len: usize) -> Result<(), CliError> {
        if self.kind != kind {
            return Err(CliError::Config {
                pointer: "/kind".into(),
                message: format!("expected {kind}, got {}", self.kind),
            });
        }
        if self.parameters.len() != len {
            return Err(mismatch(kind, len, self.parameters.len()));
        }
        Ok(())
    }

    pub fn to_mean(&self) -> Result<MeanPredictor, CliError> {
        self.expect("linear_mean", self.dim + 1)?;
        Ok(MeanPredictor {
            weights: self.parameters[..self.dim].to_vec(),
            intercept: self.parameters[self.dim],
        })
    }

    pub fn to_quantile(&self) -> Result<QuantilePredictor, CliError> {
        self.expect("linear_quantile", self.dim + 2)?;
        Ok(QuantilePredictor {
            weights: self.parameters[..self.dim].to_vec(),
            intercept: self.parameters[self.dim],
            level: self.parameters[self.dim + 1],
        })
    }

    pub fn to_cond_cdf(&self) -> Result<CondCdfParams, CliError> {
        self.expect("cond_cdf", 2 * self.dim + 2)?;
        Ok(CondCdfParams::from_flat(self.dim, &self.parameters)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config {
            pointer: String::new(),
            message: e.to_string(),
        })
    }
}

impl From<&MeanPredictor> for ModelSnapshot {
    fn from(m: &MeanPredictor) -> Self {
        let mut parameters = m.weights.clone();
        parameters.push(m.intercept);
        ModelSnapshot {
            kind: "linear_mean".into(),
            dim: m.weights.len(),
            parameters,
        }
    }
}

impl From<&QuantilePredictor> for ModelSnapshot {
    fn from(m: &QuantilePredictor) -> Self {
        let mut parameters = m.weights.clone();
        parameters.extend([m.intercept, m.level]);
        ModelSnapshot {
            kind: "linear_quantile".into(),
            dim: m.weights.len(),
            parameters,
        }
    }
}

impl From<&CondCdfParams> for ModelSnapshot {
    fn from(t: &CondCdfParams) -> Self {
        ModelSnapshot {
            kind: "cond_cdf".into(),
            dim: t.dim(),
            parameters: t.to_flat(),
        }
    }
}
