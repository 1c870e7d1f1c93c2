//! Synthetic transfer-regression settings, the experiment runner and its
//! metrics.
//!
//! Source and target covariates are Gaussian with shifted means; responses
//! are linear in the covariate sum with heteroscedastic Gaussian noise whose
//! scale comes from one of three families.

mod experiment;
mod kmeans;
mod metrics;

pub use experiment::{
    aggregate, run_experiment, run_repeat, Aggregate, ExperimentConfig, ExperimentReport, Method, RecordFlags,
    RepeatOutput, RepeatRecord, ScoreType, SelectionRecord, DEFAULT_FIT_STEPS,
};
pub use kmeans::{kmeans, nearest_centroid, KMeansFit};
pub use metrics::{
    acceptable_marginal, metric_improvement_oracle, metric_improvement_rel, metric_miscoverage, metric_std,
    reference_std, PointOutcome,
};

use alloc::vec::Vec;

use crate::data::{standard_normal, DataBundle, LabeledSample, Stream};
use crate::math::sqrt;
use crate::{Error, Result};

/// Noise-scale family `g` in `sigma(x) = sqrt(gamma) * sum_j g(x_j) / sqrt(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SigmaFamily {
    /// `g(t) = log(1 + |t|)`
    LogAbs,
    /// `g(t) = t^2`
    Quad,
    /// `g(t) = log(1 + e^t)`
    Softplus,
}

impl SigmaFamily {
    pub const ALL: [SigmaFamily; 3] = [SigmaFamily::LogAbs, SigmaFamily::Quad, SigmaFamily::Softplus];

    pub fn name(self) -> &'static str {
        match self {
            SigmaFamily::LogAbs => "logabs",
            SigmaFamily::Quad => "quad",
            SigmaFamily::Softplus => "softplus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logabs" => Some(SigmaFamily::LogAbs),
            "quad" => Some(SigmaFamily::Quad),
            "softplus" => Some(SigmaFamily::Softplus),
            _ => None,
        }
    }

    fn g(self, t: f64) -> f64 {
        match self {
            SigmaFamily::LogAbs => libm::log1p(t.abs()),
            SigmaFamily::Quad => t * t,
            SigmaFamily::Softplus => crate::math::softplus(t),
        }
    }
}

/// Heteroscedastic noise scale.
pub fn sigma(family: SigmaFamily, x: &[f64], gamma: f64) -> f64 {
    let d = x.len() as f64;
    sqrt(gamma) * x.iter().map(|&t| family.g(t)).sum::<f64>() / sqrt(d)
}

/// Source and target laws of one synthetic setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSetting {
    pub family: SigmaFamily,
    pub d: usize,
    pub gamma_s: f64,
    pub gamma_t: f64,
    pub mu_s: Vec<f64>,
    pub mu_t: Vec<f64>,
    pub slope_s: f64,
    pub slope_t: f64,
}

impl SyntheticSetting {
    /// Standard setting: `mu_s = 0`, `mu_t = 1_d / (2 sqrt(d))`, slopes
    /// `3/d` (source) and `2/d` (target), `gamma_s = 1.2`, `gamma_t = 1`.
    pub fn new(family: SigmaFamily, d: usize) -> Self {
        let df = d as f64;
        SyntheticSetting {
            family,
            d,
            gamma_s: 1.2,
            gamma_t: 1.0,
            mu_s: alloc::vec![0.0; d],
            mu_t: alloc::vec![1.0 / (2.0 * sqrt(df)); d],
            slope_s: 3.0 / df,
            slope_t: 2.0 / df,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.mu_s.len() != self.d || self.mu_t.len() != self.d {
            return Err(Error::InvalidConfig("setting dimension mismatch".into()));
        }
        if !(self.gamma_s > 0.0 && self.gamma_t > 0.0) {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        Ok(())
    }

    fn draw(&self, stream: &mut Stream, mean: &[f64], slope: f64, gamma: f64) -> LabeledSample {
        let x: Vec<f64> = mean.iter().map(|m| m + standard_normal(stream)).collect();
        let eps = sigma(self.family, &x, gamma) * standard_normal(stream);
        let y = slope * x.iter().sum::<f64>() + eps;
        LabeledSample { x, y }
    }

    pub fn draw_source(&self, stream: &mut Stream) -> LabeledSample {
        self.draw(stream, &self.mu_s, self.slope_s, self.gamma_s)
    }

    pub fn draw_target(&self, stream: &mut Stream) -> LabeledSample {
        self.draw(stream, &self.mu_t, self.slope_t, self.gamma_t)
    }

    pub fn draw_target_x(&self, stream: &mut Stream) -> Vec<f64> {
        self.mu_t.iter().map(|m| m + standard_normal(stream)).collect()
    }
}

/// Sample sizes of one bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleSizes {
    pub n: usize,
    pub m: usize,
    pub big_n: usize,
    pub n_test: usize,
    pub oracle_extra: usize,
}

/// Draws a bundle. Order of draws from `stream`: source (N pairs), target
/// calibration (n pairs), unlabeled target covariates (m), test pairs
/// (n_test), oracle extra pairs. Each pair draws `x` coordinates first,
/// then one noise variate.
pub fn gen_bundle(setting: &SyntheticSetting, sizes: BundleSizes, stream: &mut Stream) -> Result<DataBundle> {
    setting.validate()?;
    let source: Vec<_> = (0..sizes.big_n).map(|_| setting.draw_source(stream)).collect();
    let calib: Vec<_> = (0..sizes.n).map(|_| setting.draw_target(stream)).collect();
    let unlabeled: Vec<_> = (0..sizes.m).map(|_| setting.draw_target_x(stream)).collect();
    let test: Vec<_> = (0..sizes.n_test).map(|_| setting.draw_target(stream)).collect();
    let extra: Vec<_> = (0..sizes.oracle_extra).map(|_| setting.draw_target(stream)).collect();
    DataBundle::new(setting.d, calib, unlabeled, source, test, extra)
}
