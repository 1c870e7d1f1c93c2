//! JSON experiment configuration.
//!
//! Field names mirror [`ExperimentConfig`]; every field is optional and
//! falls back to the library defaults. Errors carry a JSON pointer to the
//! offending field.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stcp_core::align::{AlignmentConfig, LambdaSelectionConfig, Optimizer};
use stcp_core::simlab::{ExperimentConfig, Method, ScoreType, SigmaFamily, SyntheticSetting};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettingFile {
    pub family: String,
    pub d: usize,
    pub gamma_s: f64,
    pub gamma_t: f64,
}

impl Default for SettingFile {
    fn default() -> Self {
        let s = SyntheticSetting::new(SigmaFamily::LogAbs, 5);
        SettingFile {
            family: s.family.name().into(),
            d: s.d,
            gamma_s: s.gamma_s,
            gamma_t: s.gamma_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentFile {
    pub grid_size: usize,
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub bisect_tol: f64,
    pub step_growth: f64,
    /// `levenberg_marquardt` or `gradient_descent`.
    pub optimizer: String,
}

impl Default for AlignmentFile {
    fn default() -> Self {
        AlignmentFile::from(&AlignmentConfig::default())
    }
}

impl From<&AlignmentConfig> for AlignmentFile {
    fn from(a: &AlignmentConfig) -> Self {
        AlignmentFile {
            grid_size: a.grid_size,
            step_size: a.step_size,
            max_iters: a.max_iters,
            grad_tol: a.grad_tol,
            bisect_tol: a.bisect_tol,
            step_growth: a.step_growth,
            optimizer: optimizer_name(a.optimizer).into(),
        }
    }
}

fn optimizer_name(o: Optimizer) -> &'static str {
    match o {
        Optimizer::GradientDescent => "gradient_descent",
        Optimizer::LevenbergMarquardt => "levenberg_marquardt",
    }
}

/// On-disk form of an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub setting: SettingFile,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub alpha_tol: f64,
    pub lambda_grid: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub score_type: String,
    pub methods: Vec<String>,
    pub oracle_extra: usize,
    pub theta_shift: f64,
    pub fit_steps: usize,
    pub fit_step_size: f64,
    pub alignment: AlignmentFile,
    pub warm_start: bool,
    pub n_partitions: usize,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile::from(&ExperimentConfig::new(SyntheticSetting::new(SigmaFamily::LogAbs, 5)))
    }
}

impl From<&ExperimentConfig> for ConfigFile {
    fn from(c: &ExperimentConfig) -> Self {
        ConfigFile {
            setting: SettingFile {
                family: c.setting.family.name().into(),
                d: c.setting.d,
                gamma_s: c.setting.gamma_s,
                gamma_t: c.setting.gamma_t,
            },
            n: c.n,
            m: c.m,
            big_n: c.big_n,
            n_test: c.n_test,
            alpha: c.alpha,
            alpha_tol: c.alpha_tol,
            lambda_grid: c.lambda_grid.clone(),
            repeats: c.repeats,
            base_seed: c.base_seed,
            score_type: c.score_type.name().into(),
            methods: c.methods.iter().map(|m| m.name().to_string()).collect(),
            oracle_extra: c.oracle_extra,
            theta_shift: c.theta_shift,
            fit_steps: c.fit_steps,
            fit_step_size: c.fit_step_size,
            alignment: AlignmentFile::from(&c.align),
            warm_start: c.warm_start,
            n_partitions: c.n_partitions,
        }
    }
}

fn invalid(pointer: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn positive(value: usize, pointer: &str) -> Result<(), CliError> {
    if value == 0 {
        return Err(invalid(pointer, "must be a positive integer"));
    }
    Ok(())
}

fn positive_real(value: f64, pointer: &str) -> Result<(), CliError> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(invalid(pointer, format!("must be a positive finite number, got {value}")));
    }
    Ok(())
}

impl ConfigFile {
    /// Validates every field and builds the library configuration.
    pub fn to_experiment(&self) -> Result<ExperimentConfig, CliError> {
        let family = SigmaFamily::parse(&self.setting.family)
            .ok_or_else(|| invalid("/setting/family", "expected one of logabs, quad, softplus"))?;
        positive(self.setting.d, "/setting/d")?;
        positive_real(self.setting.gamma_s, "/setting/gamma_s")?;
        positive_real(self.setting.gamma_t, "/setting/gamma_t")?;
        let mut setting = SyntheticSetting::new(family, self.setting.d);
        setting.gamma_s = self.setting.gamma_s;
        setting.gamma_t = self.setting.gamma_t;

        for (v, p) in [
            (self.n, "/n"),
            (self.m, "/m"),
            (self.big_n, "/N"),
            (self.n_test, "/n_test"),
            (self.repeats, "/repeats"),
            (self.oracle_extra, "/oracle_extra"),
            (self.n_partitions, "/n_partitions"),
        ] {
            positive(v, p)?;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("/alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        positive_real(self.alpha_tol, "/alpha_tol")?;
        if self.n_partitions > self.n + self.m {
            return Err(invalid("/n_partitions", "must not exceed n + m"));
        }
        let score_type = ScoreType::parse(&self.score_type)
            .ok_or_else(|| invalid("/score_type", "expected one of residual, glcp, cqr"))?;
        if self.methods.is_empty() {
            return Err(invalid("/methods", "must list at least one method"));
        }
        let mut methods = Vec::new();
        for (i, name) in self.methods.iter().enumerate() {
            let m = Method::parse(name).ok_or_else(|| {
                invalid(
                    &format!("/methods/{i}"),
                    format!("unknown method {name:?}; expected base, dp, ppi, sdcp, stcp, stcp_sel or oracle"),
                )
            })?;
            if methods.contains(&m) {
                return Err(invalid(&format!("/methods/{i}"), format!("method {name:?} listed twice")));
            }
            methods.push(m);
        }
        let selection = LambdaSelectionConfig {
            lambda_grid: self.lambda_grid.clone(),
            alpha_tol: self.alpha_tol,
            ..LambdaSelectionConfig::default()
        };
        selection.validate().map_err(|e| invalid("/lambda_grid", e.to_string()))?;
        if !self.theta_shift.is_finite() {
            return Err(invalid("/theta_shift", "must be finite"));
        }
        positive(self.fit_steps, "/fit_steps")?;
        positive_real(self.fit_step_size, "/fit_step_size")?;

        let a = &self.alignment;
        if a.grid_size < 2 {
            return Err(invalid("/alignment/grid_size", "must be at least 2"));
        }
        positive_real(a.step_size, "/alignment/step_size")?;
        positive(a.max_iters, "/alignment/max_iters")?;
        positive_real(a.grad_tol, "/alignment/grad_tol")?;
        positive_real(a.bisect_tol, "/alignment/bisect_tol")?;
        if !(a.step_growth >= 1.0 && a.step_growth.is_finite()) {
            return Err(invalid("/alignment/step_growth", "must be finite and at least 1"));
        }
        let optimizer = match a.optimizer.as_str() {
            "levenberg_marquardt" => Optimizer::LevenbergMarquardt,
            "gradient_descent" => Optimizer::GradientDescent,
            _ => {
                return Err(invalid(
                    "/alignment/optimizer",
                    "expected levenberg_marquardt or gradient_descent",
                ))
            }
        };

        let config = ExperimentConfig {
            setting,
            n: self.n,
            m: self.m,
            big_n: self.big_n,
            n_test: self.n_test,
            alpha: self.alpha,
            alpha_tol: self.alpha_tol,
            lambda_grid: self.lambda_grid.clone(),
            repeats: self.repeats,
            base_seed: self.base_seed,
            score_type,
            methods,
            oracle_extra: self.oracle_extra,
            theta_shift: self.theta_shift,
            fit_steps: self.fit_steps,
            fit_step_size: self.fit_step_size,
            align: AlignmentConfig {
                lambda: 0.0,
                grid_size: a.grid_size,
                step_size: a.step_size,
                max_iters: a.max_iters,
                grad_tol: a.grad_tol,
                bisect_tol: a.bisect_tol,
                step_growth: a.step_growth,
                optimizer,
            },
            warm_start: self.warm_start,
            n_partitions: self.n_partitions,
            full_lambda_table: false,
        };
        // anything the field checks above missed
        config.validate().map_err(|e| invalid("", e.to_string()))?;
        Ok(config)
    }
}

/// Parses a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_from_path(e.path());
        invalid(&pointer, e.inner().to_string())
    })?;
    file.to_experiment()
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid("", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn pointer_from_path(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

/// Canonical JSON of the normalized configuration: defaults filled in,
/// keys sorted, no whitespace.
pub fn canonical_json(config: &ExperimentConfig) -> String {
    // serde_json::Value keeps object keys sorted
    let value = serde_json::to_value(ConfigFile::from(config)).expect("config serializes");
    serde_json::to_string(&value).expect("value serializes")
}

/// Hex SHA-256 of [`canonical_json`].
pub fn config_digest(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(canonical_json(config).as_bytes()))
}
