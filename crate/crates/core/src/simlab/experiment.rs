//! Per-repeat runner and aggregation over repeats.
//!
//! Each repeat is a pure function of the configuration and the repeat
//! index. The repeat's stream is split into sub-stream 0 for data and
//! sub-stream 1 for the k-means partition seeding.

use alloc::string::String;
use alloc::vec::Vec;

use super::kmeans::{kmeans, nearest_centroid};
use super::metrics::{
    acceptable_marginal, metric_improvement_oracle, metric_improvement_rel, metric_miscoverage, metric_std,
    reference_std, PointOutcome,
};
use super::{gen_bundle, BundleSizes, SyntheticSetting};
use crate::align::{
    choose_lambda, feasibility_band, lambda_table, select_lambda_descending, AlignmentConfig, LambdaRow,
    LambdaSelectionConfig,
};
use crate::calib::{
    conformal_quantile, debias_grid, debiased_cdf, debiased_quantile, dp_quantile, empirical_cdf, oracle_quantile,
    AlphaLevels,
};
use crate::data::{derive_stream, DataBundle, LabeledSample, SeedSpec};
use crate::predictors::{fit_cond_cdf, fit_linear_mean, fit_linear_quantile, CondCdfParams};
use crate::scores::ScoreModel;
use crate::{Error, Result};

/// Gradient steps for every conditional-model fit.
pub const DEFAULT_FIT_STEPS: usize = 500;

const DATA_STREAM: u64 = 0;
const PARTITION_STREAM: u64 = 1;
const KMEANS_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreType {
    Residual,
    Glcp,
    Cqr,
}

impl ScoreType {
    pub fn name(self) -> &'static str {
        match self {
            ScoreType::Residual => "residual",
            ScoreType::Glcp => "glcp",
            ScoreType::Cqr => "cqr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "residual" => Some(ScoreType::Residual),
            "glcp" => Some(ScoreType::Glcp),
            "cqr" => Some(ScoreType::Cqr),
            _ => None,
        }
    }
}

/// Threshold rules compared by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Base,
    Dp,
    Ppi,
    Sdcp,
    /// One record per lambda in the grid.
    Stcp,
    /// Aligned threshold at the selected lambda.
    StcpSel,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Base,
        Method::Dp,
        Method::Ppi,
        Method::Sdcp,
        Method::Stcp,
        Method::StcpSel,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Dp => "dp",
            Method::Ppi => "ppi",
            Method::Sdcp => "sdcp",
            Method::Stcp => "stcp",
            Method::StcpSel => "stcp_sel",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setting: SyntheticSetting,
    pub n: usize,
    pub m: usize,
    pub big_n: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub alpha_tol: f64,
    pub lambda_grid: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub score_type: ScoreType,
    pub methods: Vec<Method>,
    pub oracle_extra: usize,
    /// Added to the location intercept of the source conditional model
    /// before any method uses it.
    pub theta_shift: f64,
    pub fit_steps: usize,
    pub fit_step_size: f64,
    pub align: AlignmentConfig,
    /// Start each lambda from the previous lambda's solution.
    pub warm_start: bool,
    pub n_partitions: usize,
    /// Keep the full per-lambda table for `StcpSel` even when `Stcp` is not
    /// requested (otherwise only the lambdas needed for the choice are run).
    pub full_lambda_table: bool,
}

impl ExperimentConfig {
    /// Defaults: n = 30, m = 500, N = 1000, 2000 test points, alpha = 0.1,
    /// GLCP scores, all methods, 50 repeats.
    pub fn new(setting: SyntheticSetting) -> Self {
        let selection = LambdaSelectionConfig::default();
        ExperimentConfig {
            setting,
            n: 30,
            m: 500,
            big_n: 1000,
            n_test: 2000,
            alpha: 0.1,
            alpha_tol: selection.alpha_tol,
            lambda_grid: selection.lambda_grid,
            repeats: 50,
            base_seed: 0,
            score_type: ScoreType::Glcp,
            methods: Method::ALL.to_vec(),
            oracle_extra: 2000,
            theta_shift: 0.0,
            fit_steps: DEFAULT_FIT_STEPS,
            fit_step_size: 0.1,
            align: AlignmentConfig::default(),
            warm_start: false,
            n_partitions: 10,
            full_lambda_table: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.setting.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be nonempty".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::InvalidConfig(alloc::format!("method {} listed twice", m.name())));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.n == 0 || self.m == 0 || self.big_n == 0 || self.n_test == 0 || self.repeats == 0 {
            return Err(Error::InvalidConfig("n, m, N, n_test and repeats must be positive".into()));
        }
        if self.methods.contains(&Method::Oracle) && self.oracle_extra == 0 {
            return Err(Error::InvalidConfig("oracle_extra must be positive".into()));
        }
        if self.n_partitions == 0 || self.n_partitions > self.n + self.m {
            return Err(Error::InvalidConfig("n_partitions must lie in 1..=n+m".into()));
        }
        if !self.theta_shift.is_finite() || !(self.fit_step_size > 0.0) {
            return Err(Error::InvalidConfig("theta_shift must be finite and fit_step_size positive".into()));
        }
        self.selection().validate()?;
        self.align.validate()
    }

    pub fn selection(&self) -> LambdaSelectionConfig {
        LambdaSelectionConfig {
            lambda_grid: self.lambda_grid.clone(),
            alpha_tol: self.alpha_tol,
            warm_start: self.warm_start,
            ..LambdaSelectionConfig::default()
        }
    }

    fn sizes(&self) -> BundleSizes {
        BundleSizes {
            n: self.n,
            m: self.m,
            big_n: self.big_n,
            n_test: self.n_test,
            // the extra sample is drawn last, so skipping it leaves the rest unchanged
            oracle_extra: if self.methods.contains(&Method::Oracle) {
                self.oracle_extra
            } else {
                0
            },
        }
    }
}

/// Per-record diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordFlags {
    /// The alignment stopped at `max_iters` without meeting `grad_tol`.
    pub not_converged: bool,
    /// No lambda was feasible; the split-conformal threshold was used.
    pub infeasible_fallback: bool,
}

impl RecordFlags {
    pub fn is_empty(&self) -> bool {
        !self.not_converged && !self.infeasible_fallback
    }

    /// `|`-separated flag names, empty when none is set.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.not_converged {
            parts.push("not_converged");
        }
        if self.infeasible_fallback {
            parts.push("infeasible_fallback");
        }
        parts.join("|")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatRecord {
    pub repeat_index: usize,
    pub method: Method,
    pub lambda_used: Option<f64>,
    pub q_hat: f64,
    pub marginal_coverage: f64,
    pub mean_size: f64,
    pub miscoverage: f64,
    pub flags: RecordFlags,
}

/// Lambda selection outcome of one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub repeat_index: usize,
    pub lambda_hat: f64,
    pub q_sel: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    /// Evaluated rows in ascending lambda order.
    pub table: Vec<LambdaRow>,
    pub infeasible_fallback: bool,
}

/// Everything one repeat produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatOutput {
    pub records: Vec<RepeatRecord>,
    pub selection: Option<SelectionRecord>,
}

struct Fitted {
    score: ScoreModel,
    // only fitted when some configured method uses it
    theta_hat: Option<CondCdfParams>,
}

impl Fitted {
    fn theta_hat(&self) -> &CondCdfParams {
        self.theta_hat.as_ref().expect("source model fitted for model-based methods")
    }
}

fn score_samples(model: &ScoreModel, data: &[LabeledSample]) -> Vec<LabeledSample> {
    data.iter()
        .map(|p| LabeledSample {
            x: p.x.clone(),
            y: model.score(&p.x, p.y),
        })
        .collect()
}

fn fit_models(config: &ExperimentConfig, source: &[LabeledSample]) -> Result<Fitted> {
    let score = match config.score_type {
        ScoreType::Residual => ScoreModel::Residual {
            mean: fit_linear_mean(source)?,
        },
        ScoreType::Glcp => {
            let mean = fit_linear_mean(source)?;
            let v: Vec<LabeledSample> = source
                .iter()
                .map(|p| LabeledSample {
                    x: p.x.clone(),
                    y: (p.y - mean.predict(&p.x)).abs(),
                })
                .collect();
            let v_cdf = fit_cond_cdf(&v, config.fit_steps, config.fit_step_size)?;
            ScoreModel::Glcp { mean, v_cdf }
        }
        ScoreType::Cqr => {
            let lo = fit_linear_quantile(source, config.alpha / 2.0)?;
            let hi = fit_linear_quantile(source, 1.0 - config.alpha / 2.0)?;
            ScoreModel::cqr(lo, hi)?
        }
    };
    let needs_model = config
        .methods
        .iter()
        .any(|m| matches!(m, Method::Dp | Method::Ppi | Method::Stcp | Method::StcpSel));
    let theta_hat = if needs_model {
        Some(fit_cond_cdf(&score_samples(&score, source), config.fit_steps, config.fit_step_size)?.shifted(config.theta_shift))
    } else {
        None
    };
    Ok(Fitted { score, theta_hat })
}

// Test scores plus each test point's partition.
struct TestSet<'a> {
    xs: Vec<&'a [f64]>,
    scores: Vec<f64>,
    partitions: Vec<usize>,
}

impl TestSet<'_> {
    fn evaluate(&self, config: &ExperimentConfig, score: &ScoreModel, q_hat: f64) -> (f64, f64, f64) {
        let outcomes: Vec<PointOutcome> = self
            .scores
            .iter()
            .zip(&self.partitions)
            .map(|(&s, &partition)| PointOutcome {
                partition,
                covered: q_hat == f64::INFINITY || s <= q_hat,
            })
            .collect();
        let covered = outcomes.iter().filter(|p| p.covered).count();
        let marginal = covered as f64 / outcomes.len() as f64;
        let size = score.mean_set_size(q_hat, self.xs.iter().copied());
        let miscoverage = metric_miscoverage(&outcomes, config.alpha, config.n_partitions);
        (marginal, size, miscoverage)
    }
}

fn partitions(config: &ExperimentConfig, bundle: &DataBundle, repeat: usize) -> Result<Vec<usize>> {
    let mut points: Vec<Vec<f64>> = bundle.target_labeled().iter().map(|p| p.x.clone()).collect();
    points.extend(bundle.target_unlabeled().iter().cloned());
    let mut stream = derive_stream(SeedSpec::new(config.base_seed, repeat as u64)).substream(PARTITION_STREAM);
    let fit = kmeans(&points, config.n_partitions, &mut stream, KMEANS_ITERS)?;
    Ok(bundle.test().iter().map(|p| nearest_centroid(&fit.centroids, &p.x)).collect())
}

/// Runs one repeat of every configured method.
pub fn run_repeat(config: &ExperimentConfig, repeat: usize) -> Result<RepeatOutput> {
    let ctx = |method: &'static str| move |e: Error| e.in_repeat(repeat, method);
    let mut stream = derive_stream(SeedSpec::new(config.base_seed, repeat as u64)).substream(DATA_STREAM);
    let bundle = gen_bundle(&config.setting, config.sizes(), &mut stream).map_err(ctx("data"))?;
    let fitted = fit_models(config, bundle.source_labeled()).map_err(ctx("source fit"))?;
    let score = &fitted.score;

    let calib = score_samples(score, bundle.target_labeled());
    let calib_scores: Vec<f64> = calib.iter().map(|p| p.y).collect();
    let calib_x: Vec<Vec<f64>> = calib.iter().map(|p| p.x.clone()).collect();
    let unlabeled = bundle.target_unlabeled();
    let levels = AlphaLevels::new(config.alpha, config.n).map_err(ctx("levels"))?;
    let test = TestSet {
        xs: bundle.test().iter().map(|p| p.x.as_slice()).collect(),
        scores: bundle.test().iter().map(|p| score.score(&p.x, p.y)).collect(),
        partitions: partitions(config, &bundle, repeat).map_err(ctx("partitions"))?,
    };

    let mut records = Vec::new();
    let mut selection = None;
    let mut push = |method, lambda_used, q_hat, flags| {
        let (marginal_coverage, mean_size, miscoverage) = test.evaluate(config, score, q_hat);
        records.push(RepeatRecord {
            repeat_index: repeat,
            method,
            lambda_used,
            q_hat,
            marginal_coverage,
            mean_size,
            miscoverage,
            flags,
        });
    };

    for &method in &config.methods {
        let wrap = ctx(method.name());
        match method {
            Method::Base => {
                let q = conformal_quantile(&calib_scores, config.alpha).map_err(wrap)?;
                push(method, None, q, RecordFlags::default());
            }
            Method::Oracle => {
                let extra: Vec<f64> = bundle.oracle_extra().iter().map(|p| score.score(&p.x, p.y)).collect();
                let q = oracle_quantile(&calib_scores, &extra, config.alpha).map_err(wrap)?;
                push(method, None, q, RecordFlags::default());
            }
            Method::Dp => {
                let q = dp_quantile(fitted.theta_hat(), levels, unlabeled).map_err(wrap)?;
                push(method, None, q, RecordFlags::default());
            }
            Method::Ppi | Method::Sdcp => {
                let q = (|| {
                    if levels.is_infinite() {
                        return Ok(f64::INFINITY);
                    }
                    let theta = if method == Method::Sdcp {
                        fit_cond_cdf(&calib, config.fit_steps, config.fit_step_size)?
                    } else {
                        fitted.theta_hat().clone()
                    };
                    let f0 = empirical_cdf(&calib_scores)?;
                    let grid = debias_grid(&calib_scores, &theta, &calib_x, unlabeled)?;
                    let cdf = debiased_cdf(&f0, &theta, &calib_x, unlabeled, &grid)?;
                    Ok(debiased_quantile(&cdf, levels))
                })()
                .map_err(wrap)?;
                push(method, None, q, RecordFlags::default());
            }
            Method::Stcp | Method::StcpSel => {}
        }
    }

    let want_stcp = config.methods.contains(&Method::Stcp);
    let want_sel = config.methods.contains(&Method::StcpSel);
    if want_stcp || want_sel {
        let sel_cfg = config.selection();
        let full = want_stcp || config.full_lambda_table || config.warm_start;
        let outcome = if full {
            lambda_table(fitted.theta_hat(), &sel_cfg, levels, &calib_scores, unlabeled, &config.align)
                .map(|(band, table)| choose_lambda(band, table.clone()).map_err(|_| (band, table)))
        } else {
            match select_lambda_descending(fitted.theta_hat(), &sel_cfg, levels, &calib_scores, unlabeled, &config.align) {
                Ok(s) => Ok(Ok(s)),
                Err(Error::InfeasibleAll) => {
                    let f0 = empirical_cdf(&calib_scores).map_err(ctx("stcp_sel"))?;
                    Ok(Err((feasibility_band(&f0, config.alpha, config.alpha_tol), Vec::new())))
                }
                Err(e) => Err(e),
            }
        };
        let record = match outcome.map_err(ctx("stcp"))? {
            Ok(s) => SelectionRecord {
                repeat_index: repeat,
                lambda_hat: s.lambda_hat,
                q_sel: s.q_sel,
                q_lower: s.q_lower,
                q_upper: s.q_upper,
                table: s.table,
                infeasible_fallback: false,
            },
            // λ = 0 missed the band: the alignment could not reproduce the
            // calibration quantile, so use that quantile directly
            Err((band, table)) => SelectionRecord {
                repeat_index: repeat,
                lambda_hat: 0.0,
                q_sel: conformal_quantile(&calib_scores, config.alpha).map_err(ctx("stcp_sel"))?,
                q_lower: band.0,
                q_upper: band.1,
                table,
                infeasible_fallback: true,
            },
        };
        if want_stcp {
            for row in &record.table {
                let flags = RecordFlags {
                    not_converged: !row.converged,
                    infeasible_fallback: false,
                };
                push(Method::Stcp, Some(row.lambda), row.q_st, flags);
            }
        }
        if want_sel {
            let chosen = record.table.iter().find(|r| r.lambda == record.lambda_hat);
            let flags = RecordFlags {
                not_converged: chosen.is_some_and(|r| !r.converged),
                infeasible_fallback: record.infeasible_fallback,
            };
            push(Method::StcpSel, Some(record.lambda_hat), record.q_sel, flags);
        }
        selection = Some(record);
    }

    // canonical order: configured method order, stcp rows by ascending lambda
    let order = |m: Method| config.methods.iter().position(|x| *x == m).unwrap_or(usize::MAX);
    records.sort_by_key(|r| order(r.method));
    Ok(RepeatOutput { records, selection })
}

/// Summary of one method (and lambda, for `Stcp`) across repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: Method,
    /// Set for `Stcp` rows only.
    pub lambda: Option<f64>,
    pub repeats: usize,
    /// `None` with fewer than two repeats; `+inf` when any size is infinite.
    pub std_of_mean_size: Option<f64>,
    pub std_infinite: bool,
    pub mean_marginal: f64,
    pub mean_size: f64,
    pub mean_miscoverage: f64,
    /// Relative to the base method's Std, when base is present.
    pub improvement_rel: Option<f64>,
    /// Relative to the oracle and the best acceptable of base/SDCP/PPI.
    pub improvement_oracle: Option<f64>,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<RepeatRecord>,
    pub aggregates: Vec<Aggregate>,
    pub selections: Vec<SelectionRecord>,
}

impl ExperimentReport {
    /// Builds the report from repeat outputs given in repeat order.
    pub fn from_outputs(config: &ExperimentConfig, outputs: Vec<RepeatOutput>) -> Self {
        let mut records = Vec::new();
        let mut selections = Vec::new();
        for out in outputs {
            records.extend(out.records);
            selections.extend(out.selection);
        }
        let aggregates = aggregate(&records, config.alpha, config.n);
        ExperimentReport {
            records,
            aggregates,
            selections,
        }
    }

    pub fn find(&self, method: Method, lambda: Option<f64>) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.lambda == lambda)
    }

    /// The `Stcp` lambda with the smallest Std among those whose marginal
    /// coverage is acceptable.
    pub fn best_stcp(&self, alpha: f64, n: usize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .filter(|a| a.method == Method::Stcp && acceptable_marginal(a.mean_marginal, alpha, n))
            .filter_map(|a| a.std_of_mean_size.map(|s| (s, a)))
            .filter(|(s, _)| s.is_finite())
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, a)| a)
    }
}

fn group_key(r: &RepeatRecord) -> (Method, Option<u64>) {
    let lambda = if r.method == Method::Stcp {
        r.lambda_used.map(f64::to_bits)
    } else {
        None
    };
    (r.method, lambda)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    sum / count as f64
}

/// Groups records by method (and lambda for `Stcp`) in first-appearance
/// order and summarizes each group.
pub fn aggregate(records: &[RepeatRecord], alpha: f64, n: usize) -> Vec<Aggregate> {
    let mut keys: Vec<(Method, Option<u64>)> = Vec::new();
    for r in records {
        let k = group_key(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out: Vec<Aggregate> = keys
        .iter()
        .map(|&(method, lambda)| {
            let group: Vec<&RepeatRecord> = records.iter().filter(|r| group_key(r) == (method, lambda)).collect();
            let sizes: Vec<f64> = group.iter().map(|r| r.mean_size).collect();
            let std = metric_std(&sizes).ok();
            Aggregate {
                method,
                lambda: lambda.map(f64::from_bits),
                repeats: group.len(),
                std_of_mean_size: std,
                std_infinite: std == Some(f64::INFINITY),
                mean_marginal: mean(group.iter().map(|r| r.marginal_coverage)),
                mean_size: mean(sizes.iter().copied()),
                mean_miscoverage: mean(group.iter().map(|r| r.miscoverage)),
                improvement_rel: None,
                improvement_oracle: None,
                flagged: group.iter().filter(|r| !r.flags.is_empty()).count(),
            }
        })
        .collect();

    let finite_std = |m: Method| {
        out.iter()
            .find(|a| a.method == m)
            .and_then(|a| a.std_of_mean_size)
            .filter(|s| s.is_finite())
    };
    let base = finite_std(Method::Base);
    let oracle = finite_std(Method::Oracle);
    let candidates: Vec<(f64, f64)> = out
        .iter()
        .filter(|a| matches!(a.method, Method::Base | Method::Sdcp | Method::Ppi))
        .filter_map(|a| a.std_of_mean_size.map(|s| (s, a.mean_marginal)))
        .collect();
    let reference = reference_std(&candidates, alpha, n);
    for a in &mut out {
        let Some(s) = a.std_of_mean_size.filter(|s| s.is_finite()) else {
            continue;
        };
        a.improvement_rel = base.and_then(|b| metric_improvement_rel(s, b).ok());
        if let (Some(a0), Some(a_ref)) = (oracle, reference) {
            a.improvement_oracle = metric_improvement_oracle(s, a0, a_ref).ok();
        }
    }
    out
}

/// Runs every repeat sequentially and aggregates.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let outputs = (0..config.repeats)
        .map(|r| run_repeat(config, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::from_outputs(config, outputs))
}
