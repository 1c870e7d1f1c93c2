//! Marginal score-distribution estimators and the quantile rules built on
//! them: split conformal, direct plug-in (DP), debiased PPI/SDCP and oracle.

use alloc::vec::Vec;

use crate::isotonic::pava;
use crate::math::{ceil_tol, normal_cdf, normal_pdf, normal_quantile, sqrt};
use crate::predictors::{CondCdfParams, LocScale};
use crate::{Error, Result};

/// Slack used when comparing cumulative probabilities to a level.
const LEVEL_TOL: f64 = 1e-12;

/// Default absolute tolerance on `|F(q) - u|` for mixture inversion.
pub const MIXTURE_TOL: f64 = 1e-10;

/// Right-continuous step CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseCdf {
    sorted_values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepwiseCdf {
    /// Builds a CDF from jump locations and the cumulative mass at each.
    pub fn new(sorted_values: Vec<f64>, cumulative: Vec<f64>) -> Result<Self> {
        if sorted_values.is_empty() {
            return Err(Error::EmptyInput("step CDF support"));
        }
        if sorted_values.len() != cumulative.len() {
            return Err(Error::DimensionMismatch {
                expected: sorted_values.len(),
                got: cumulative.len(),
            });
        }
        if sorted_values.windows(2).any(|w| w[0] > w[1]) || cumulative.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("step CDF must be nondecreasing".into()));
        }
        Ok(StepwiseCdf {
            sorted_values,
            cumulative,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted_values
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `F(s)`: cumulative mass at the last support point `<= s`.
    pub fn eval(&self, s: f64) -> f64 {
        let idx = self.sorted_values.partition_point(|&v| v <= s);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Generalized inverse `inf{s : F(s) >= u}`; `+inf` when no support
    /// point reaches `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c < u - LEVEL_TOL);
        self.sorted_values.get(idx).copied().unwrap_or(f64::INFINITY)
    }
}

/// `alpha` and the finite-sample adjusted level `alpha_n = 1 - (1 - alpha)(n + 1) / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaLevels {
    pub alpha: f64,
    pub alpha_n: f64,
    pub n: usize,
}

impl AlphaLevels {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        if n == 0 {
            return Err(Error::EmptyInput("calibration sample"));
        }
        let alpha_n = 1.0 - (1.0 - alpha) * (n as f64 + 1.0) / n as f64;
        Ok(AlphaLevels { alpha, alpha_n, n })
    }

    /// `1 - alpha_n`, the level the calibration quantile is taken at.
    pub fn target_level(&self) -> f64 {
        1.0 - self.alpha_n
    }

    /// True when the threshold is `+inf` (the point mass at infinity is
    /// needed to reach the level).
    pub fn is_infinite(&self) -> bool {
        // alpha_n <= 0 up to rounding
        self.alpha_n <= 1e-12
    }
}

/// Equal-weight empirical CDF of the scores.
pub fn empirical_cdf(scores: &[f64]) -> Result<StepwiseCdf> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput("scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let cumulative = (1..=sorted.len()).map(|i| i as f64 / n).collect();
    Ok(StepwiseCdf {
        sorted_values: sorted,
        cumulative,
    })
}

/// Split-conformal threshold: the `ceil((1 - alpha)(n + 1))`-th smallest
/// score, or `+inf` when that index exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let n = scores.len();
    let k = ceil_tol((1.0 - alpha) * (n as f64 + 1.0)) as usize;
    if k > n {
        return Ok(f64::INFINITY);
    }
    let mut buf = scores.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k.max(1) - 1, f64::total_cmp);
    Ok(*kth)
}

/// Oracle threshold: split conformal on the union of both score sets.
pub fn oracle_quantile(target_scores: &[f64], extra_scores: &[f64], alpha: f64) -> Result<f64> {
    let mut all = Vec::with_capacity(target_scores.len() + extra_scores.len());
    all.extend_from_slice(target_scores);
    all.extend_from_slice(extra_scores);
    conformal_quantile(&all, alpha)
}

/// The transductive marginal `m^{-1} sum_j F(s | x_j; theta)` with each
/// component's location and scale precomputed.
#[derive(Debug, Clone)]
pub struct Mixture<'a> {
    components: Vec<LocScale>,
    covariates: &'a [Vec<f64>],
    spread: f64,
    pooled_mean: f64,
    pooled_sd: f64,
}

impl<'a> Mixture<'a> {
    pub fn new(theta: &CondCdfParams, covariates: &'a [Vec<f64>]) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::EmptyInput("mixture covariates"));
        }
        let components: Vec<LocScale> = covariates.iter().map(|x| theta.loc_scale(x)).collect();
        let m = components.len() as f64;
        let pooled_mean = components.iter().map(|c| c.mu).sum::<f64>() / m;
        let second = components
            .iter()
            .map(|c| c.sigma * c.sigma + (c.mu - pooled_mean) * (c.mu - pooled_mean))
            .sum::<f64>()
            / m;
        let max_sigma = components.iter().fold(0.0f64, |a, c| a.max(c.sigma));
        Ok(Mixture {
            components,
            covariates,
            spread: max_sigma.max(sqrt(second)),
            pooled_mean,
            pooled_sd: sqrt(second),
        })
    }

    pub fn components(&self) -> &[LocScale] {
        &self.components
    }

    pub fn covariates(&self) -> &'a [Vec<f64>] {
        self.covariates
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.components
            .iter()
            .map(|c| normal_cdf((s - c.mu) / c.sigma))
            .sum::<f64>()
            / self.components.len() as f64
    }

    pub fn density(&self, s: f64) -> f64 {
        self.components
            .iter()
            .map(|c| normal_pdf((s - c.mu) / c.sigma) / c.sigma)
            .sum::<f64>()
            / self.components.len() as f64
    }

    fn eval_with_density(&self, s: f64) -> (f64, f64) {
        let (mut cdf, mut dens) = (0.0, 0.0);
        for c in &self.components {
            let z = (s - c.mu) / c.sigma;
            cdf += normal_cdf(z);
            dens += normal_pdf(z) / c.sigma;
        }
        let m = self.components.len() as f64;
        (cdf / m, dens / m)
    }

    /// `inf{s : F(s) >= u}` by safeguarded Newton iteration.
    ///
    /// Newton steps that leave the current bracket fall back to bisection;
    /// while one side of the bracket is still open the search steps
    /// outwards geometrically.
    pub fn quantile(&self, u: f64, tol: f64, start: Option<f64>) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidLevel(u));
        }
        let mut x = match start {
            Some(s) if s.is_finite() => s,
            _ => self.pooled_mean + self.pooled_sd * normal_quantile(u),
        };
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut expansions = 0u32;
        for _ in 0..400 {
            let (cdf, dens) = self.eval_with_density(x);
            let r = cdf - u;
            if r.abs() <= tol {
                return Ok(x);
            }
            if r < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if lo.is_finite() && hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1e-300) {
                return Ok(hi);
            }
            let newton = x - r / dens;
            x = if newton > lo && newton < hi {
                newton
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                expansions += 1;
                if expansions > 200 {
                    return Err(Error::BracketFailure(u));
                }
                let step = self.spread * libm::ldexp(1.0, expansions as i32);
                if r < 0.0 {
                    x + step
                } else {
                    x - step
                }
            };
            if !x.is_finite() {
                return Err(Error::BracketFailure(u));
            }
        }
        Ok(x)
    }
}

/// `m^{-1} sum_j F(s | x_j; theta)`.
pub fn mixture_cdf_eval(theta: &CondCdfParams, s: f64, unlabeled: &[Vec<f64>]) -> Result<f64> {
    Ok(Mixture::new(theta, unlabeled)?.eval(s))
}

/// Inverse of [`mixture_cdf_eval`] to within `tol` in probability.
pub fn mixture_cdf_quantile(theta: &CondCdfParams, u: f64, unlabeled: &[Vec<f64>], tol: f64) -> Result<f64> {
    Mixture::new(theta, unlabeled)?.quantile(u, tol, None)
}

/// Direct plug-in threshold: the `1 - alpha_n` quantile of the
/// source-model mixture over unlabeled target covariates.
pub fn dp_quantile(theta: &CondCdfParams, levels: AlphaLevels, unlabeled: &[Vec<f64>]) -> Result<f64> {
    if levels.is_infinite() {
        return Ok(f64::INFINITY);
    }
    mixture_cdf_quantile(theta, levels.target_level(), unlabeled, MIXTURE_TOL)
}

/// Number of equispaced points added to the debiased-CDF grid.
pub const DEBIAS_GRID_POINTS: usize = 512;

/// Evaluation grid for the debiased CDF: the calibration scores plus
/// [`DEBIAS_GRID_POINTS`] equispaced points over the pooled range of the
/// scores and of both mixtures' 0.001 / 0.999 quantiles.
pub fn debias_grid(
    scores: &[f64],
    theta: &CondCdfParams,
    labeled_x: &[Vec<f64>],
    unlabeled: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let mut lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for xs in [labeled_x, unlabeled] {
        let mix = Mixture::new(theta, xs)?;
        lo = lo.min(mix.quantile(1e-3, MIXTURE_TOL, None)?);
        hi = hi.max(mix.quantile(1.0 - 1e-3, MIXTURE_TOL, None)?);
    }
    let mut grid: Vec<f64> = scores.to_vec();
    let steps = DEBIAS_GRID_POINTS - 1;
    grid.extend((0..DEBIAS_GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / steps as f64));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Raw debiased values `F0(s) + F1(s; unlabeled) - F1(s; labeled)` on the grid.
pub fn debiased_raw(
    f0: &StepwiseCdf,
    theta: &CondCdfParams,
    labeled_x: &[Vec<f64>],
    unlabeled: &[Vec<f64>],
    grid: &[f64],
) -> Result<Vec<f64>> {
    let mix_u = Mixture::new(theta, unlabeled)?;
    let mix_l = Mixture::new(theta, labeled_x)?;
    Ok(grid
        .iter()
        .map(|&s| f0.eval(s) + mix_u.eval(s) - mix_l.eval(s))
        .collect())
}

/// Debiased (PPI-style) score CDF on `grid`, post-processed into a valid
/// CDF: clipped to [0, 1], made nondecreasing by pool-adjacent-violators,
/// and with all remaining mass placed at the top grid point.
pub fn debiased_cdf(
    f0: &StepwiseCdf,
    theta: &CondCdfParams,
    labeled_x: &[Vec<f64>],
    unlabeled: &[Vec<f64>],
    grid: &[f64],
) -> Result<StepwiseCdf> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("debiasing grid"));
    }
    let raw = debiased_raw(f0, theta, labeled_x, unlabeled, grid)?;
    let clipped: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut mono = pava(&clipped);
    if let Some(top) = mono.last_mut() {
        *top = 1.0;
    }
    StepwiseCdf::new(grid.to_vec(), mono)
}

/// `1 - alpha_n` quantile of a debiased CDF; `+inf` when `alpha_n <= 0`.
pub fn debiased_quantile(cdf: &StepwiseCdf, levels: AlphaLevels) -> f64 {
    if levels.is_infinite() {
        return f64::INFINITY;
    }
    cdf.quantile(levels.target_level())
}
