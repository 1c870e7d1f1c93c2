//! Regularized finite-grid Wasserstein alignment of the conditional score
//! model, the aligned (StCP) quantile, and data-driven choice of the
//! regularization weight.
//!
//! For parameters `theta` the objective is
//!
//! ```text
//! J(theta) = mean_k (q0[k] - q1(u_k; theta))^2 + lambda * |theta - theta_hat|^2 / k0
//! ```
//!
//! where `u_k` runs over a grid of quantile levels that always contains the
//! target level `1 - alpha_n`, `q0` is the generalized inverse of the
//! empirical calibration-score CDF and `q1` inverts the transductive mixture
//! over unlabeled target covariates. The first term is the squared
//! 2-Wasserstein distance between the two distributions restricted to the
//! grid. Its gradient uses the implicit-function identity
//! `dq1/dtheta = -(dF/dtheta) / f` evaluated at `q1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::calib::{empirical_cdf, AlphaLevels, Mixture, StepwiseCdf};
use crate::linalg::least_squares;
use crate::math::sqrt;
use crate::predictors::{accumulate_cdf_grad, CondCdfParams};
use crate::{Error, Result};

/// Quantile tolerance used inside the optimizer; tighter than the default
/// so finite differences of the objective stay meaningful.
const INNER_TOL: f64 = 1e-13;

/// Mixture densities below this abort the gradient.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentConfig {
    pub lambda: f64,
    /// Number of equispaced levels; the target level is added on top.
    pub grid_size: usize,
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Tolerance on `|F(q) - u|` for the reported quantile.
    pub bisect_tol: f64,
    /// Factor applied to the step after an accepted iteration (1 = fixed).
    pub step_growth: f64,
    pub optimizer: Optimizer,
}

/// Descent scheme used by [`align_problem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Gradient descent with backtracking halving; uses `step_size` and
    /// `step_growth`.
    GradientDescent,
    /// Levenberg-Marquardt on the residual form of the objective.
    #[default]
    LevenbergMarquardt,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            lambda: 0.0,
            grid_size: 21,
            step_size: 0.05,
            max_iters: 2000,
            grad_tol: 1e-7,
            bisect_tol: 1e-10,
            step_growth: 1.5,
            optimizer: Optimizer::default(),
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig("grid_size must be at least 2".into()));
        }
        if !(self.step_size > 0.0 && self.grad_tol > 0.0 && self.bisect_tol > 0.0) {
            return Err(Error::InvalidConfig("step_size, grad_tol and bisect_tol must be positive".into()));
        }
        if self.max_iters == 0 || !(self.step_growth >= 1.0) {
            return Err(Error::InvalidConfig("max_iters must be positive and step_growth >= 1".into()));
        }
        Ok(())
    }
}

/// Quantile levels for the alignment: the `K` cell midpoints
/// `(i - 1/2) / K`, plus `1 - alpha_n` (merged if it coincides with one).
pub fn level_grid(alpha_n: f64, k: usize) -> Result<Vec<f64>> {
    if !(alpha_n > 0.0 && alpha_n < 1.0) {
        return Err(Error::InvalidAlpha(alpha_n));
    }
    if k < 2 {
        return Err(Error::InvalidConfig("grid size must be at least 2".into()));
    }
    let target = 1.0 - alpha_n;
    let mut levels: Vec<f64> = (1..=k)
        .map(|i| (i as f64 - 0.5) / k as f64)
        .filter(|u| (u - target).abs() > 1e-12)
        .collect();
    levels.push(target);
    levels.sort_by(f64::total_cmp);
    Ok(levels)
}

/// A fixed alignment instance: target quantiles on a level grid, the
/// unlabeled covariates, the source estimate and the penalty weight.
#[derive(Debug, Clone)]
pub struct AlignProblem<'a> {
    levels: Vec<f64>,
    q0: Vec<f64>,
    target_index: usize,
    unlabeled: &'a [Vec<f64>],
    theta_hat: CondCdfParams,
    anchor: Vec<f64>,
    lambda: f64,
}

/// One evaluation of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub grid_term: f64,
    pub quantiles: Vec<f64>,
}

impl<'a> AlignProblem<'a> {
    /// Builds the problem from explicit grid levels and target quantiles.
    pub fn new(
        theta_hat: &CondCdfParams,
        levels: Vec<f64>,
        q0: Vec<f64>,
        unlabeled: &'a [Vec<f64>],
        lambda: f64,
    ) -> Result<Self> {
        if levels.is_empty() || levels.len() != q0.len() {
            return Err(Error::DimensionMismatch {
                expected: levels.len(),
                got: q0.len(),
            });
        }
        if unlabeled.is_empty() {
            return Err(Error::EmptyInput("unlabeled covariates"));
        }
        if !theta_hat.is_finite() {
            return Err(Error::NonFinite {
                stage: "alignment start",
                iteration: 0,
            });
        }
        Ok(AlignProblem {
            target_index: levels.len() - 1,
            levels,
            q0,
            unlabeled,
            anchor: theta_hat.to_flat(),
            theta_hat: theta_hat.clone(),
            lambda,
        })
    }

    /// Standard construction: grid from [`level_grid`], target quantiles
    /// from the empirical CDF of the calibration scores.
    pub fn from_scores(
        theta_hat: &CondCdfParams,
        scores: &[f64],
        unlabeled: &'a [Vec<f64>],
        levels: AlphaLevels,
        config: &AlignmentConfig,
    ) -> Result<Self> {
        let f0 = empirical_cdf(scores)?;
        Self::from_cdf(theta_hat, &f0, unlabeled, levels, config)
    }

    pub fn from_cdf(
        theta_hat: &CondCdfParams,
        f0: &StepwiseCdf,
        unlabeled: &'a [Vec<f64>],
        levels: AlphaLevels,
        config: &AlignmentConfig,
    ) -> Result<Self> {
        let grid = level_grid(levels.alpha_n, config.grid_size)?;
        let q0: Vec<f64> = grid.iter().map(|&u| f0.quantile(u)).collect();
        let target = levels.target_level();
        let mut p = Self::new(theta_hat, grid, q0, unlabeled, config.lambda)?;
        p.target_index = p.levels.iter().position(|&u| u == target).expect("grid contains target level");
        Ok(p)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn target_quantiles(&self) -> &[f64] {
        &self.q0
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.dim()
    }

    pub fn k0(&self) -> usize {
        self.theta_hat.k0()
    }

    pub fn theta_hat(&self) -> &CondCdfParams {
        &self.theta_hat
    }

    fn penalty(&self, flat: &[f64]) -> f64 {
        let sq: f64 = flat.iter().zip(&self.anchor).map(|(a, b)| (a - b) * (a - b)).sum();
        self.lambda * sq / self.k0() as f64
    }

    fn mixture_quantiles(&self, mix: &Mixture<'_>, warm: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.levels.len());
        for (k, &u) in self.levels.iter().enumerate() {
            // warm start from the previous iterate, else from the previous level
            let start = warm.map(|w| w[k]).or_else(|| out.last().copied());
            out.push(mix.quantile(u, INNER_TOL, start)?);
        }
        Ok(out)
    }

    /// Objective value at flat parameters.
    pub fn evaluate(&self, flat: &[f64], warm: Option<&[f64]>) -> Result<Evaluation> {
        let theta = CondCdfParams::from_flat(self.dim(), flat)?;
        let mix = Mixture::new(&theta, self.unlabeled)?;
        let quantiles = self.mixture_quantiles(&mix, warm)?;
        let grid_term = quantiles
            .iter()
            .zip(&self.q0)
            .map(|(q1, q0)| (q1 - q0) * (q1 - q0))
            .sum::<f64>()
            / self.levels.len() as f64;
        Ok(Evaluation {
            objective: grid_term + self.penalty(flat),
            grid_term,
            quantiles,
        })
    }

    /// Rows `d q1(u_k) / d theta` for every grid level, by the implicit
    /// identity `-(dF/dtheta) / f` at `q1`. Rows whose residual is exactly
    /// zero are left at zero when `skip_exact` is set.
    fn quantile_jacobian(&self, flat: &[f64], quantiles: &[f64], skip_exact: bool) -> Result<Vec<f64>> {
        let theta = CondCdfParams::from_flat(self.dim(), flat)?;
        let mix = Mixture::new(&theta, self.unlabeled)?;
        let k0 = self.k0();
        let m = self.unlabeled.len() as f64;
        let mut jac = vec![0.0; quantiles.len() * k0];
        for (k, (&q1, &q0)) in quantiles.iter().zip(&self.q0).enumerate() {
            if skip_exact && q1 == q0 {
                continue;
            }
            let dens = mix.density(q1);
            if !(dens >= DENSITY_FLOOR) {
                return Err(Error::DegenerateDensity {
                    level: self.levels[k],
                    density: dens,
                });
            }
            let row = &mut jac[k * k0..(k + 1) * k0];
            for (ls, x) in mix.components().iter().zip(mix.covariates()) {
                accumulate_cdf_grad(*ls, q1, x, 1.0 / m, row);
            }
            row.iter_mut().for_each(|v| *v /= -dens);
        }
        Ok(jac)
    }

    /// Gradient at flat parameters whose quantiles were computed by
    /// [`AlignProblem::evaluate`].
    pub fn gradient(&self, flat: &[f64], quantiles: &[f64]) -> Result<Vec<f64>> {
        let jac = self.quantile_jacobian(flat, quantiles, true)?;
        Ok(self.gradient_from_jacobian(flat, quantiles, &jac))
    }

    fn gradient_from_jacobian(&self, flat: &[f64], quantiles: &[f64], jac: &[f64]) -> Vec<f64> {
        let k0 = self.k0();
        let grid_len = self.levels.len() as f64;
        let mut grad: Vec<f64> = flat
            .iter()
            .zip(&self.anchor)
            .map(|(a, b)| 2.0 * self.lambda * (a - b) / k0 as f64)
            .collect();
        for (k, (&q1, &q0)) in quantiles.iter().zip(&self.q0).enumerate() {
            let coef = 2.0 * (q1 - q0) / grid_len;
            for (g, d) in grad.iter_mut().zip(&jac[k * k0..(k + 1) * k0]) {
                *g += coef * d;
            }
        }
        grad
    }
}

/// Result of [`align`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlignOutcome {
    pub theta: CondCdfParams,
    pub objective: f64,
    pub grid_term: f64,
    /// Mixture quantiles at the grid levels for the returned parameters.
    pub quantiles: Vec<f64>,
    pub iters: usize,
    /// Gradient norm fell below `grad_tol`, or no descent step exists at
    /// machine precision.
    pub converged: bool,
    /// Objective at every accepted iterate, starting with the initial one.
    pub trace: Vec<f64>,
}

/// Minimizes [`AlignProblem`] from `start`.
///
/// Gradient descent halves a trial step that does not decrease the
/// objective (or leaves the finite domain) and grows the step by
/// `config.step_growth` after each accepted one. Levenberg-Marquardt treats
/// the objective as a sum of squared residuals (grid misfits and penalty
/// terms), solves the damped Gauss-Newton system by QR and adapts the
/// damping after each trial. Both only accept trials that do not increase
/// the objective.
pub fn align_problem(problem: &AlignProblem<'_>, start: &CondCdfParams, config: &AlignmentConfig) -> Result<AlignOutcome> {
    config.validate()?;
    match config.optimizer {
        Optimizer::GradientDescent => gradient_descent(problem, start, config),
        Optimizer::LevenbergMarquardt => levenberg_marquardt(problem, start, config),
    }
}

fn gradient_descent(problem: &AlignProblem<'_>, start: &CondCdfParams, config: &AlignmentConfig) -> Result<AlignOutcome> {
    let mut flat = start.to_flat();
    let mut eval = problem.evaluate(&flat, None)?;
    let mut trace = vec![eval.objective];
    let mut step = config.step_size;
    let mut iters = 0;
    let mut converged = false;
    let mut trial = vec![0.0; flat.len()];
    while iters < config.max_iters {
        let grad = problem.gradient(&flat, &eval.quantiles)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                stage: "alignment gradient",
                iteration: iters,
            });
        }
        let gnorm = sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if gnorm <= config.grad_tol {
            converged = true;
            break;
        }
        iters += 1;
        let mut accepted = None;
        for _ in 0..80 {
            for ((t, f), g) in trial.iter_mut().zip(&flat).zip(&grad) {
                *t = f - step * g;
            }
            if let Ok(cand) = problem.evaluate(&trial, Some(&eval.quantiles)) {
                if cand.objective.is_finite() && cand.objective <= eval.objective {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(cand) => {
                let no_progress = trial == flat;
                flat.copy_from_slice(&trial);
                eval = cand;
                trace.push(eval.objective);
                step *= config.step_growth;
                if no_progress {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    Ok(AlignOutcome {
        theta: CondCdfParams::from_flat(problem.dim(), &flat)?,
        objective: eval.objective,
        grid_term: eval.grid_term,
        quantiles: eval.quantiles,
        iters,
        converged,
        trace,
    })
}

fn levenberg_marquardt(problem: &AlignProblem<'_>, start: &CondCdfParams, config: &AlignmentConfig) -> Result<AlignOutcome> {
    let k0 = problem.k0();
    let levels = problem.levels.len();
    let w_grid = 1.0 / sqrt(levels as f64);
    let w_pen = sqrt(problem.lambda / k0 as f64);
    let mut flat = start.to_flat();
    let mut eval = problem.evaluate(&flat, None)?;
    let mut trace = vec![eval.objective];
    let mut damping = 1e-3;
    let mut iters = 0;
    let mut converged = false;
    let rows = levels + 2 * k0;
    let mut a = vec![0.0; rows * k0];
    let mut rhs = vec![0.0; rows];
    let mut trial = vec![0.0; k0];
    while iters < config.max_iters {
        let jac = problem.quantile_jacobian(&flat, &eval.quantiles, false)?;
        let grad = problem.gradient_from_jacobian(&flat, &eval.quantiles, &jac);
        if grad.iter().chain(&jac).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                stage: "alignment gradient",
                iteration: iters,
            });
        }
        let gnorm = sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if gnorm <= config.grad_tol || eval.objective == 0.0 {
            converged = true;
            break;
        }
        // column scales for the Marquardt damping term
        let mut scale = vec![0.0; k0];
        for k in 0..levels {
            for (j, s) in scale.iter_mut().enumerate() {
                let v = w_grid * jac[k * k0 + j];
                *s += v * v;
            }
        }
        let max_scale = scale.iter().fold(0.0f64, |acc, v| acc.max(*v));
        for s in scale.iter_mut() {
            *s = sqrt(*s + w_pen * w_pen + 1e-12 * max_scale.max(1e-300));
        }
        iters += 1;
        let mut accepted = None;
        for _ in 0..60 {
            a.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..levels {
                for j in 0..k0 {
                    a[k * k0 + j] = w_grid * jac[k * k0 + j];
                }
                rhs[k] = -w_grid * (eval.quantiles[k] - problem.q0[k]);
            }
            let damp = sqrt(damping);
            for j in 0..k0 {
                a[(levels + j) * k0 + j] = w_pen;
                rhs[levels + j] = -w_pen * (flat[j] - problem.anchor[j]);
                a[(levels + k0 + j) * k0 + j] = damp * scale[j];
                rhs[levels + k0 + j] = 0.0;
            }
            let delta = least_squares(&a, rows, k0, &rhs);
            for ((t, f), d) in trial.iter_mut().zip(&flat).zip(&delta) {
                *t = f + d;
            }
            if let Ok(cand) = problem.evaluate(&trial, Some(&eval.quantiles)) {
                if cand.objective.is_finite() && cand.objective <= eval.objective {
                    accepted = Some(cand);
                    break;
                }
            }
            damping *= 4.0;
            if damping > 1e16 {
                break;
            }
        }
        match accepted {
            Some(cand) => {
                let gain = eval.objective - cand.objective;
                let no_progress = trial == flat || gain <= 1e-15 * eval.objective;
                flat.copy_from_slice(&trial);
                eval = cand;
                trace.push(eval.objective);
                damping = (damping / 3.0).max(1e-12);
                if no_progress {
                    converged = true;
                    break;
                }
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    Ok(AlignOutcome {
        theta: CondCdfParams::from_flat(problem.dim(), &flat)?,
        objective: eval.objective,
        grid_term: eval.grid_term,
        quantiles: eval.quantiles,
        iters,
        converged,
        trace,
    })
}

/// Aligns `theta_hat` to the calibration scores, starting from `theta_hat`.
pub fn align(
    theta_hat: &CondCdfParams,
    lambda: f64,
    scores: &[f64],
    unlabeled: &[Vec<f64>],
    levels: AlphaLevels,
    config: &AlignmentConfig,
) -> Result<AlignOutcome> {
    let config = AlignmentConfig {
        lambda,
        ..config.clone()
    };
    let problem = AlignProblem::from_scores(theta_hat, scores, unlabeled, levels, &config)?;
    align_problem(&problem, theta_hat, &config)
}

/// The aligned threshold: `1 - alpha_n` quantile of the mixture under
/// `theta`, or `+inf` when `alpha_n <= 0`.
pub fn stcp_quantile(theta: &CondCdfParams, levels: AlphaLevels, unlabeled: &[Vec<f64>], tol: f64) -> Result<f64> {
    if levels.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Mixture::new(theta, unlabeled)?.quantile(levels.target_level(), tol, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelectionConfig {
    /// Strictly ascending, contains 0.
    pub lambda_grid: Vec<f64>,
    pub alpha_tol: f64,
    /// Slack on the band edges, absorbing optimizer round-off.
    pub band_tol: f64,
    /// Start each lambda from the previous (smaller) lambda's solution
    /// instead of from `theta_hat`.
    pub warm_start: bool,
}

impl Default for LambdaSelectionConfig {
    fn default() -> Self {
        LambdaSelectionConfig {
            lambda_grid: vec![0.0, 1.0, 10.0, 100.0, 1000.0],
            alpha_tol: 0.02,
            band_tol: 1e-6,
            warm_start: false,
        }
    }
}

impl LambdaSelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_grid.contains(&0.0) {
            return Err(Error::InvalidConfig("lambda grid must contain 0".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) || self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidConfig("lambda grid must be strictly ascending, finite and >= 0".into()));
        }
        if !(self.alpha_tol > 0.0) || !(self.band_tol >= 0.0) {
            return Err(Error::InvalidConfig("alpha_tol must be positive and band_tol nonnegative".into()));
        }
        Ok(())
    }
}

/// One row of the per-lambda table.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow {
    pub lambda: f64,
    pub q_st: f64,
    pub feasible: bool,
    pub grid_residual: f64,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub lambda_hat: f64,
    pub q_sel: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    /// Rows in ascending lambda order; only evaluated lambdas are present.
    pub table: Vec<LambdaRow>,
}

/// Band `[q_L, q_U]` of empirical quantiles at `1 - alpha -+ alpha_tol`.
///
/// When `1 - alpha + alpha_tol >= 1` the upper edge is the largest score.
pub fn feasibility_band(f0: &StepwiseCdf, alpha: f64, alpha_tol: f64) -> (f64, f64) {
    let lower = f0.quantile(1.0 - alpha - alpha_tol);
    let upper_level = 1.0 - alpha + alpha_tol;
    let upper = if upper_level >= 1.0 {
        *f0.values().last().expect("nonempty CDF")
    } else {
        f0.quantile(upper_level)
    };
    (lower, upper)
}

fn in_band(q: f64, band: (f64, f64), tol: f64) -> bool {
    q >= band.0 - tol * (1.0 + band.0.abs()) && q <= band.1 + tol * (1.0 + band.1.abs())
}

fn solve_row(
    theta_hat: &CondCdfParams,
    start: &CondCdfParams,
    f0: &StepwiseCdf,
    unlabeled: &[Vec<f64>],
    levels: AlphaLevels,
    config: &AlignmentConfig,
    lambda: f64,
    band: (f64, f64),
    band_tol: f64,
) -> Result<(LambdaRow, CondCdfParams)> {
    let cfg = AlignmentConfig {
        lambda,
        ..config.clone()
    };
    let problem = AlignProblem::from_cdf(theta_hat, f0, unlabeled, levels, &cfg)?;
    let out = align_problem(&problem, start, &cfg)?;
    let q_st = stcp_quantile(&out.theta, levels, unlabeled, config.bisect_tol)?;
    Ok((
        LambdaRow {
            lambda,
            q_st,
            feasible: in_band(q_st, band, band_tol),
            grid_residual: out.grid_term,
            iters: out.iters,
            converged: out.converged,
        },
        out.theta,
    ))
}

fn infinite_selection(selection: &LambdaSelectionConfig, band: (f64, f64)) -> LambdaSelection {
    LambdaSelection {
        lambda_hat: 0.0,
        q_sel: f64::INFINITY,
        q_lower: band.0,
        q_upper: band.1,
        table: selection
            .lambda_grid
            .iter()
            .map(|&lambda| LambdaRow {
                lambda,
                q_st: f64::INFINITY,
                feasible: lambda == 0.0,
                grid_residual: 0.0,
                iters: 0,
                converged: true,
            })
            .collect(),
    }
}

/// Band and per-lambda rows for every lambda in the grid, ascending.
///
/// When `alpha_n <= 0` every threshold is `+inf` and no alignment is run.
pub fn lambda_table(
    theta_hat: &CondCdfParams,
    selection: &LambdaSelectionConfig,
    levels: AlphaLevels,
    scores: &[f64],
    unlabeled: &[Vec<f64>],
    config: &AlignmentConfig,
) -> Result<((f64, f64), Vec<LambdaRow>)> {
    selection.validate()?;
    let f0 = empirical_cdf(scores)?;
    let band = feasibility_band(&f0, levels.alpha, selection.alpha_tol);
    if levels.is_infinite() {
        return Ok((band, infinite_selection(selection, band).table));
    }
    let mut table = Vec::with_capacity(selection.lambda_grid.len());
    let mut start = theta_hat.clone();
    for &lambda in &selection.lambda_grid {
        let (row, theta) = solve_row(theta_hat, &start, &f0, unlabeled, levels, config, lambda, band, selection.band_tol)?;
        if selection.warm_start {
            start = theta;
        }
        table.push(row);
    }
    Ok((band, table))
}

/// Picks the largest feasible lambda from a table in ascending order.
pub fn choose_lambda(band: (f64, f64), table: Vec<LambdaRow>) -> Result<LambdaSelection> {
    let chosen = table.iter().rev().find(|r| r.feasible).ok_or(Error::InfeasibleAll)?;
    Ok(LambdaSelection {
        lambda_hat: chosen.lambda,
        q_sel: chosen.q_st,
        q_lower: band.0,
        q_upper: band.1,
        table,
    })
}

/// Evaluates every lambda in the grid and selects the largest one whose
/// aligned quantile lies in the feasibility band.
///
/// When `alpha_n <= 0` every threshold is `+inf`; lambda = 0 is reported.
pub fn select_lambda(
    theta_hat: &CondCdfParams,
    selection: &LambdaSelectionConfig,
    levels: AlphaLevels,
    scores: &[f64],
    unlabeled: &[Vec<f64>],
    config: &AlignmentConfig,
) -> Result<LambdaSelection> {
    let (band, table) = lambda_table(theta_hat, selection, levels, scores, unlabeled, config)?;
    choose_lambda(band, table)
}

/// Same choice as [`select_lambda`] with cold starts, but walks the grid
/// from the largest lambda down and stops at the first feasible one.
pub fn select_lambda_descending(
    theta_hat: &CondCdfParams,
    selection: &LambdaSelectionConfig,
    levels: AlphaLevels,
    scores: &[f64],
    unlabeled: &[Vec<f64>],
    config: &AlignmentConfig,
) -> Result<LambdaSelection> {
    selection.validate()?;
    let f0 = empirical_cdf(scores)?;
    let band = feasibility_band(&f0, levels.alpha, selection.alpha_tol);
    if levels.is_infinite() {
        return Ok(infinite_selection(selection, band));
    }
    let mut table = Vec::new();
    for &lambda in selection.lambda_grid.iter().rev() {
        let (row, _) = solve_row(theta_hat, theta_hat, &f0, unlabeled, levels, config, lambda, band, selection.band_tol)?;
        let feasible = row.feasible;
        table.insert(0, row);
        if feasible {
            let chosen = &table[0];
            return Ok(LambdaSelection {
                lambda_hat: chosen.lambda,
                q_sel: chosen.q_st,
                q_lower: band.0,
                q_upper: band.1,
                table,
            });
        }
    }
    Err(Error::InfeasibleAll)
}
