//! Source-trained models: a linear mean predictor, linear quantile
//! predictors for CQR, and the Gaussian location-scale conditional score
//! model `F(s | x; theta)`.
//!
//! The conditional model is
//!
//! ```text
//! mu(x)    = loc_weights . x + loc_intercept
//! sigma(x) = max(softplus(scale_weights . x + scale_intercept), SCALE_FLOOR)
//! F(s | x) = Phi((s - mu(x)) / sigma(x))
//! ```
//!
//! Parameters flatten as `[loc_weights, loc_intercept, scale_weights,
//! scale_intercept]`, so `k0 = 2 d + 2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::LabeledSample;
use crate::linalg::least_squares;
use crate::math::{dot, normal_cdf, normal_pdf, normal_quantile, sigmoid, softplus, softplus_inv, sqrt};
use crate::{Error, Result};

/// Lower bound on the conditional scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanPredictor {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl MeanPredictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePredictor {
    pub level: f64,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl QuantilePredictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }
}

fn dim_of(data: &[LabeledSample]) -> Result<usize> {
    let d = data.first().ok_or(Error::EmptyInput("training data"))?.x.len();
    if let Some(bad) = data.iter().find(|s| s.x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.x.len(),
        });
    }
    Ok(d)
}

fn linear_fit(data: &[LabeledSample], d: usize) -> (Vec<f64>, f64) {
    let cols = d + 1;
    let mut a = Vec::with_capacity(data.len() * cols);
    for s in data {
        a.extend_from_slice(&s.x);
        a.push(1.0);
    }
    let y: Vec<f64> = data.iter().map(|s| s.y).collect();
    let mut beta = least_squares(&a, data.len(), cols, &y);
    let intercept = beta.pop().unwrap();
    (beta, intercept)
}

/// Ordinary least squares with intercept.
///
/// Rank-deficient designs fall back to ridge with penalty `1e-8`.
pub fn fit_linear_mean(data: &[LabeledSample]) -> Result<MeanPredictor> {
    if data.len() < 2 {
        return Err(Error::DegenerateDesign("need at least two samples"));
    }
    let d = dim_of(data)?;
    let (weights, intercept) = linear_fit(data, d);
    Ok(MeanPredictor { weights, intercept })
}

/// Mean pinball loss of a linear quantile model.
pub fn pinball_loss(data: &[LabeledSample], level: f64, weights: &[f64], intercept: f64) -> f64 {
    data.iter()
        .map(|s| {
            let r = s.y - dot(weights, &s.x) - intercept;
            if r >= 0.0 {
                level * r
            } else {
                (level - 1.0) * r
            }
        })
        .sum::<f64>()
        / data.len() as f64
}

/// Generalized-inverse empirical quantile of unsorted values.
pub(crate) fn empirical_quantile(values: &mut [f64], level: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = crate::math::ceil_tol(level * n as f64).clamp(1.0, n as f64) as usize;
    values[k - 1]
}

const QUANTILE_ITERS: usize = 400;

/// Linear quantile regression by subgradient descent on the pinball loss.
///
/// Starts from the least-squares fit shifted by the empirical residual
/// quantile, keeps the best iterate, and finally re-solves the intercept
/// exactly for the chosen weights.
pub fn fit_linear_quantile(data: &[LabeledSample], level: f64) -> Result<QuantilePredictor> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    if data.len() < 2 {
        return Err(Error::DegenerateDesign("need at least two samples"));
    }
    let d = dim_of(data)?;
    let n = data.len() as f64;
    let (mut w, b0) = linear_fit(data, d);
    let mut resid: Vec<f64> = data.iter().map(|s| s.y - dot(&w, &s.x) - b0).collect();
    let mut b = b0 + empirical_quantile(&mut resid, level);

    let y_scale = {
        let mean = data.iter().map(|s| s.y).sum::<f64>() / n;
        sqrt(data.iter().map(|s| (s.y - mean) * (s.y - mean)).sum::<f64>() / n).max(1e-12)
    };

    let mut best = (pinball_loss(data, level, &w, b), w.clone(), b);
    let mut grad = vec![0.0; d + 1];
    for t in 0..QUANTILE_ITERS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for s in data {
            let r = s.y - dot(&w, &s.x) - b;
            // d/dpred of pinball: -(level - 1{r < 0}); zero residuals use 0
            let coef = if r > 0.0 {
                -level
            } else if r < 0.0 {
                1.0 - level
            } else {
                0.0
            };
            for (g, xj) in grad.iter_mut().zip(&s.x) {
                *g += coef * xj;
            }
            grad[d] += coef;
        }
        let gnorm = sqrt(grad.iter().map(|g| g * g).sum::<f64>()) / n;
        if gnorm == 0.0 {
            break;
        }
        let step = 0.1 * y_scale / sqrt(t as f64 + 1.0) / gnorm;
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= step * g / n;
        }
        b -= step * grad[d] / n;
        let loss = pinball_loss(data, level, &w, b);
        if loss < best.0 {
            best = (loss, w.clone(), b);
        }
    }
    let (_, w, _) = best;
    let mut resid: Vec<f64> = data.iter().map(|s| s.y - dot(&w, &s.x)).collect();
    let intercept = empirical_quantile(&mut resid, level);
    Ok(QuantilePredictor {
        level,
        weights: w,
        intercept,
    })
}

/// Parameters of the Gaussian location-scale conditional score model.
#[derive(Debug, Clone, PartialEq)]
pub struct CondCdfParams {
    pub loc_weights: Vec<f64>,
    pub loc_intercept: f64,
    pub scale_weights: Vec<f64>,
    pub scale_intercept: f64,
}

/// Location and scale of `F(. | x; theta)` at one covariate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocScale {
    pub mu: f64,
    pub sigma: f64,
    /// d sigma / d (scale_weights . x + scale_intercept); zero when floored.
    pub dsigma: f64,
}

impl CondCdfParams {
    /// Zero weights with the given location and scale.
    pub fn constant(dim: usize, loc: f64, scale: f64) -> Self {
        CondCdfParams {
            loc_weights: vec![0.0; dim],
            loc_intercept: loc,
            scale_weights: vec![0.0; dim],
            scale_intercept: softplus_inv(scale.max(SCALE_FLOOR)),
        }
    }

    pub fn dim(&self) -> usize {
        self.loc_weights.len()
    }

    pub fn k0(&self) -> usize {
        2 * self.dim() + 2
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.k0());
        v.extend_from_slice(&self.loc_weights);
        v.push(self.loc_intercept);
        v.extend_from_slice(&self.scale_weights);
        v.push(self.scale_intercept);
        v
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * dim + 2 {
            return Err(Error::DimensionMismatch {
                expected: 2 * dim + 2,
                got: flat.len(),
            });
        }
        Ok(CondCdfParams {
            loc_weights: flat[..dim].to_vec(),
            loc_intercept: flat[dim],
            scale_weights: flat[dim + 1..2 * dim + 1].to_vec(),
            scale_intercept: flat[2 * dim + 1],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.loc_intercept.is_finite()
            && self.scale_intercept.is_finite()
            && self.loc_weights.iter().chain(&self.scale_weights).all(|v| v.is_finite())
    }

    /// Shifts the location by `c` (adds to the location intercept).
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.loc_intercept += c;
        out
    }

    #[inline]
    pub fn loc_scale(&self, x: &[f64]) -> LocScale {
        let mu = dot(&self.loc_weights, x) + self.loc_intercept;
        let a = dot(&self.scale_weights, x) + self.scale_intercept;
        let sp = softplus(a);
        if sp > SCALE_FLOOR {
            LocScale {
                mu,
                sigma: sp,
                dsigma: sigmoid(a),
            }
        } else {
            LocScale {
                mu,
                sigma: SCALE_FLOOR,
                dsigma: 0.0,
            }
        }
    }

    pub fn density(&self, s: f64, x: &[f64]) -> f64 {
        let ls = self.loc_scale(x);
        normal_pdf((s - ls.mu) / ls.sigma) / ls.sigma
    }
}

/// `F(s | x; theta)`.
pub fn cond_cdf_eval(theta: &CondCdfParams, s: f64, x: &[f64]) -> f64 {
    let ls = theta.loc_scale(x);
    normal_cdf((s - ls.mu) / ls.sigma)
}

/// Analytic inverse `mu(x) + sigma(x) Phi^{-1}(u)`.
pub fn cond_cdf_quantile(theta: &CondCdfParams, u: f64, x: &[f64]) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidLevel(u));
    }
    let ls = theta.loc_scale(x);
    Ok(ls.mu + ls.sigma * normal_quantile(u))
}

/// Writes `dF(s | x; theta) / dtheta` (flat layout) into `out`, scaled by
/// `weight` and accumulated.
#[inline]
pub(crate) fn accumulate_cdf_grad(ls: LocScale, s: f64, x: &[f64], weight: f64, out: &mut [f64]) {
    let d = x.len();
    let z = (s - ls.mu) / ls.sigma;
    let phi = normal_pdf(z);
    let dloc = -phi / ls.sigma * weight;
    let dscale = -phi * z / ls.sigma * ls.dsigma * weight;
    for j in 0..d {
        out[j] += dloc * x[j];
        out[d + 1 + j] += dscale * x[j];
    }
    out[d] += dloc;
    out[2 * d + 1] += dscale;
}

/// Analytic gradient of `F(s | x; theta)` with respect to the flat parameters.
pub fn cond_cdf_grad(theta: &CondCdfParams, s: f64, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; theta.k0()];
    accumulate_cdf_grad(theta.loc_scale(x), s, x, 1.0, &mut out);
    out
}

/// Mean Gaussian negative log-likelihood (without the `log sqrt(2 pi)` term).
pub fn cond_nll(theta: &CondCdfParams, data: &[LabeledSample]) -> f64 {
    data.iter()
        .map(|p| {
            let ls = theta.loc_scale(&p.x);
            let z = (p.y - ls.mu) / ls.sigma;
            libm::log(ls.sigma) + 0.5 * z * z
        })
        .sum::<f64>()
        / data.len() as f64
}

fn cond_nll_grad(theta: &CondCdfParams, data: &[LabeledSample], grad: &mut [f64]) -> f64 {
    let d = theta.dim();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut nll = 0.0;
    for p in data {
        let ls = theta.loc_scale(&p.x);
        let z = (p.y - ls.mu) / ls.sigma;
        nll += libm::log(ls.sigma) + 0.5 * z * z;
        let dmu = -z / ls.sigma;
        let da = (1.0 - z * z) / ls.sigma * ls.dsigma;
        for j in 0..d {
            grad[j] += dmu * p.x[j];
            grad[d + 1 + j] += da * p.x[j];
        }
        grad[d] += dmu;
        grad[2 * d + 1] += da;
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    nll / n
}

/// Maximum-likelihood fit of the conditional score model by gradient descent.
///
/// `data[i].y` holds the score value. The returned parameters never have
/// a higher negative log-likelihood than the moment-matched homoscedastic
/// starting point.
pub fn fit_cond_cdf(data: &[LabeledSample], steps: usize, step_size: f64) -> Result<CondCdfParams> {
    if data.len() < 2 {
        return Err(Error::DegenerateDesign("need at least two samples"));
    }
    let d = dim_of(data)?;
    let n = data.len() as f64;
    let mean = data.iter().map(|s| s.y).sum::<f64>() / n;
    let sd = sqrt(data.iter().map(|s| (s.y - mean) * (s.y - mean)).sum::<f64>() / n);
    let moment = CondCdfParams::constant(d, mean, sd);

    let (w, b) = linear_fit(data, d);
    let rsd = sqrt(
        data.iter()
            .map(|s| {
                let r = s.y - dot(&w, &s.x) - b;
                r * r
            })
            .sum::<f64>()
            / n,
    );
    let mut regress = CondCdfParams::constant(d, b, rsd);
    regress.loc_weights = w;

    let mut theta = if cond_nll(&regress, data) < cond_nll(&moment, data) {
        regress
    } else {
        moment
    };

    let k0 = theta.k0();
    let mut flat = theta.to_flat();
    let mut grad = vec![0.0; k0];
    let mut nll = cond_nll_grad(&theta, data, &mut grad);
    let mut step = step_size;
    let mut trial = vec![0.0; k0];
    for it in 0..steps {
        let gnorm = sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if gnorm <= 1e-9 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, f), g) in trial.iter_mut().zip(&flat).zip(&grad) {
                *t = f - step * g;
            }
            let cand = CondCdfParams::from_flat(d, &trial)?;
            if !cand.is_finite() {
                return Err(Error::NonFinite {
                    stage: "conditional CDF fit",
                    iteration: it,
                });
            }
            let cand_nll = cond_nll(&cand, data);
            if cand_nll <= nll {
                let prev = nll;
                flat.copy_from_slice(&trial);
                theta = cand;
                nll = cond_nll_grad(&theta, data, &mut grad);
                accepted = prev - nll > 1e-13 * (1.0 + prev.abs());
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(theta)
}
