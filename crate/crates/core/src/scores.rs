//! Non-conformity scores and the prediction sets they induce.
//!
//! Sets are closed sublevel sets `{y : S(x, y) <= q}`; a threshold of
//! `+inf` contains every label.

use crate::math::normal_quantile;
use crate::predictors::{cond_cdf_eval, CondCdfParams, MeanPredictor, QuantilePredictor};
use crate::{Error, Result};

/// GLCP thresholds are clamped to `[GLCP_EPS, 1 - GLCP_EPS]` before inversion.
pub const GLCP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    /// `|y - mu(x)|`.
    Residual { mean: MeanPredictor },
    /// `F_V(|y - mu(x)| | x)` with a conditional model for the residual.
    Glcp {
        mean: MeanPredictor,
        v_cdf: CondCdfParams,
    },
    /// `max(q_lo(x) - y, y - q_hi(x))`.
    Cqr {
        lo: QuantilePredictor,
        hi: QuantilePredictor,
    },
}

impl ScoreModel {
    pub fn cqr(lo: QuantilePredictor, hi: QuantilePredictor) -> Result<Self> {
        if lo.level >= hi.level {
            return Err(Error::InvalidConfig(alloc::format!(
                "CQR needs lo.level < hi.level, got {} and {}",
                lo.level,
                hi.level
            )));
        }
        Ok(ScoreModel::Cqr { lo, hi })
    }

    pub fn score(&self, x: &[f64], y: f64) -> f64 {
        match self {
            ScoreModel::Residual { mean } => (y - mean.predict(x)).abs(),
            ScoreModel::Glcp { mean, v_cdf } => cond_cdf_eval(v_cdf, (y - mean.predict(x)).abs(), x),
            ScoreModel::Cqr { lo, hi } => (lo.predict(x) - y).max(y - hi.predict(x)),
        }
    }

    pub fn set_contains(&self, threshold: f64, x: &[f64], y: f64) -> bool {
        threshold == f64::INFINITY || self.score(x, y) <= threshold
    }

    /// Lebesgue measure of `{y : S(x, y) <= threshold}`.
    pub fn set_size(&self, threshold: f64, x: &[f64]) -> f64 {
        match self {
            ScoreModel::Residual { .. } => {
                if threshold == f64::INFINITY {
                    f64::INFINITY
                } else {
                    2.0 * threshold.max(0.0)
                }
            }
            ScoreModel::Glcp { v_cdf, .. } => {
                let z = glcp_z(threshold);
                if z == f64::INFINITY {
                    return f64::INFINITY;
                }
                if z == f64::NEG_INFINITY {
                    return 0.0;
                }
                let ls = v_cdf.loc_scale(x);
                2.0 * (ls.mu + ls.sigma * z).max(0.0)
            }
            ScoreModel::Cqr { lo, hi } => {
                if threshold == f64::INFINITY {
                    f64::INFINITY
                } else {
                    (hi.predict(x) - lo.predict(x) + 2.0 * threshold).max(0.0)
                }
            }
        }
    }

    /// Mean set size over covariates, with `Phi^{-1}` evaluated once for GLCP.
    pub fn mean_set_size<'a, I>(&self, threshold: f64, xs: I) -> f64
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut total = 0.0;
        let mut count = 0usize;
        match self {
            ScoreModel::Glcp { v_cdf, .. } => {
                let z = glcp_z(threshold);
                for x in xs {
                    count += 1;
                    total += if z == f64::INFINITY {
                        f64::INFINITY
                    } else if z == f64::NEG_INFINITY {
                        0.0
                    } else {
                        let ls = v_cdf.loc_scale(x);
                        2.0 * (ls.mu + ls.sigma * z).max(0.0)
                    };
                }
            }
            _ => {
                for x in xs {
                    count += 1;
                    total += self.set_size(threshold, x);
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

// Standard-normal quantile of a clamped GLCP threshold; +inf when the set is
// the whole line, -inf when it is empty.
fn glcp_z(threshold: f64) -> f64 {
    if threshold >= 1.0 {
        f64::INFINITY
    } else if threshold <= 0.0 {
        f64::NEG_INFINITY
    } else {
        normal_quantile(threshold.clamp(GLCP_EPS, 1.0 - GLCP_EPS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn mean() -> MeanPredictor {
        MeanPredictor {
            weights: vec![1.0, -0.5],
            intercept: 0.25,
        }
    }

    fn glcp() -> ScoreModel {
        ScoreModel::Glcp {
            mean: mean(),
            v_cdf: CondCdfParams {
                loc_weights: vec![0.2, 0.1],
                loc_intercept: 1.0,
                scale_weights: vec![0.1, 0.0],
                scale_intercept: 0.3,
            },
        }
    }

    fn cqr() -> ScoreModel {
        let lo = QuantilePredictor {
            level: 0.05,
            weights: vec![0.0, 0.0],
            intercept: 1.0,
        };
        let hi = QuantilePredictor {
            level: 0.95,
            weights: vec![0.0, 0.0],
            intercept: 3.0,
        };
        ScoreModel::cqr(lo, hi).unwrap()
    }

    #[test]
    fn residual_examples() {
        let m = ScoreModel::Residual { mean: mean() };
        let x = [0.4, 1.0];
        let mu = mean().predict(&x);
        assert_eq!(m.score(&x, mu), 0.0);
        assert!(m.set_contains(f64::INFINITY, &x, 1e9));
        assert!(!m.set_contains(1.0, &x, mu + 2.0));
        assert!(m.set_contains(1.5, &x, mu + 1.5));
        assert!(m.set_contains(1.5, &x, mu - 1.5));
        assert_eq!(m.set_size(1.0, &x), 2.0);
        assert_eq!(m.set_size(f64::INFINITY, &x), f64::INFINITY);
    }

    #[test]
    fn glcp_examples() {
        let m = glcp();
        let x = [0.4, 1.0];
        let ScoreModel::Glcp { v_cdf, mean } = &m else { unreachable!() };
        let med = v_cdf.loc_scale(&x).mu;
        assert!((m.score(&x, mean.predict(&x) + med) - 0.5).abs() < 1e-15);
        assert!((m.set_size(0.5, &x) - 2.0 * med).abs() < 1e-12);
        assert_eq!(m.set_size(1.0, &x), f64::INFINITY);
        assert_eq!(m.set_size(0.0, &x), 0.0);
        assert!(m.set_contains(1.0, &x, 1e12));
    }

    #[test]
    fn cqr_examples() {
        let m = cqr();
        let x = [0.0, 0.0];
        assert_eq!(m.score(&x, 2.0), -1.0);
        assert_eq!(m.set_size(-2.0, &x), 0.0);
        assert_eq!(m.set_size(0.5, &x), 3.0);
        assert!(ScoreModel::cqr(
            QuantilePredictor { level: 0.9, weights: vec![], intercept: 0.0 },
            QuantilePredictor { level: 0.1, weights: vec![], intercept: 0.0 }
        )
        .is_err());
    }

    #[test]
    fn cqr_empty_set_matches_numeric_measure() {
        let m = cqr();
        let x = [0.0, 0.0];
        let grid: Vec<f64> = (0..100_000).map(|i| -5.0 + 10.0 * i as f64 / 100_000.0).collect();
        let count = grid.iter().filter(|&&y| m.set_contains(-2.0, &x, y)).count();
        assert_eq!(count, 0);
    }

    #[test]
    fn sizes_match_numeric_measure() {
        let h = 1e-4;
        let grid: Vec<f64> = (0..200_000).map(|i| -10.0 + h * (i as f64 + 0.5)).collect();
        let x = [0.4, 1.0];
        for (m, qs) in [
            (ScoreModel::Residual { mean: mean() }, vec![0.0, 0.3, 1.7, 4.0]),
            (glcp(), vec![0.05, 0.5, 0.9, 0.99]),
            (cqr(), vec![-2.0, -0.5, 0.0, 1.3]),
        ] {
            for q in qs {
                let measured = grid.iter().filter(|&&y| m.set_contains(q, &x, y)).count() as f64 * h;
                assert!((measured - m.set_size(q, &x)).abs() <= 2.0 * h, "{m:?} q={q}");
            }
        }
    }

    use crate::data::{derive_stream, standard_normal, SeedSpec, Stream};

    // a model of each kind with bounded parameters, so sets fit in [-30, 30]
    fn random_model(s: &mut Stream, kind: usize) -> ScoreModel {
        let mean = MeanPredictor {
            weights: vec![standard_normal(s), standard_normal(s)],
            intercept: standard_normal(s),
        };
        match kind {
            0 => ScoreModel::Residual { mean },
            1 => ScoreModel::Glcp {
                mean,
                v_cdf: CondCdfParams {
                    loc_weights: vec![0.3 * standard_normal(s), 0.3 * standard_normal(s)],
                    loc_intercept: 1.0 + 0.3 * standard_normal(s),
                    scale_weights: vec![0.2 * standard_normal(s), 0.2 * standard_normal(s)],
                    scale_intercept: 0.3 * standard_normal(s),
                },
            },
            _ => {
                let c = standard_normal(s);
                let lo = QuantilePredictor {
                    level: 0.05,
                    weights: vec![0.5 * standard_normal(s), 0.0],
                    intercept: c - 1.0,
                };
                let hi = QuantilePredictor {
                    level: 0.95,
                    weights: vec![0.0, 0.5 * standard_normal(s)],
                    intercept: c + 1.0,
                };
                ScoreModel::cqr(lo, hi).unwrap()
            }
        }
    }

    fn random_threshold(s: &mut Stream, m: &ScoreModel) -> f64 {
        match m {
            ScoreModel::Residual { .. } => 5.0 * s.uniform(),
            ScoreModel::Glcp { .. } => 0.01 + 0.98 * s.uniform(),
            ScoreModel::Cqr { .. } => -2.0 + 5.0 * s.uniform(),
        }
    }

    #[test]
    fn random_sizes_match_numeric_measure() {
        let mut s = derive_stream(SeedSpec::new(31, 0));
        let h = 2e-3;
        let grid: Vec<f64> = (0..30_000).map(|i| -30.0 + h * (i as f64 + 0.5)).collect();
        for i in 0..1000 {
            let m = random_model(&mut s, i % 3);
            let x = [s.uniform() * 2.0 - 1.0, s.uniform() * 2.0 - 1.0];
            let q = random_threshold(&mut s, &m);
            let measured = grid.iter().filter(|&&y| m.set_contains(q, &x, y)).count() as f64 * h;
            let size = m.set_size(q, &x);
            assert!((measured - size).abs() <= 2.0 * h, "{m:?} x={x:?} q={q}: {measured} vs {size}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sets_grow_with_the_threshold(seed in any::<u64>(), kind in 0usize..3, y in -20.0f64..20.0) {
                let mut s = derive_stream(SeedSpec::new(seed, 0));
                let m = random_model(&mut s, kind);
                let x = [standard_normal(&mut s), standard_normal(&mut s)];
                let (a, b) = (random_threshold(&mut s, &m), random_threshold(&mut s, &m));
                let (q1, q2) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(m.set_size(q1, &x) <= m.set_size(q2, &x));
                prop_assert!(!m.set_contains(q1, &x, y) || m.set_contains(q2, &x, y));
                prop_assert!(m.set_contains(f64::INFINITY, &x, y));
            }

            #[test]
            fn membership_is_the_score_sublevel_set(seed in any::<u64>(), kind in 0usize..3, y in -20.0f64..20.0) {
                let mut s = derive_stream(SeedSpec::new(seed, 0));
                let m = random_model(&mut s, kind);
                let x = [standard_normal(&mut s), standard_normal(&mut s)];
                let q = random_threshold(&mut s, &m);
                prop_assert_eq!(m.set_contains(q, &x, y), m.score(&x, y) <= q);
                // the label's own score is always a large enough threshold
                prop_assert!(m.set_contains(m.score(&x, y), &x, y));
            }
        }
    }
}
