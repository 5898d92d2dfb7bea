//! Sample statistics and log-log rate fits.

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return Self {
                mean: 0.0,
                std_err: 0.0,
                count,
            };
        }
        let n = count as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std_err = if count > 1 {
            let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_err, count }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std_err: self.std_err * factor.abs(),
            count: self.count,
        }
    }
}

pub fn sample_variance(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n;
    samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Least-squares slope of `ln y` against `ln x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope (infinite with
    /// only two points).
    pub half_width: f64,
    pub levels_used: usize,
    /// Levels dropped because the metric was not strictly positive.
    pub excluded: usize,
}

impl RateFit {
    pub fn interval(&self) -> (f64, f64) {
        (self.slope - self.half_width, self.slope + self.half_width)
    }
}

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
    2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048,
    2.045, 2.042,
];

fn t_quantile(df: usize) -> f64 {
    match df {
        0 => f64::INFINITY,
        d if d <= 30 => T_975[d - 1],
        _ => 1.96,
    }
}

/// Log-log least-squares fit over the points with positive, finite `x` and
/// `y`. Needs at least two usable points.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            what: "rate fit values",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let points: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let excluded = xs.len() - points.len();
    let m = points.len();
    if m < 2 {
        return Err(Error::arg("values", "fewer than two positive levels remain"));
    }
    let mf = m as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / mf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / mf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("levels", "all levels coincide"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half_width = if m > 2 {
        let sse: f64 = points
            .iter()
            .map(|p| {
                let r = p.1 - intercept - slope * p.0;
                r * r
            })
            .sum();
        t_quantile(m - 2) * (sse / (mf - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(RateFit {
        slope,
        intercept,
        half_width,
        levels_used: m,
        excluded,
    })
}

/// Rate of a metric in the penalty level `n`. Needs at least four levels;
/// nonpositive metrics are excluded and counted.
pub fn fit_rate(ns: &[f64], values: &[f64]) -> Result<RateFit> {
    if ns.len() < 4 {
        return Err(Error::arg("ns", "rate fits need at least four levels"));
    }
    fit_loglog(ns, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn inverse_n_has_slope_minus_one() {
        let ns = [4.0, 8.0, 16.0, 32.0, 64.0];
        let v: Vec<f64> = ns.iter().map(|n| 1.0 / n).collect();
        let fit = fit_rate(&ns, &v).unwrap();
        assert_abs_diff_eq!(fit.slope, -1.0, epsilon = 1e-12);
        assert!(fit.half_width < 1e-6);
    }

    #[test]
    fn constant_has_slope_zero() {
        let ns = [4.0, 8.0, 16.0, 32.0];
        let fit = fit_rate(&ns, &[2.5; 4]).unwrap();
        assert_abs_diff_eq!(fit.slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zeros_are_excluded_and_counted() {
        let ns = [4.0, 8.0, 16.0, 32.0];
        let fit = fit_rate(&ns, &[0.25, 0.0, 0.0625, 0.03125]).unwrap();
        assert_eq!(fit.excluded, 1);
        assert_eq!(fit.levels_used, 3);
        assert!(fit_rate(&ns[..3], &[1.0, 1.0, 1.0]).is_err());
        assert!(fit_rate(&ns, &[0.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn estimate_of_known_samples() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert_abs_diff_eq!(e.std_err, (5.0f64 / 12.0).sqrt(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn power_laws_are_recovered(p in -3.0f64..3.0, c in 0.01f64..100.0) {
            let ns = [2.0, 5.0, 11.0, 40.0, 300.0];
            let v: Vec<f64> = ns.iter().map(|n: &f64| c * n.powf(p)).collect();
            let fit = fit_loglog(&ns, &v).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-9);
            prop_assert!((fit.intercept - c.ln()).abs() < 1e-8);
        }
    }
}
