//! Sufficient statistics and small estimation helpers shared by the
//! estimators and probes.

use serde::{Deserialize, Serialize};

/// Streaming mean and variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut acc = Self::new();
        xs.iter().for_each(|&x| acc.push(x));
        acc
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Self-normalized weighted mean sum(w x)/sum(w) with its delta-method
/// standard error.
pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ws.len());
    let sw: f64 = ws.iter().sum();
    let mean = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let n = xs.len() as f64;
    let ss: f64 = xs.iter().zip(ws).map(|(x, w)| (w * (x - mean)).powi(2)).sum();
    let se = if xs.len() < 2 {
        0.0
    } else {
        (ss * n / (n - 1.0)).sqrt() / sw
    };
    (mean, se)
}

/// Kish effective sample size of a weight vector, as a fraction of its length.
pub fn ess_fraction(ws: &[f64]) -> f64 {
    let s: f64 = ws.iter().sum();
    let s2: f64 = ws.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2 / ws.len() as f64
    }
}

/// Ratio of means over iid pairs, delta-method standard error.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> (f64, f64) {
    assert_eq!(num.len(), den.len());
    let n = num.len() as f64;
    let a = num.iter().sum::<f64>() / n;
    let b = den.iter().sum::<f64>() / n;
    let r = a / b;
    let z: Vec<f64> = num.iter().zip(den).map(|(x, y)| x - r * y).collect();
    let v = MeanVar::from_slice(&z);
    (r, v.stderr() / b.abs())
}

pub fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if n <= lag {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    (0..n - lag)
        .map(|i| (xs[i] - mean) * (xs[i + lag] - mean))
        .sum::<f64>()
        / n as f64
}

/// Ratio of block means for a stationary 1-dependent sequence of blocks:
/// variance of Z_k = num_k - r den_k taken as gamma0 + 2 gamma1.
pub fn ratio_one_dependent(num: &[f64], den: &[f64]) -> (f64, f64) {
    assert_eq!(num.len(), den.len());
    let n = num.len() as f64;
    let a = num.iter().sum::<f64>() / n;
    let b = den.iter().sum::<f64>() / n;
    let r = a / b;
    let z: Vec<f64> = num.iter().zip(den).map(|(x, y)| x - r * y).collect();
    let var = (autocovariance(&z, 0) + 2.0 * autocovariance(&z, 1)).max(autocovariance(&z, 0) / n);
    (r, (var / n).sqrt() / b.abs())
}

/// Mean of a series whose terms may be correlated up to `lags` apart.
pub fn mean_dependent(xs: &[f64], lags: usize) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let mut var = autocovariance(xs, 0);
    for l in 1..=lags {
        var += 2.0 * autocovariance(xs, l);
    }
    let var = var.max(autocovariance(xs, 0) / n);
    (mean, (var / n).sqrt())
}

/// Lag-`lag` autocorrelation pooled over independent sequences (each one a
/// replica). The standard error allows lag products to be correlated with
/// their neighbours, as they are for 1-dependent input.
pub fn pooled_autocorrelation(seqs: &[Vec<f64>], lag: usize) -> (f64, f64) {
    let all = MeanVar::from_slice(&seqs.iter().flatten().copied().collect::<Vec<_>>());
    let (mu, var) = (all.mean(), all.variance());
    let mut products = Vec::new();
    let mut bounds = Vec::new();
    for s in seqs {
        let start = products.len();
        for i in lag..s.len() {
            products.push((s[i] - mu) * (s[i - lag] - mu));
        }
        bounds.push((start, products.len()));
    }
    if products.is_empty() || var == 0.0 {
        return (0.0, f64::INFINITY);
    }
    let m = products.len() as f64;
    let mean = products.iter().sum::<f64>() / m;
    // covariance of products within each replica up to lag + 1 apart
    let mut v = 0.0;
    for &(a, b) in &bounds {
        let seg = &products[a..b];
        for i in 0..seg.len() {
            let di = seg[i] - mean;
            v += di * di;
            for j in i + 1..seg.len().min(i + lag + 2) {
                v += 2.0 * di * (seg[j] - mean);
            }
        }
    }
    let v = v.max(0.0) / m;
    (mean / var, (v / m).sqrt() / var)
}

/// Weighted least squares slope of y = s x through the origin with per-point
/// standard errors.
pub fn slope_through_origin(x: &[f64], y: &[f64], se: &[f64]) -> (f64, f64) {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for ((x, y), s) in x.iter().zip(y).zip(se) {
        let w = 1.0 / (s * s);
        sxy += w * x * y;
        sxx += w * x * x;
    }
    (sxy / sxx, 1.0 / sxx.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

/// Weighted least squares line fit; weights are inverse variances.
pub fn weighted_line_fit(x: &[f64], y: &[f64], se: &[f64]) -> LineFit {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((x, y), s) in x.iter().zip(y).zip(se) {
        let w = 1.0 / (s * s);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    LineFit {
        intercept: (sy - slope * sx) / sw,
        slope,
        slope_se: (sw / det).sqrt(),
        intercept_se: (sxx / det).sqrt(),
    }
}

/// Empirical E[exp(c x)] with its standard error.
pub fn exp_moment(xs: &[f64], c: f64) -> (f64, f64) {
    let v = MeanVar::from_slice(&xs.iter().map(|x| (c * x).exp()).collect::<Vec<_>>());
    (v.mean(), v.stderr())
}

pub fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// |a - b| <= k * se.
pub fn within(a: f64, b: f64, se: f64, k: f64) -> bool {
    (a - b).abs() <= k * se
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_batch() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let full = MeanVar::from_slice(&xs);
        let mut a = MeanVar::from_slice(&xs[..40]);
        a.merge(&MeanVar::from_slice(&xs[40..]));
        assert!((full.mean() - a.mean()).abs() < 1e-12);
        assert!((full.variance() - a.variance()).abs() < 1e-10);
        assert_eq!(a.count(), 100);
    }

    #[test]
    fn weighted_mean_uniform_weights() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = weighted_mean(&xs, &[2.0; 4]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((se - MeanVar::from_slice(&xs).stderr()).abs() < 1e-12);
        assert!((ess_fraction(&[1.0; 8]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fits_recover_lines() {
        let x = [1.0, 2.0, 3.0];
        let (s, _) = slope_through_origin(&x, &[2.0, 4.0, 6.0], &[1.0; 3]);
        assert!((s - 2.0).abs() < 1e-14);
        let f = weighted_line_fit(&x, &[1.0, 3.0, 5.0], &[0.1; 3]);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_of_exact_blocks() {
        let (r, se) = ratio_one_dependent(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]);
        assert!((r - 2.0).abs() < 1e-15);
        assert_eq!(se, 0.0);
        let (r, _) = ratio_estimate(&[1.0, 1.0], &[2.0, 2.0]);
        assert_eq!(r, 0.5);
    }

    #[test]
    fn autocorrelation_of_alternating_sequence() {
        let s: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (r1, _) = pooled_autocorrelation(std::slice::from_ref(&s), 1);
        let (r2, _) = pooled_autocorrelation(&[s], 2);
        assert!((r1 + 1.0).abs() < 1e-2);
        assert!((r2 - 1.0).abs() < 1e-2);
    }
}
