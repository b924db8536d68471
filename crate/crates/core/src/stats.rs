//! Order statistics, tail-index estimation and distribution comparisons.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{domain, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 500;

/// Number of upper order statistics used by default: `⌊N^0.6⌋`.
pub fn default_hill_k(n: usize) -> usize {
    ((n as f64).powf(0.6).floor() as usize).clamp(2, n.saturating_sub(1).max(2))
}

/// Sorts a copy of `xs` in decreasing order.
pub fn sorted_desc(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Hill estimate of the tail exponent from the top `k` of a decreasingly
/// sorted sample, using `X_(k+1)` as threshold.
pub fn hill_from_sorted(desc: &[f64], k: usize) -> Option<f64> {
    if k == 0 || k >= desc.len() || desc[k] <= 0.0 {
        return None;
    }
    let log_threshold = desc[k].ln();
    let mean = desc[..k].iter().map(|x| x.ln() - log_threshold).sum::<f64>() / k as f64;
    (mean > 0.0).then(|| 1.0 / mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillFit {
    pub index: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub k: usize,
    /// Median of the Hill plot over `k ∈ [k/4, 4k]`.
    pub plateau_median: f64,
    /// `(k, estimate)` pairs on a log-spaced grid.
    pub plot: Vec<(usize, f64)>,
    /// `c` in `P(X > t) ≈ c·t^{-index}`, read off at the threshold.
    pub tail_constant: f64,
}

fn quantile_sorted(asc: &[f64], q: f64) -> f64 {
    if asc.is_empty() {
        return f64::NAN;
    }
    let pos = q * (asc.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < asc.len() {
        asc[i] * (1.0 - frac) + asc[i + 1] * frac
    } else {
        asc[i]
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Top `k + 1` order statistics of a bootstrap resample of `desc`.
///
/// Multinomial counts are drawn one value at a time from the top, so only
/// the part of the sample that reaches the upper tail is touched.
fn resample_top(desc: &[f64], k: usize, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    out.clear();
    let n = desc.len();
    let mut remaining = n as u64;
    for (i, &x) in desc.iter().enumerate() {
        if out.len() > k || remaining == 0 {
            break;
        }
        let p = 1.0 / (n - i) as f64;
        let c = if p >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, p).map(|b| b.sample(rng)).unwrap_or(0)
        };
        remaining -= c;
        for _ in 0..c.min((k + 1 - out.len()) as u64) {
            out.push(x);
        }
    }
}

/// Hill fit with a percentile bootstrap interval.
pub fn hill_fit(sample: &[f64], k: Option<usize>, resamples: usize, rng: &mut ChaCha8Rng) -> Result<HillFit> {
    let desc = sorted_desc(sample);
    let n = desc.len();
    if n < 10 {
        return Err(domain(format!("hill fit needs at least 10 values, got {n}")));
    }
    let k = k.unwrap_or_else(|| default_hill_k(n)).min(n - 1);
    let index = hill_from_sorted(&desc, k).ok_or_else(|| domain("degenerate upper tail"))?;

    let mut boot = Vec::with_capacity(resamples);
    let mut top = Vec::with_capacity(k + 1);
    for _ in 0..resamples {
        resample_top(&desc, k, rng, &mut top);
        if let Some(h) = hill_from_sorted(&top, k) {
            boot.push(h);
        }
    }
    boot.sort_by(f64::total_cmp);
    let (ci_lo, ci_hi) = if boot.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (quantile_sorted(&boot, 0.025), quantile_sorted(&boot, 0.975))
    };

    let plot = hill_plot(&desc, 40);
    let lo = (k / 4).max(2);
    let hi = (4 * k).min(n - 1);
    let window: Vec<f64> = plot.iter().filter(|(j, _)| (lo..=hi).contains(j)).map(|p| p.1).collect();
    let plateau_median = if window.is_empty() { index } else { median(&window) };
    let tail_constant = k as f64 / n as f64 * desc[k].powf(index);

    Ok(HillFit {
        index,
        ci_lo,
        ci_hi,
        k,
        plateau_median,
        plot,
        tail_constant,
    })
}

/// Hill estimates at `points` log-spaced values of `k` in `[2, N/2]`.
pub fn hill_plot(desc: &[f64], points: usize) -> Vec<(usize, f64)> {
    let kmax = (desc.len() / 2).max(3);
    let mut ks: Vec<usize> = log_grid(2.0, kmax as f64, points).into_iter().map(|v| v.round() as usize).collect();
    ks.dedup();
    ks.into_iter().filter_map(|k| hill_from_sorted(desc, k).map(|h| (k, h))).collect()
}

/// `points` log-spaced reals in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

/// Distinct log-spaced integers in `[lo, hi]`.
pub fn log_grid_int(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let mut v: Vec<u64> = log_grid(lo as f64, hi as f64, points)
        .into_iter()
        .map(|x| x.round() as u64)
        .collect();
    v.dedup();
    v
}

/// Ordinary least squares `y ≈ a + b·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(domain(format!("line fit needs ≥3 paired points, got {n}/{}", ys.len())));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(domain("line fit with constant abscissa"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = (sse / (nf - 2.0) / sxx).sqrt();
    Ok(LineFit {
        slope,
        intercept,
        r2,
        slope_se,
    })
}

/// Slope of `log y` against `log x`, skipping non-positive entries.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    fit_line(&lx, &ly)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

/// `sup |F_n − F|` for a continuous reference CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Empirical survival on a threshold grid, with right-censoring at a common cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub grid: Vec<f64>,
    pub survivors: Vec<u64>,
    pub total: u64,
    pub censored: u64,
    pub survival: Vec<f64>,
}

impl SurvivalCurve {
    /// `values` are observed statistics; censored runs enter as survivors at
    /// every threshold below `cap` and are excluded from thresholds at or above it.
    pub fn from_values(values: &[f64], censored: u64, cap: f64, grid: &[f64]) -> Self {
        let mut asc = values.to_vec();
        asc.sort_by(f64::total_cmp);
        let total = asc.len() as u64 + censored;
        let grid: Vec<f64> = grid.iter().copied().filter(|&t| t < cap).collect();
        let survivors: Vec<u64> = grid
            .iter()
            .map(|&t| (asc.len() - asc.partition_point(|&v| v <= t)) as u64 + censored)
            .collect();
        let survival = survivors.iter().map(|&s| s as f64 / total.max(1) as f64).collect();
        Self {
            grid,
            survivors,
            total,
            censored,
            survival,
        }
    }

    /// Binomial standard error at each grid point.
    pub fn std_errors(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.survival.iter().map(|&p| (p * (1.0 - p) / n).sqrt()).collect()
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.survival.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Uniform draw on `(0, 1]`.
pub fn open_unit(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}
