//! Return-time tails: the backward-preimage identity, simulated survival of
//! `τ_Y` / `φ_Y`, Hill fits, the escape-time proxy `q(x)` and the annulus
//! concentration check.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{map_indexed, Workers};
use crate::error::{domain, LabError, Result};
use crate::map::invert_left_branch;
use crate::orbit::{induced_excursion, Observable};
use crate::params::{derive_seed, ParamLaw, SeededStream};
use crate::quad::GaussRule;
use crate::stats::{hill_fit, log_grid, loglog_slope, HillFit, LineFit, SurvivalCurve, BOOTSTRAP_RESAMPLES};

/// Lane carrying initial-point draws, kept apart from parameter draws.
pub const INIT_LANE: u64 = 1;
/// Excursions are simulated in this many fixed chunks, one stream per chunk.
pub const SIM_CHUNKS: usize = 1024;
pub const CENSORING_WARN_FRACTION: f64 = 0.01;

/// Which measure on `Y` the survival probabilities refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Lebesgue restricted to `Y` and renormalized: `P(τ_Y > n) = E[x_n]`.
    Normalized,
    /// Lebesgue restricted to `Y` without renormalizing: `P(τ_Y > n) = ½E[x_n]`.
    HalfUnnormalized,
}

impl Normalization {
    /// Factor converting a normalized probability to this convention.
    pub fn factor(self) -> f64 {
        match self {
            Normalization::Normalized => 1.0,
            Normalization::HalfUnnormalized => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSource {
    Simulation,
    BackwardPreimage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub range: (f64, f64),
}

impl SlopeFit {
    fn from_line(f: LineFit, range: (f64, f64)) -> Self {
        Self {
            slope: f.slope,
            intercept: f.intercept,
            r2: f.r2,
            range,
        }
    }
}

/// Survival of a positive statistic on a threshold grid, always stored
/// under [`Normalization::Normalized`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub source: TailSource,
    pub grid: Vec<f64>,
    /// Counts above each threshold; for the preimage estimator, the expected count.
    pub survivors: Vec<f64>,
    pub total: u64,
    pub censored: u64,
    pub survival: Vec<f64>,
    pub std_error: Vec<f64>,
    pub hill: Option<HillFit>,
    pub slope_fit: Option<SlopeFit>,
    pub excess_censoring: bool,
}

#[derive(Serialize)]
struct TailSummary<'a> {
    source: TailSource,
    normalization: Normalization,
    total: u64,
    censored: u64,
    hill_index: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    hill_k: Option<usize>,
    plateau_median: Option<f64>,
    slope_fit: &'a Option<SlopeFit>,
}

impl TailReport {
    pub fn survival_under(&self, norm: Normalization) -> Vec<f64> {
        self.survival.iter().map(|s| s * norm.factor()).collect()
    }

    /// Survival at threshold `n` if `n` is on the grid.
    pub fn at(&self, n: f64) -> Option<(f64, f64)> {
        self.grid
            .iter()
            .position(|&g| g == n)
            .map(|i| (self.survival[i], self.std_error[i]))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "survivors", "total", "censored", "survival"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                self.grid[i].to_string(),
                self.survivors[i].to_string(),
                self.total.to_string(),
                self.censored.to_string(),
                self.survival[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let s = TailSummary {
            source: self.source,
            normalization: Normalization::Normalized,
            total: self.total,
            censored: self.censored,
            hill_index: self.hill.as_ref().map(|h| h.index),
            ci_lo: self.hill.as_ref().map(|h| h.ci_lo),
            ci_hi: self.hill.as_ref().map(|h| h.ci_hi),
            hill_k: self.hill.as_ref().map(|h| h.k),
            plateau_median: self.hill.as_ref().map(|h| h.plateau_median),
            slope_fit: &self.slope_fit,
        };
        serde_json::to_value(s).unwrap_or(serde_json::Value::Null)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(serde_json::to_string_pretty(&self.summary_json())?.as_bytes())?;
        Ok(())
    }
}

/// `x_n(ω) = f^{-1}_{ω_1} ∘ … ∘ f^{-1}_{ω_{n-1}}(1/2)`, with `ω_0` drawn and
/// discarded so that stream positions match skew-product time.
pub fn backward_preimage_xn(stream: &mut SeededStream, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(domain("x_n needs n ≥ 1"));
    }
    let _ = stream.sample();
    let params: Vec<_> = (1..n).map(|_| stream.sample()).collect();
    params.iter().rev().try_fold(0.5, |y, &p| invert_left_branch(y, p))
}

/// `x'_1, …, x'_{n_max}` with `x'_{k+1} = f^{-1}_{ω_k}(x'_k)`: the innermost
/// inverse is applied first, so each depth reuses the previous one. For
/// i.i.d. parameters `x'_k` has the law of `x_k`.
pub fn xn_path(stream: &mut SeededStream, n_max: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_max);
    let mut y = 0.5;
    let _ = stream.sample();
    out.push(y);
    for _ in 1..n_max {
        y = invert_left_branch(y, stream.sample())?;
        out.push(y);
    }
    Ok(out)
}

/// Threshold grid used by the tail reports: every integer up to 20, then
/// log-spaced integers up to `n_max`.
pub fn default_grid(n_max: u64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=n_max.min(20)).map(|n| n as f64).collect();
    if n_max > 20 {
        let mut extra: Vec<f64> = log_grid(21.0, n_max as f64, 120).into_iter().map(f64::round).collect();
        extra.dedup();
        g.extend(extra.into_iter().filter(|&v| v > 20.0));
    }
    g
}

fn slope_over(grid: &[f64], surv: &[f64], range: (f64, f64)) -> Option<SlopeFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = grid
        .iter()
        .zip(surv)
        .filter(|(g, s)| **g >= range.0 && **g <= range.1 && **s > 0.0)
        .map(|(g, s)| (*g, *s))
        .unzip();
    loglog_slope(&xs, &ys).ok().map(|f| SlopeFit::from_line(f, range))
}

/// Monte Carlo estimate of `P(τ_Y > n) = E[x_n]` for `n = 1..=n_max`.
pub fn tail_via_xn(law: &ParamLaw, n_max: usize, n_samples: usize, master_seed: u64, workers: Workers) -> Result<TailReport> {
    if n_max < 2 || n_samples == 0 {
        return Err(domain("tail_via_xn needs n_max ≥ 2 and at least one sample"));
    }
    let law = Arc::new(law.clone());
    let paths = map_indexed(workers, n_samples, |i| {
        let mut s = SeededStream::new(master_seed, i as u64, law.clone());
        xn_path(&mut s, n_max)
    });
    let mut sum = vec![0.0; n_max];
    let mut sum_sq = vec![0.0; n_max];
    for path in paths {
        for (k, x) in path?.into_iter().enumerate() {
            sum[k] += x;
            sum_sq[k] += x * x;
        }
    }
    let m = n_samples as f64;
    let survival: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_error = survival
        .iter()
        .zip(&sum_sq)
        .map(|(mu, sq)| {
            if n_samples < 2 {
                0.0
            } else {
                ((sq / m - mu * mu).max(0.0) * m / (m - 1.0) / m).sqrt()
            }
        })
        .collect();
    let grid: Vec<f64> = (1..=n_max).map(|n| n as f64).collect();
    let slope_fit = slope_over(&grid, &survival, ((n_max as f64 / 100.0).max(10.0), n_max as f64));
    Ok(TailReport {
        source: TailSource::BackwardPreimage,
        survivors: survival.iter().map(|s| s * m).collect(),
        grid,
        total: n_samples as u64,
        censored: 0,
        survival,
        std_error,
        hill: None,
        slope_fit,
        excess_censoring: false,
    })
}

/// Raw output of independent excursions started uniformly on `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionSample {
    pub values: Vec<f64>,
    pub censored: u64,
    pub cap: u64,
}

/// Runs `n_excursions` independent excursions from `x ~ U[1/2, 1]` and
/// collects `φ_Y` (for `φ ≡ 1`, the return time).
pub fn simulate_excursions(
    law: &ParamLaw,
    phi: &Observable,
    n_excursions: usize,
    master_seed: u64,
    cap: u64,
    workers: Workers,
) -> ExcursionSample {
    let law = Arc::new(law.clone());
    let chunks = SIM_CHUNKS.min(n_excursions.max(1));
    let per = n_excursions / chunks;
    let extra = n_excursions % chunks;
    let parts = map_indexed(workers, chunks, |c| {
        let count = per + usize::from(c < extra);
        let mut params = SeededStream::new(master_seed, c as u64, law.clone());
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, c as u64, INIT_LANE));
        let mut vals = Vec::with_capacity(count);
        let mut cens = 0u64;
        for _ in 0..count {
            let x = 0.5 + 0.5 * crate::stats::open_unit(&mut init);
            match induced_excursion(x, &mut params, phi, cap) {
                Ok(r) => vals.push(r.birkhoff),
                Err(_) => cens += 1,
            }
        }
        (vals, cens)
    });
    let mut values = Vec::with_capacity(n_excursions);
    let mut censored = 0;
    for (v, c) in parts {
        values.extend(v);
        censored += c;
    }
    ExcursionSample { values, censored, cap }
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub cap: u64,
    pub grid: Option<Vec<f64>>,
    pub hill_k: Option<usize>,
    pub resamples: usize,
    pub slope_range: Option<(f64, f64)>,
    pub workers: Workers,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            cap: crate::orbit::DEFAULT_CAP,
            grid: None,
            hill_k: None,
            resamples: BOOTSTRAP_RESAMPLES,
            slope_range: None,
            workers: Workers::AUTO,
        }
    }
}

pub fn tail_report_from_sample(sample: &ExcursionSample, opts: &SimulationOptions, master_seed: u64) -> Result<TailReport> {
    let max_val = sample.values.iter().copied().fold(1.0, f64::max);
    let grid = opts.grid.clone().unwrap_or_else(|| default_grid(max_val.ceil() as u64));
    let curve = SurvivalCurve::from_values(&sample.values, sample.censored, sample.cap as f64, &grid);
    let std_error = curve.std_errors();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, u64::MAX, 7));
    let positive: Vec<f64> = sample.values.iter().copied().filter(|v| *v > 0.0).collect();
    let hill = hill_fit(&positive, opts.hill_k, opts.resamples, &mut rng).ok();
    // fit where at least a hundred observations remain above the threshold
    let deep = curve
        .grid
        .iter()
        .zip(&curve.survivors)
        .filter(|(_, s)| **s >= 100)
        .map(|(g, _)| *g)
        .fold(10.0, f64::max);
    let range = opts.slope_range.unwrap_or((10.0, deep));
    let slope_fit = slope_over(&curve.grid, &curve.survival, range);
    let total = curve.total;
    let excess = total > 0 && sample.censored as f64 / total as f64 > CENSORING_WARN_FRACTION;
    Ok(TailReport {
        source: TailSource::Simulation,
        survivors: curve.survivors.iter().map(|&s| s as f64).collect(),
        grid: curve.grid,
        total,
        censored: sample.censored,
        survival: curve.survival,
        std_error,
        hill,
        slope_fit,
        excess_censoring: excess,
    })
}

/// Empirical survival of `φ_Y` from direct simulation, with a Hill fit.
pub fn tail_via_simulation(
    law: &ParamLaw,
    phi: &Observable,
    n_excursions: usize,
    master_seed: u64,
    opts: &SimulationOptions,
) -> Result<TailReport> {
    if n_excursions < 1000 {
        return Err(domain(format!("tail_via_simulation needs ≥ 1000 excursions, got {n_excursions}")));
    }
    let sample = simulate_excursions(law, phi, n_excursions, master_seed, opts.cap, opts.workers);
    tail_report_from_sample(&sample, opts, master_seed)
}

/// Pointwise comparison of two survival estimates on their common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub n: Vec<f64>,
    /// `|a − b| / sqrt(se_a² + se_b²)`
    pub z: Vec<f64>,
    pub max_z: f64,
}

pub fn compare_reports(a: &TailReport, b: &TailReport, range: (f64, f64)) -> Agreement {
    let mut n = Vec::new();
    let mut z = Vec::new();
    for (i, &g) in a.grid.iter().enumerate() {
        if g < range.0 || g > range.1 {
            continue;
        }
        if let Some((sb, eb)) = b.at(g) {
            let se = (a.std_error[i].powi(2) + eb.powi(2)).sqrt();
            let d = (a.survival[i] - sb).abs();
            n.push(g);
            z.push(if se > 0.0 {
                d / se
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            });
        }
    }
    let max_z = z.iter().copied().fold(0.0, f64::max);
    Agreement { n, z, max_z }
}

pub const Q_REL_TOL: f64 = 1e-10;
const Q_MAX_PANELS: usize = 1 << 14;

/// `q(x) = ∫_x^{1/2} φ(t) / (t·∫(2t)^γ dν(γ)) dt`, integrated in `s = −ln t`.
pub fn escape_proxy_q(x: f64, law: &ParamLaw, phi: &Observable) -> Result<f64> {
    if !(x > 0.0 && x < 0.5) {
        return Err(domain(format!("q(x) needs 0 < x < 1/2, got {x}")));
    }
    if x < crate::map::UNDERFLOW_GUARD {
        return Err(LabError::NonConvergence {
            iterations: 0,
            residual: x,
        });
    }
    let rule = GaussRule::shared(16);
    let (v, ok) = rule.integrate_adaptive(std::f64::consts::LN_2, -x.ln(), Q_REL_TOL, Q_MAX_PANELS, |s| {
        let t = (-s).exp();
        phi.eval(t) / law.displacement_factor(t)
    });
    if !ok {
        return Err(LabError::NonConvergence {
            iterations: Q_MAX_PANELS,
            residual: v,
        });
    }
    Ok(v)
}

/// Endpoint of the `n`-th annulus `I_n = [a_n, a_{n-1})`, `a_n = e^{-√n}`.
pub fn annulus_edge(n: u64) -> f64 {
    (-(n as f64).sqrt()).exp()
}

/// Expected number of steps spent in `I_n`.
pub fn annulus_steps(n: u64, law: &ParamLaw) -> f64 {
    let (a, a_prev) = (annulus_edge(n), annulus_edge(n.saturating_sub(1)));
    (a_prev - a) / (a * law.displacement_factor(a))
}

/// Fraction of runs started at `a_n` whose escape time from `I_n` lies in
/// `[(1−η)N_n, (1+η)N_n]`.
pub fn annulus_concentration(n: u64, law: &ParamLaw, n_samples: usize, eta: f64, master_seed: u64, workers: Workers) -> Result<f64> {
    let times = annulus_escape_times(n, law, n_samples, master_seed, workers)?;
    annulus_fraction(&times, annulus_steps(n, law), eta)
}

pub fn annulus_fraction(times: &[u64], target: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(domain(format!("eta must lie in (0, 1), got {eta}")));
    }
    let (lo, hi) = ((1.0 - eta) * target, (1.0 + eta) * target);
    let inside = times.iter().filter(|&&t| (lo..=hi).contains(&(t as f64))).count();
    Ok(inside as f64 / times.len().max(1) as f64)
}

/// `T_n = min{k : f^k(a_n) > a_{n-1}}` for independent parameter streams.
pub fn annulus_escape_times(n: u64, law: &ParamLaw, n_samples: usize, master_seed: u64, workers: Workers) -> Result<Vec<u64>> {
    if n < 1 || annulus_edge(n) < 1e-12 {
        return Err(domain(format!("annulus index {n} out of range")));
    }
    let (start, exit) = (annulus_edge(n), annulus_edge(n - 1));
    let law = Arc::new(law.clone());
    Ok(map_indexed(workers, n_samples, |i| {
        let mut s = SeededStream::new(master_seed, i as u64, law.clone());
        let mut x = start;
        let mut k = 0u64;
        while x <= exit {
            x = s.sample().step(x);
            k += 1;
        }
        k
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeProfile {
    pub x: f64,
    pub q_of_x: f64,
    /// `(n, N_n)` for every annulus between `x` and `1/2`.
    pub annulus_steps: Vec<(u64, f64)>,
}

pub fn escape_profile(x: f64, law: &ParamLaw, phi: &Observable) -> Result<EscapeProfile> {
    let q_of_x = escape_proxy_q(x, law, phi)?;
    let deepest = (x.ln().powi(2)).ceil() as u64;
    let annulus_steps = (1..=deepest).map(|n| (n, annulus_steps(n, law))).collect();
    Ok(EscapeProfile { x, q_of_x, annulus_steps })
}
