//! The Markov chain on `[0, 1]` driven by i.i.d. power-law parameters
//! `ν_{α,ε}(t, ∞) = (t/α)^{-ε}`: transition density, density evolution on a
//! grid, the sets `C`, `W`, `H`, hitting times and total-variation decay.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{map_indexed, Workers};
use crate::error::{domain, LabError, Result};
use crate::map::{invert_left_branch, Interval, MapParameter};
use crate::markov::{stationary, SparseRows};
use crate::orbit::hitting_time_where;
use crate::params::{ParamLaw, SeededStream};
use crate::quad::GaussRule;
use crate::stats::{log_grid_int, loglog_slope, SurvivalCurve};
use crate::tails::{default_grid, tail_report_from_sample, ExcursionSample, SimulationOptions, SlopeFit, TailReport};
use crate::ulam::{Grid, GridScheme};

pub const MASS_TOL: f64 = 1e-8;
pub const NORMALIZATION_TOL: f64 = 1e-8;
/// Gauss panels per kernel integral, graded toward the singular end.
const GRADED_LEVELS: usize = 15;
const PANEL_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawKernel {
    alpha: f64,
    epsilon: f64,
}

/// `γ` with `f_γ(x) = y`, i.e. `log(x/(y−x)) / log(1/(2x))`; needs `x < y < 2x`.
pub fn gamma_of_target(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0 && x < 0.5 && y > x && y < 2.0 * x) {
        return Err(domain(format!("no positive exponent maps {x} to {y}")));
    }
    Ok((x / (y - x)).ln() / (1.0 / (2.0 * x)).ln())
}

impl PowerLawKernel {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(domain(format!("kernel needs 0 < α < 1 and ε > 0, got α = {alpha}, ε = {epsilon}")));
        }
        Ok(Self { alpha, epsilon })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn law(&self) -> ParamLaw {
        ParamLaw::PowerLaw {
            alpha: self.alpha,
            epsilon: self.epsilon,
        }
    }

    fn lowest(&self) -> MapParameter {
        MapParameter::new(self.alpha).expect("validated exponent")
    }

    /// `γ_x(y)` restricted to the support `(x, f_α(x)]`.
    pub fn gamma_of_target(&self, x: f64, y: f64) -> Result<f64> {
        let top = self.lowest().step(x);
        if x >= 0.5 || y > top * (1.0 + 4.0 * f64::EPSILON) {
            return Err(domain(format!("{y} lies beyond f_α({x}) = {top}")));
        }
        Ok(gamma_of_target(x, y.min(top))?.max(self.alpha))
    }

    /// `P(X_1 ≤ y | X_0 = x)` for `0 < x < 1/2`.
    #[inline]
    pub fn cdf(&self, x: f64, y: f64) -> f64 {
        if y <= x {
            return 0.0;
        }
        let log_scale = (0.5 / x).ln();
        let gap = y - x;
        if gap >= x {
            return 1.0;
        }
        let u = (x / gap).ln();
        let ratio = self.alpha * log_scale / u;
        if ratio >= 1.0 {
            1.0
        } else {
            ratio.powf(self.epsilon)
        }
    }

    /// `P(X_1 > y | X_0 = x)`, computed without cancellation near 0.
    #[inline]
    pub fn survival(&self, x: f64, y: f64) -> f64 {
        if y <= x {
            return 1.0;
        }
        let gap = y - x;
        if gap >= x {
            return 0.0;
        }
        let ratio = self.alpha * (0.5 / x).ln() / (x / gap).ln();
        if ratio >= 1.0 {
            0.0
        } else {
            -(self.epsilon * ratio.ln()).exp_m1()
        }
    }

    /// `∫_a^b P(X_1 > c | x) dx` given `pre = f_α^{-1}(c)`; the integrand is
    /// 0 below `pre`, 1 above `c` and log-singular as `x → c`.
    pub fn mean_survival(&self, a: f64, b: f64, c: f64, pre: f64) -> f64 {
        let full = (b - a.max(c)).max(0.0);
        let (lo, hi) = (a.max(pre), b.min(c));
        if hi <= lo {
            return full;
        }
        full + graded_nodes(lo, hi).map(|(x, wt)| wt * self.survival(x, c)).sum::<f64>()
    }

    /// `εα^ε (log(1/(2x)))^ε / ((log(x/(y−x)))^{1+ε} (y−x))` on `(x, f_α(x)]`, zero elsewhere.
    pub fn transition_density(&self, x: f64, y: f64) -> f64 {
        if !(x > 0.0 && x < 0.5) || y <= x || y > self.lowest().step(x) {
            return 0.0;
        }
        self.density_times_gap(x, (y - x).ln()) / (y - x)
    }

    /// `p_x(y)·(y − x)` as a function of `ln(y − x)`, free of cancellation
    /// when `y` is extremely close to `x`.
    pub fn density_times_gap(&self, x: f64, log_gap: f64) -> f64 {
        let log_scale = (0.5 / x).ln();
        let u = x.ln() - log_gap;
        if u < self.alpha * log_scale * (1.0 - 1e-15) {
            return 0.0;
        }
        let e = self.epsilon;
        e * (self.alpha * log_scale).powf(e) / u.powf(1.0 + e)
    }

    /// `∫ p_x(y) dy` by quadrature in `t`, where `ln(y − x) = ln x − α·ln(1/(2x))·e^t`.
    pub fn density_mass(&self, x: f64) -> f64 {
        let base = self.alpha * (0.5 / x).ln();
        let t_max = 40.0 / self.epsilon;
        let rule = GaussRule::shared(32);
        rule.integrate_composite(0.0, t_max, 64, |t| {
            let u = base * t.exp();
            // d ln(y−x) = −u dt
            self.density_times_gap(x, x.ln() - u) * u
        })
    }

    /// Largest `|∫p_x dy − 1|` over `points` values of `x` spread in `(0, 1/2)`.
    pub fn normalization_check(&self, points: usize) -> (f64, f64) {
        let xs = crate::stats::log_grid(1e-6, 0.499, points);
        xs.into_iter()
            .map(|x| (x, (self.density_mass(x) - 1.0).abs()))
            .fold((0.0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc })
    }
}

/// Cell-averaged density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl DensityVector {
    pub fn from_masses(grid: Arc<Grid>, masses: &[f64]) -> Self {
        let values = masses.iter().enumerate().map(|(i, m)| m / grid.width(i)).collect();
        Self { grid, values }
    }

    pub fn uniform(grid: Arc<Grid>) -> Self {
        let n = grid.cells();
        Self {
            grid,
            values: vec![1.0; n],
        }
    }

    /// Normalized indicator of the cell containing `x`.
    pub fn point_mass(grid: Arc<Grid>, x: f64) -> Self {
        let i = grid.locate(x);
        let mut m = vec![0.0; grid.cells()];
        m[i] = 1.0;
        Self::from_masses(grid, &m)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.values.iter().enumerate().map(|(i, v)| v * self.grid.width(i)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    pub fn tv_distance(&self, other: &DensityVector) -> Result<f64> {
        if self.grid.edges() != other.grid.edges() {
            return Err(LabError::GridMismatch("densities live on different grids".into()));
        }
        Ok(0.5 * self.masses().iter().zip(other.masses()).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["cell_lo", "cell_hi", "density"])?;
        for i in 0..self.values.len() {
            let (a, b) = self.grid.cell(i);
            w.write_record([format!("{a:e}"), format!("{b:e}"), format!("{:e}", self.values[i])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nodes and weights for `∫_lo^hi`, graded geometrically toward `hi`
/// down to a relative gap of `10^{-GRADED_LEVELS}`.
fn graded_nodes(lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> {
    let rule = GaussRule::shared(PANEL_ORDER);
    let w = hi - lo;
    (0..=GRADED_LEVELS).flat_map(move |level| {
        let left = if level == 0 { lo } else { hi - w * 0.1f64.powi(level as i32) };
        let right = if level == GRADED_LEVELS {
            hi
        } else {
            hi - w * 0.1f64.powi(level as i32 + 1)
        };
        let rule = rule.clone();
        (0..PANEL_ORDER).map(move |k| {
            let (u, wt) = rule.pairs().nth(k).expect("node");
            (left + (right - left) * u, wt * (right - left))
        })
    })
}

/// One-step transition operator of the chain on a fixed grid.
#[derive(Debug, Clone)]
pub struct ChainOperator {
    pub kernel: PowerLawKernel,
    pub grid: Arc<Grid>,
    pub matrix: SparseRows,
    transpose: SparseRows,
}

impl ChainOperator {
    pub fn build(kernel: PowerLawKernel, grid: Arc<Grid>, workers: Workers) -> Result<Self> {
        let half = grid.half_index();
        let top = kernel.lowest();
        let lowest_pre: Vec<f64> = grid
            .edges()
            .iter()
            .map(|&c| if c >= 1.0 { Ok(0.5) } else { invert_left_branch(c, top) })
            .collect::<Result<_>>()?;
        let rows: Vec<Result<Vec<(usize, f64)>>> = map_indexed(workers, grid.cells(), |i| {
            let (a, b) = grid.cell(i);
            let mut row: Vec<(usize, f64)> = Vec::new();
            if i < half {
                // S̄(c) = (1/w) ∫_a^b P(X_1 > c | x) dx, which is 1 at c = a and
                // 0 once c ≥ f_α(b); entries are its decrements.
                let w = b - a;
                let mut prev = 1.0;
                let mut j = i;
                while prev > 0.0 && j < grid.cells() {
                    let c = grid.edges()[j + 1];
                    let next = if j + 1 == grid.cells() {
                        0.0
                    } else {
                        kernel.mean_survival(a, b, c, lowest_pre[j + 1]) / w
                    };
                    if prev - next > 0.0 {
                        row.push((j, prev - next));
                    }
                    prev = next;
                    j += 1;
                }
            } else {
                let (lo, hi) = (2.0 * a - 1.0, 2.0 * b - 1.0);
                let mut j = grid.locate(lo);
                while j < grid.cells() && grid.edges()[j] < hi {
                    let (c, d) = grid.cell(j);
                    let len = d.min(hi) - c.max(lo);
                    if len > 0.0 {
                        row.push((j, len / (hi - lo)));
                    }
                    j += 1;
                }
            }
            let s: f64 = row.iter().map(|e| e.1).sum();
            if (s - 1.0).abs() > MASS_TOL {
                return Err(LabError::Quadrature { row: i, defect: s - 1.0 });
            }
            row.iter_mut().for_each(|e| e.1 /= s);
            Ok(row)
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let n = grid.cells();
        let matrix = SparseRows::from_rows(n, rows);
        let mut cols = vec![Vec::new(); n];
        for (i, j, v) in matrix.triplets() {
            cols[j].push((i, v));
        }
        let transpose = SparseRows::from_rows(n, cols);
        Ok(Self {
            kernel,
            grid,
            matrix,
            transpose,
        })
    }

    /// One chain step `ρ ↦ Pρ`.
    pub fn evolve(&self, rho: &DensityVector) -> Result<DensityVector> {
        if rho.grid.edges() != self.grid.edges() {
            return Err(LabError::GridMismatch("density and operator grids differ".into()));
        }
        let m = rho.masses();
        let next = self.push_masses(&m);
        let before: f64 = m.iter().sum();
        let after: f64 = next.iter().sum();
        if (after - before).abs() > MASS_TOL * before.abs().max(1.0) {
            return Err(LabError::MassDefect { defect: after - before });
        }
        Ok(DensityVector::from_masses(self.grid.clone(), &next))
    }

    /// `m ↦ m·P`, parallel over target cells.
    pub fn push_masses(&self, m: &[f64]) -> Vec<f64> {
        use rayon::prelude::*;
        (0..self.grid.cells())
            .into_par_iter()
            .map(|j| self.transpose.row(j).map(|(i, v)| m[i] * v).sum())
            .collect()
    }
}

pub fn evolve_density(op: &ChainOperator, rho: &DensityVector) -> Result<DensityVector> {
    op.evolve(rho)
}

/// Default chain grid: refined geometrically toward 0.
pub fn default_chain_grid(cells: usize) -> Result<Grid> {
    Grid::build(GridScheme::default(), cells)
}

/// Stationary density of the discretized chain, with its fixed-point TV residual.
pub fn chain_stationary(op: &ChainOperator) -> Result<(DensityVector, f64)> {
    if op.grid.cells() < 512 {
        return Err(domain(format!("stationary density needs ≥ 512 cells, got {}", op.grid.cells())));
    }
    let (pi, _) = stationary(&op.matrix, 1e-8, 1e-12)?;
    let dens = DensityVector::from_masses(op.grid.clone(), &pi);
    let tv = dens.tv_distance(&op.evolve(&dens)?)?;
    Ok((dens, tv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvCurve {
    pub n: Vec<u64>,
    pub tv: Vec<f64>,
    pub slope: Option<SlopeFit>,
}

impl TvCurve {
    pub fn is_nonincreasing(&self, slack: f64) -> bool {
        self.tv.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "tv"])?;
        for (n, t) in self.n.iter().zip(&self.tv) {
            w.write_record([n.to_string(), format!("{t:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Log–log slope over log-spaced lags in `[lo, hi]`.
    pub fn fit(&self, lo: u64, hi: u64) -> Option<SlopeFit> {
        let lags = log_grid_int(lo.max(1), hi, 40);
        let (xs, ys): (Vec<f64>, Vec<f64>) = lags
            .iter()
            .filter_map(|&l| self.n.iter().position(|&m| m == l).map(|i| (l as f64, self.tv[i])))
            .unzip();
        loglog_slope(&xs, &ys).ok().map(|f| SlopeFit {
            slope: f.slope,
            intercept: f.intercept,
            r2: f.r2,
            range: (lo as f64, hi as f64),
        })
    }
}

/// `TV(Pⁿρ₀, π)` for `n = 0..=n_max`, slope fitted over `[n_max/100, n_max]`.
pub fn tv_convergence_curve(op: &ChainOperator, initial: &DensityVector, stationary: &DensityVector, n_max: u64) -> Result<TvCurve> {
    if initial.grid.edges() != op.grid.edges() || stationary.grid.edges() != op.grid.edges() {
        return Err(LabError::GridMismatch("TV curve needs matching grids".into()));
    }
    let pi = stationary.masses();
    let mut m = initial.masses();
    let mut tv = Vec::with_capacity(n_max as usize + 1);
    for _ in 0..=n_max {
        tv.push(0.5 * m.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum::<f64>());
        m = op.push_masses(&m);
    }
    let mut curve = TvCurve {
        n: (0..=n_max).collect(),
        tv,
        slope: None,
    };
    curve.slope = curve.fit((n_max / 100).max(1), n_max);
    Ok(curve)
}

/// Returns the cell masses after each step, for checks that need the path.
pub fn evolve_path(op: &ChainOperator, initial: &DensityVector, steps: usize) -> Result<Vec<DensityVector>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(initial.clone());
    for _ in 0..steps {
        let next = op.evolve(out.last().expect("nonempty"))?;
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainGeometry {
    pub b: f64,
    /// `[f_α^{-1}(b), b]`
    pub c: Interval,
    /// `[b, (b+1)/2)`
    pub w: Interval,
    /// `[1/2, (b+1)/2)`
    pub h: Interval,
}

impl ChainGeometry {
    pub fn in_c(&self, x: f64) -> bool {
        self.c.contains(x)
    }

    pub fn in_w(&self, x: f64) -> bool {
        self.w.contains_half_open(x)
    }

    pub fn in_h(&self, x: f64) -> bool {
        self.h.contains_half_open(x)
    }
}

fn petite_margin(alpha: MapParameter, b: f64) -> f64 {
    alpha.step(b) - (3.0 + b) / 4.0
}

/// Smallest admissible `b`: the root of `f_α(b) = (3+b)/4` on `(0, 1/2)`.
pub fn petite_threshold(alpha: f64) -> Result<f64> {
    let p = MapParameter::new(alpha)?;
    let (mut lo, mut hi) = (0.0, 0.5 - 1e-15);
    if petite_margin(p, hi) <= 0.0 {
        return Err(domain(format!("no admissible b for α = {alpha}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if petite_margin(p, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn make_geometry(alpha: f64, b: Option<f64>) -> Result<ChainGeometry> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("geometry needs 0 < α < 1, got {alpha}")));
    }
    let p = MapParameter::new(alpha)?;
    let b = match b {
        Some(b) => {
            if !(b > 0.0 && b < 0.5) || petite_margin(p, b) <= 0.0 {
                return Err(domain(format!("b = {b} violates f_α(b) > (3+b)/4")));
            }
            b
        }
        None => 0.5 * (petite_threshold(alpha)? + 0.5),
    };
    let c_lo = invert_left_branch(b, p)?;
    let top = 0.5 * (b + 1.0);
    Ok(ChainGeometry {
        b,
        c: Interval::new(c_lo, b)?,
        w: Interval::new(b, top)?,
        h: Interval::new(0.5, top)?,
    })
}

/// Initial points removed from the state space: `0`, `1` and the preimages
/// `1 − 2^{-k}` of `1/2` under the right branch, all trapped at a fixed point.
pub fn check_initial_point(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(domain(format!("initial point {x} outside [0, 1]")));
    }
    let gap = 1.0 - x;
    let dyadic = gap > 0.0 && gap <= 0.5 && gap.log2().fract() == 0.0 && 1.0 - gap == x;
    if x == 0.0 || x == 1.0 || dyadic {
        return Err(domain(format!("initial point {x} is absorbed by a fixed point of the chain")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum HittingKind {
    /// Return time to `C` from `start ∈ C`.
    ReturnToC { start: f64 },
    /// Entry time to `H` from `start` (e.g. `b`).
    EnterH { start: f64 },
    /// Entry time to `W` from `start ∈ C`.
    EnterW { start: f64 },
}

impl HittingKind {
    pub fn start(&self) -> f64 {
        match *self {
            HittingKind::ReturnToC { start } | HittingKind::EnterH { start } | HittingKind::EnterW { start } => start,
        }
    }
}

/// Raw hitting times of `which` over `n_samples` independent chains.
pub fn hitting_times(
    kernel: &PowerLawKernel,
    geometry: &ChainGeometry,
    which: HittingKind,
    n_samples: usize,
    cap: u64,
    master_seed: u64,
    workers: Workers,
) -> Result<ExcursionSample> {
    let x0 = which.start();
    check_initial_point(x0)?;
    let law = Arc::new(kernel.law());
    let g = *geometry;
    let times = map_indexed(workers, n_samples, |i| {
        let mut s = SeededStream::new(master_seed, i as u64, law.clone());
        match which {
            HittingKind::ReturnToC { .. } => hitting_time_where(x0, &mut s, cap, |x| g.in_c(x)),
            HittingKind::EnterH { .. } => hitting_time_where(x0, &mut s, cap, |x| g.in_h(x)),
            HittingKind::EnterW { .. } => hitting_time_where(x0, &mut s, cap, |x| g.in_w(x)),
        }
    });
    let mut values = Vec::with_capacity(n_samples);
    let mut censored = 0;
    for t in times {
        match t {
            Ok(n) => values.push(n as f64),
            Err(_) => censored += 1,
        }
    }
    Ok(ExcursionSample { values, censored, cap })
}

/// Simulates `n_samples` chains from the start point of `which` and reports
/// the survival of the hitting time, with a Hill fit and a log-linear fit of
/// the survival.
pub fn hitting_statistics(
    kernel: &PowerLawKernel,
    geometry: &ChainGeometry,
    which: HittingKind,
    n_samples: usize,
    cap: u64,
    master_seed: u64,
    workers: Workers,
) -> Result<(TailReport, Option<ExponentialFit>)> {
    let sample = hitting_times(kernel, geometry, which, n_samples, cap, master_seed, workers)?;
    let censored = sample.censored;
    let max_val = sample.values.iter().copied().fold(1.0, f64::max) as u64;
    let opts = SimulationOptions {
        cap,
        grid: Some(default_grid(max_val)),
        ..Default::default()
    };
    let report = tail_report_from_sample(&sample, &opts, master_seed)?;
    let exp = exponential_fit(&sample.values, censored, cap, 1e-3).ok();
    Ok((report, exp))
}

/// Linear fit of `ln P(T > t)` against `t` at every integer `t ≥ 1` where
/// the survival exceeds `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub rate: f64,
    pub correlation: f64,
    pub t_max: f64,
}

pub fn exponential_fit(values: &[f64], censored: u64, cap: u64, floor: f64) -> Result<ExponentialFit> {
    let top = values.iter().copied().fold(0.0, f64::max);
    let grid: Vec<f64> = (1..=top as u64).map(|t| t as f64).collect();
    let curve = SurvivalCurve::from_values(values, censored, cap as f64, &grid);
    let (ts, ls): (Vec<f64>, Vec<f64>) = curve
        .grid
        .iter()
        .zip(&curve.survival)
        .filter(|(_, s)| **s > floor)
        .map(|(t, s)| (*t, s.ln()))
        .unzip();
    if ts.len() < 3 {
        return Err(domain("too few survival points for an exponential fit"));
    }
    let f = crate::stats::fit_line(&ts, &ls)?;
    Ok(ExponentialFit {
        rate: -f.slope,
        correlation: crate::stats::pearson(&ts, &ls),
        t_max: *ts.last().unwrap_or(&0.0),
    })
}

/// `K / ((x−b)(log(b/(x−b)))^{1+ε})` averaged over `[lo, hi] ⊂ (b, 1/2)`.
pub fn condrho_bound_average(b: f64, epsilon: f64, k: f64, lo: f64, hi: f64) -> f64 {
    let anti = |x: f64| (b / (x - b)).ln().powf(-epsilon) / epsilon;
    let a = if lo <= b { 0.0 } else { anti(lo) };
    k * (anti(hi) - a) / (hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondrhoReport {
    pub k: f64,
    /// Cells of the initial density above the bound or outside `(b, 1/2)`.
    pub violations: Vec<usize>,
    /// Smallest `σ` with `Pρ ≤ σ·bound(K)` on `(b, 1/2)`.
    pub sigma: f64,
    /// `sup` of `Pρ` on `H`.
    pub h_sup: f64,
}

/// Checks `ρ` against the density class around `b`, evolves it one step and
/// reports the contraction factor of the class bound and the bound on `H`.
pub fn condrho_class_check(op: &ChainOperator, geometry: &ChainGeometry, rho: &DensityVector, k: f64) -> Result<CondrhoReport> {
    let g = &op.grid;
    if !g.edges().contains(&geometry.b) {
        return Err(LabError::GridMismatch("grid must have b as an edge".into()));
    }
    let eps = op.kernel.epsilon();
    let b = geometry.b;
    let in_class_range = |i: usize| {
        let (lo, hi) = g.cell(i);
        lo >= b && hi <= 0.5
    };
    let bound = |i: usize, k: f64| {
        let (lo, hi) = g.cell(i);
        condrho_bound_average(b, eps, k, lo, hi)
    };
    let violations = (0..g.cells())
        .filter(|&i| {
            let v = rho.values[i];
            if in_class_range(i) {
                v > bound(i, k) * (1.0 + 1e-12)
            } else {
                v != 0.0
            }
        })
        .collect();
    let next = op.evolve(rho)?;
    let sigma = (0..g.cells())
        .filter(|&i| in_class_range(i))
        .map(|i| next.values[i] / bound(i, k))
        .fold(0.0, f64::max);
    let h_sup = (0..g.cells())
        .filter(|&i| {
            let (lo, hi) = g.cell(i);
            lo >= 0.5 && hi <= geometry.h.hi() + 1e-15
        })
        .map(|i| next.values[i])
        .fold(0.0, f64::max);
    Ok(CondrhoReport {
        k,
        violations,
        sigma,
        h_sup,
    })
}

/// The extremal member of the class: the bound itself, normalized to mass 1.
pub fn condrho_extremal(grid: Arc<Grid>, b: f64, epsilon: f64) -> (DensityVector, f64) {
    let masses: Vec<f64> = (0..grid.cells())
        .map(|i| {
            let (lo, hi) = grid.cell(i);
            if lo >= b && hi <= 0.5 {
                condrho_bound_average(b, epsilon, 1.0, lo, hi) * (hi - lo)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = masses.iter().sum();
    let normalized: Vec<f64> = masses.iter().map(|m| m / total).collect();
    (DensityVector::from_masses(grid, &normalized), 1.0 / total)
}

/// Inserts `x` as an extra edge.
pub fn grid_with_edge(grid: &Grid, x: f64) -> Result<Grid> {
    let mut e = grid.edges().to_vec();
    if !e.contains(&x) {
        let p = e.partition_point(|&v| v < x);
        e.insert(p, x);
    }
    Grid::from_edges(e)
}
