//! Ulam discretization of the annealed transfer operator `P = ∫ P_γ dν(γ)`:
//! cell-to-cell transition matrix, stationary density, correlation curves
//! by operator powers and by direct simulation, and a Lipschitz-seminorm
//! diagnostic for the induced operator.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{map_indexed, Workers};
use crate::error::{domain, LabError, Result};
use crate::map::{invert_left_branch, MapParameter};
use crate::markov::{stationary, SparseRows};
use crate::orbit::{induced_excursion, Observable, DEFAULT_CAP};
use crate::params::{derive_seed, ParamLaw, SeededStream};
use crate::quad::GaussRule;
use crate::stats::{log_grid_int, loglog_slope};
use crate::tails::{SlopeFit, INIT_LANE};

pub const ROW_DEFECT_TOL: f64 = 1e-8;
pub const STATIONARY_TOL: f64 = 1e-8;
const STATIONARY_POLISH: f64 = 1e-10;
const CELL_QUADRATURE: usize = 8;

/// How cell edges are laid out on `[0, 1/2]`; `[1/2, 1]` is always uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GridScheme {
    /// Left-half edges `(j/m)²/2`, `m = cells/2`.
    Quadratic,
    /// First cell `[0, floor]`, geometric edges with ratio `ratio` until the
    /// cell width reaches the uniform width `h`, then uniform to 1 with width `h`.
    Hybrid { floor: f64, ratio: f64 },
}

impl Default for GridScheme {
    fn default() -> Self {
        GridScheme::Hybrid { floor: 1e-12, ratio: 1.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    edges: Vec<f64>,
}

impl Grid {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.len() >= 3
            && edges[0] == 0.0
            && *edges.last().unwrap_or(&0.0) == 1.0
            && edges.windows(2).all(|w| w[1] > w[0])
            && edges.contains(&0.5);
        if !ok {
            return Err(LabError::GridMismatch("edges must increase from 0 to 1 and include 1/2".into()));
        }
        Ok(Self { edges })
    }

    pub fn build(scheme: GridScheme, cells: usize) -> Result<Self> {
        match scheme {
            GridScheme::Quadratic => Self::quadratic(cells),
            GridScheme::Hybrid { floor, ratio } => Self::hybrid(cells, floor, ratio),
        }
    }

    pub fn quadratic(cells: usize) -> Result<Self> {
        if cells < 4 || cells % 2 != 0 {
            return Err(domain(format!("quadratic grid needs an even cell count ≥ 4, got {cells}")));
        }
        let m = cells / 2;
        let mut edges: Vec<f64> = (0..=m).map(|j| 0.5 * (j as f64 / m as f64).powi(2)).collect();
        edges.extend((1..=m).map(|j| 0.5 + 0.5 * j as f64 / m as f64));
        Self::from_edges(edges)
    }

    pub fn hybrid(cells: usize, floor: f64, ratio: f64) -> Result<Self> {
        if !(floor > 0.0 && floor < 1e-3 && ratio > 1.0) {
            return Err(domain(format!(
                "hybrid grid needs 0 < floor < 1e-3 and ratio > 1, got {floor}, {ratio}"
            )));
        }
        let kappa = ratio - 1.0;
        // cell count as a function of the uniform width, decreasing in h
        let layout = |h: f64| {
            let x_s = (h / kappa).min(0.25);
            let n_geo = ((x_s / floor).ln() / ratio.ln()).ceil().max(1.0) as usize;
            let n_right = (0.5 / h).round().max(1.0) as usize;
            let n_uni = ((0.5 - x_s) / h).round().max(1.0) as usize;
            (x_s, n_geo, n_uni, n_right)
        };
        let count = |h: f64| {
            let (_, g, u, r) = layout(h);
            1 + g + u + r
        };
        let (mut lo, mut hi) = (1e-7, 0.1);
        if count(lo) < cells || count(hi) > cells {
            return Err(domain(format!("hybrid grid cannot reach {cells} cells")));
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if count(mid) > cells {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (x_s, n_geo, n_uni, _) = layout(hi);
        let n_right = cells - 1 - n_geo - n_uni;
        if n_right == 0 {
            return Err(domain("hybrid grid left no cells on [1/2, 1]"));
        }
        let mut edges = Vec::with_capacity(cells + 1);
        edges.push(0.0);
        let r = (x_s / floor).powf(1.0 / n_geo as f64);
        edges.extend((0..n_geo).map(|j| floor * r.powi(j as i32)));
        edges.extend((0..n_uni).map(|j| x_s + (0.5 - x_s) * j as f64 / n_uni as f64));
        edges.extend((0..=n_right).map(|j| 0.5 + 0.5 * j as f64 / n_right as f64));
        Self::from_edges(edges)
    }

    pub fn cells(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.edges[i], self.edges[i + 1])
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Index of the cell containing `x` (cells are `[e_i, e_{i+1})`, the last one closed).
    pub fn locate(&self, x: f64) -> usize {
        let p = self.edges.partition_point(|&e| e <= x);
        p.saturating_sub(1).min(self.cells() - 1)
    }

    /// First cell lying in `[1/2, 1]`.
    pub fn half_index(&self) -> usize {
        self.edges.iter().position(|&e| e == 0.5).expect("grid contains 1/2")
    }

    /// `∫_{cell i} g` for each cell.
    pub fn cell_integrals(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let rule = GaussRule::shared(CELL_QUADRATURE);
        (0..self.cells())
            .map(|i| {
                let (a, b) = self.cell(i);
                rule.integrate(a, b, &g)
            })
            .collect()
    }

    /// Cell averages of `g`.
    pub fn cell_averages(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        self.cell_integrals(g)
            .into_iter()
            .enumerate()
            .map(|(i, v)| v / self.width(i))
            .collect()
    }
}

/// Parameter nodes and weights used to average over `ν`.
pub fn parameter_nodes(law: &ParamLaw, order: usize) -> Result<Vec<(MapParameter, f64)>> {
    match law {
        ParamLaw::Atomic(atoms) => atoms.iter().map(|&(w, p)| Ok((MapParameter::new(w)?, p))).collect(),
        ParamLaw::Uniform { alpha, beta } => GaussRule::shared(order)
            .pairs()
            .map(|(u, w)| Ok((MapParameter::new(alpha + (beta - alpha) * u)?, w)))
            .collect(),
        ParamLaw::PowerLaw { .. } => Err(domain(
            "the cell operator needs a law with bounded support; use the power-law chain instead",
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamMeta {
    pub cells: usize,
    pub quadrature_order: usize,
    pub scheme: GridScheme,
    pub law: ParamLaw,
    pub stationary_residual: f64,
}

#[derive(Debug, Clone)]
pub struct UlamModel {
    pub grid: Grid,
    pub matrix: SparseRows,
    pub stationary: Vec<f64>,
    pub meta: UlamMeta,
}

/// Row of a left cell for one parameter: lengths of `[a, b] ∩ f_γ^{-1}(cell_j)`.
fn left_row(grid: &Grid, inv: &[f64], a: f64, b: f64, weight: f64, out: &mut Vec<(usize, f64)>) {
    let w = b - a;
    let mut j = inv.partition_point(|&e| e <= a).saturating_sub(1);
    while j < grid.cells() && inv[j] < b {
        let len = inv[j + 1].min(b) - inv[j].max(a);
        if len > 0.0 {
            out.push((j, weight * len / w));
        }
        j += 1;
    }
}

fn right_row(grid: &Grid, a: f64, b: f64, out: &mut Vec<(usize, f64)>) {
    let (lo, hi) = (2.0 * a - 1.0, 2.0 * b - 1.0);
    let w = hi - lo;
    let mut j = grid.locate(lo);
    while j < grid.cells() && grid.edges()[j] < hi {
        let (c, d) = grid.cell(j);
        let len = d.min(hi) - c.max(lo);
        if len > 0.0 {
            out.push((j, len / w));
        }
        j += 1;
    }
}

/// Transition matrix only, without the stationary vector.
pub fn ulam_matrix(law: &ParamLaw, grid: &Grid, quadrature_order: usize, workers: Workers) -> Result<SparseRows> {
    let nodes = parameter_nodes(law, quadrature_order)?;
    // preimages of every edge under each left branch; the edge 1 pulls back to 1/2
    let inverses: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&(p, _)| {
            grid.edges()
                .iter()
                .map(|&e| if e >= 1.0 { Ok(0.5) } else { invert_left_branch(e, p) })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let half = grid.half_index();
    let rows = map_indexed(workers, grid.cells(), |i| {
        let (a, b) = grid.cell(i);
        let mut row = Vec::new();
        if i < half {
            for (inv, &(_, w)) in inverses.iter().zip(&nodes) {
                left_row(grid, inv, a, b, w, &mut row);
            }
        } else {
            right_row(grid, a, b, &mut row);
        }
        let s: f64 = row.iter().map(|e| e.1).sum();
        if (s - 1.0).abs() > ROW_DEFECT_TOL {
            return Err(LabError::Quadrature { row: i, defect: s - 1.0 });
        }
        row.iter_mut().for_each(|e| e.1 /= s);
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SparseRows::from_rows(grid.cells(), rows))
}

pub fn build_ulam(law: &ParamLaw, cells: usize, quadrature_order: usize, scheme: GridScheme) -> Result<UlamModel> {
    build_ulam_with(law, cells, quadrature_order, scheme, Workers::AUTO)
}

pub fn build_ulam_with(law: &ParamLaw, cells: usize, quadrature_order: usize, scheme: GridScheme, workers: Workers) -> Result<UlamModel> {
    if cells < 64 {
        return Err(domain(format!("need at least 64 cells, got {cells}")));
    }
    let grid = Grid::build(scheme, cells)?;
    let matrix = ulam_matrix(law, &grid, quadrature_order, workers)?;
    let (pi, residual) = stationary(&matrix, STATIONARY_TOL, STATIONARY_POLISH)?;
    Ok(UlamModel {
        meta: UlamMeta {
            cells: grid.cells(),
            quadrature_order,
            scheme,
            law: law.clone(),
            stationary_residual: residual,
        },
        grid,
        matrix,
        stationary: pi,
    })
}

impl UlamModel {
    /// Stationary probability vector over cells.
    pub fn stationary_density(&self) -> &[f64] {
        &self.stationary
    }

    /// Density of the stationary measure w.r.t. Lebesgue, per cell.
    pub fn density(&self) -> Vec<f64> {
        self.stationary.iter().enumerate().map(|(i, p)| p / self.grid.width(i)).collect()
    }

    /// Stationary mass of `[lo, hi]`, splitting boundary cells proportionally.
    pub fn mass_of(&self, lo: f64, hi: f64) -> f64 {
        (0..self.grid.cells())
            .map(|i| {
                let (a, b) = self.grid.cell(i);
                let ov = (b.min(hi) - a.max(lo)).max(0.0);
                self.stationary[i] * ov / (b - a)
            })
            .sum()
    }

    /// `∫ g dπ` with `g` averaged over each cell.
    pub fn stationary_expectation(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.grid.cell_averages(g).iter().zip(&self.stationary).map(|(a, p)| a * p).sum()
    }

    pub fn residual(&self) -> f64 {
        self.matrix.fixed_point_residual(&self.stationary)
    }

    /// Writes `matrix.csv` (row, col, value) and `model.json` (edges, build
    /// parameters, stationary vector) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("matrix.csv"))?;
        w.write_record(["row", "col", "value"])?;
        for (i, j, v) in self.matrix.triplets() {
            w.write_record([i.to_string(), j.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        let header = ModelHeader {
            edges: self.grid.edges().to_vec(),
            meta: self.meta.clone(),
            stationary: self.stationary.clone(),
        };
        let mut f = std::fs::File::create(dir.join("model.json"))?;
        f.write_all(serde_json::to_string(&header)?.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: ModelHeader = serde_json::from_reader(std::fs::File::open(dir.join("model.json"))?)?;
        let grid = Grid::from_edges(header.edges)?;
        let n = grid.cells();
        let mut rows = vec![Vec::new(); n];
        let mut r = csv::Reader::from_path(dir.join("matrix.csv"))?;
        for rec in r.deserialize::<(usize, usize, f64)>() {
            let (i, j, v) = rec?;
            if i >= n || j >= n {
                return Err(LabError::GridMismatch(format!("entry ({i}, {j}) outside {n} cells")));
            }
            rows[i].push((j, v));
        }
        if header.stationary.len() != n {
            return Err(LabError::GridMismatch("stationary vector length differs from cell count".into()));
        }
        Ok(Self {
            grid,
            matrix: SparseRows::from_rows(n, rows),
            stationary: header.stationary,
            meta: header.meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    edges: Vec<f64>,
    meta: UlamMeta,
    stationary: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    OperatorPower,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub n: Vec<u64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub method: CorrelationMethod,
    pub slope: Option<SlopeFit>,
    /// Product of means subtracted from the raw cross-moment.
    pub centering: f64,
}

impl CorrelationSeries {
    pub fn at(&self, lag: u64) -> Option<(f64, f64)> {
        self.n.iter().position(|&m| m == lag).map(|i| (self.value[i], self.stderr[i]))
    }

    /// Uncentered cross-moment `∫ψ d(P^n(φ·m))` at each lag.
    pub fn raw(&self) -> Vec<f64> {
        self.value.iter().map(|v| v + self.centering).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "C_n", "stderr"])?;
        for i in 0..self.n.len() {
            w.write_record([
                self.n[i].to_string(),
                format!("{:e}", self.value[i]),
                format!("{:e}", self.stderr[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Log–log slope of `|C_n|` on log-spaced lags in `[lo, hi]`, skipping
/// values under `floor`.
pub fn fit_decay(series: &CorrelationSeries, lo: u64, hi: u64, floor: f64) -> Option<SlopeFit> {
    let lags = log_grid_int(lo.max(1), hi, 40);
    let (xs, ys): (Vec<f64>, Vec<f64>) = lags
        .iter()
        .filter_map(|&l| series.at(l))
        .zip(&lags)
        .filter(|((v, _), _)| v.abs() > floor)
        .map(|((v, _), &l)| (l as f64, v.abs()))
        .unzip();
    loglog_slope(&xs, &ys).ok().map(|f| SlopeFit {
        slope: f.slope,
        intercept: f.intercept,
        r2: f.r2,
        range: (lo as f64, hi as f64),
    })
}

/// `C_n = ∫ψ d(P^n(φ·m)) − ∫φ dm · ∫ψ dπ` for `n = 0..=n_max`.
pub fn correlation_curve_operator(model: &UlamModel, phi: &Observable, psi: &Observable, n_max: u64) -> CorrelationSeries {
    let grid = &model.grid;
    let mut v = grid.cell_integrals(|x| phi.eval(x));
    let psi_bar = grid.cell_averages(|x| psi.eval(x));
    let mass: f64 = v.iter().sum();
    let psi_pi: f64 = model.stationary.iter().zip(&psi_bar).map(|(p, s)| p * s).sum();
    let scale = v.iter().map(|x| x.abs()).sum::<f64>() * psi_bar.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = 10.0 * 64.0 * f64::EPSILON * scale;

    let mut value = Vec::with_capacity(n_max as usize + 1);
    let mut next = vec![0.0; v.len()];
    for _ in 0..=n_max {
        let c = v.iter().zip(&psi_bar).map(|(a, b)| a * b).sum::<f64>() - mass * psi_pi;
        // constants must cancel to rounding
        value.push(if c.abs() < 64.0 * f64::EPSILON * scale { 0.0 } else { c });
        model.matrix.left_mul_into(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    let mut series = CorrelationSeries {
        n: (0..=n_max).collect(),
        stderr: vec![0.0; value.len()],
        value,
        method: CorrelationMethod::OperatorPower,
        slope: None,
        centering: mass * psi_pi,
    };
    series.slope = fit_decay(&series, (n_max / 10).max(1), n_max, floor);
    series
}

#[derive(Debug, Clone)]
pub struct McCorrelationOptions {
    pub n_samples: usize,
    pub master_seed: u64,
    /// Steps per occupation orbit used for `∫ψ dπ`, after an equal burn-in.
    pub occupation_steps: usize,
    pub occupation_orbits: usize,
    pub workers: Workers,
}

impl Default for McCorrelationOptions {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            master_seed: 0,
            occupation_steps: 1_000_000,
            occupation_orbits: 32,
            workers: Workers::AUTO,
        }
    }
}

const OCCUPATION_LANE: u64 = 2;
const MC_CHUNKS: usize = 256;

/// Long-run occupation average of `g` and the standard error of the
/// per-orbit averages.
pub fn occupation_mean(law: &ParamLaw, g: &Observable, opts: &McCorrelationOptions) -> (f64, f64) {
    let law = Arc::new(law.clone());
    let sums = map_indexed(opts.workers, opts.occupation_orbits, |o| {
        let mut s = SeededStream::with_lane(opts.master_seed, o as u64, OCCUPATION_LANE, law.clone());
        let mut x = 0.5 + 0.4 * (o as f64 + 0.5) / opts.occupation_orbits as f64;
        for _ in 0..opts.occupation_steps {
            x = s.sample().step(x);
        }
        let mut acc = 0.0;
        for _ in 0..opts.occupation_steps {
            x = s.sample().step(x);
            acc += g.eval(x);
        }
        acc / opts.occupation_steps as f64
    });
    let (mean, sd) = crate::stats::mean_sd(&sums);
    (mean, sd / (sums.len() as f64).sqrt())
}

/// Decade bin edges `[lo, 10·lo, …, 1]`.
pub fn decade_bins(lo: f64) -> Vec<f64> {
    let mut e = vec![lo];
    while *e.last().expect("nonempty") * 10.0 < 1.0 - 1e-12 {
        let next = e.last().expect("nonempty") * 10.0;
        e.push(next);
    }
    e.push(1.0);
    e
}

/// Fraction of `steps` orbit points falling in each bin `[e_k, e_{k+1})`,
/// pooled over `orbits` orbits of equal length started in `(1/2, 0.9)`.
pub fn occupation_histogram(law: &ParamLaw, steps: u64, orbits: usize, bins: &[f64], master_seed: u64, workers: Workers) -> Vec<f64> {
    let law = Arc::new(law.clone());
    let per = steps / orbits as u64;
    let counts = map_indexed(workers, orbits, |o| {
        let mut s = SeededStream::with_lane(master_seed, o as u64, OCCUPATION_LANE, law.clone());
        let mut x = 0.5 + 0.4 * (o as f64 + 0.5) / orbits as f64;
        let mut c = vec![0u64; bins.len() - 1];
        for _ in 0..per {
            x = s.sample().step(x);
            let k = bins.partition_point(|&e| e <= x);
            if k >= 1 && k < bins.len() {
                c[k - 1] += 1;
            } else if x == 1.0 {
                c[bins.len() - 2] += 1;
            }
        }
        c
    });
    let total = (per * orbits as u64) as f64;
    (0..bins.len() - 1)
        .map(|k| counts.iter().map(|c| c[k]).sum::<u64>() as f64 / total)
        .collect()
}

/// Mass of each bin under cell masses `m` on `grid`, splitting boundary
/// cells proportionally.
pub fn bin_masses(grid: &Grid, m: &[f64], bins: &[f64]) -> Vec<f64> {
    bins.windows(2)
        .map(|w| {
            (0..grid.cells())
                .map(|i| {
                    let (a, b) = grid.cell(i);
                    let ov = (b.min(w[1]) - a.max(w[0])).max(0.0);
                    m[i] * ov / (b - a)
                })
                .sum()
        })
        .collect()
}

/// Ensemble estimate of `E[φ(x_0)ψ(x_n)] − E[φ(x_0)]·∫ψ dπ`, `x_0 ~ U[0, 1]`,
/// with `∫ψ dπ` from occupation orbits. The error band combines the
/// ensemble error with the occupation-mean error, which dominates when the
/// time average converges slowly (`α > 1/2`).
pub fn correlation_curve_mc(
    law: &ParamLaw,
    phi: &Observable,
    psi: &Observable,
    n_max: u64,
    opts: &McCorrelationOptions,
) -> CorrelationSeries {
    let (psi_pi, psi_pi_se) = occupation_mean(law, psi, opts);
    let law = Arc::new(law.clone());
    let len = n_max as usize + 1;
    let chunks = MC_CHUNKS.min(opts.n_samples.max(1));
    let per = opts.n_samples / chunks;
    let extra = opts.n_samples % chunks;
    let parts = map_indexed(opts.workers, chunks, |c| {
        let count = per + usize::from(c < extra);
        let mut s = SeededStream::new(opts.master_seed, c as u64, law.clone());
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, c as u64, INIT_LANE));
        let mut sum = vec![0.0; len];
        let mut sq = vec![0.0; len];
        let mut phi_sum = 0.0;
        for _ in 0..count {
            let mut x: f64 = rand::Rng::random(&mut init);
            let f0 = phi.eval(x);
            phi_sum += f0;
            for k in 0..len {
                // centered inside the sum to keep the variance estimate honest
                let y = f0 * (psi.eval(x) - psi_pi);
                sum[k] += y;
                sq[k] += y * y;
                x = s.sample().step(x);
            }
        }
        (sum, sq, phi_sum)
    });
    let mut sum = vec![0.0; len];
    let mut sq = vec![0.0; len];
    let mut phi_sum = 0.0;
    for (s, q, p) in parts {
        sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        sq.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
        phi_sum += p;
    }
    let m = opts.n_samples as f64;
    let phi_mean = phi_sum / m;
    let value: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let stderr = value
        .iter()
        .zip(&sq)
        .map(|(mu, q)| {
            let ens = (q / m - mu * mu).max(0.0) / (m - 1.0).max(1.0);
            (ens + (phi_mean * psi_pi_se).powi(2)).sqrt()
        })
        .collect();
    let mut series = CorrelationSeries {
        n: (0..=n_max).collect(),
        value,
        stderr,
        method: CorrelationMethod::MonteCarlo,
        slope: None,
        centering: phi_mean * psi_pi,
    };
    series.slope = fit_decay(&series, (n_max / 10).max(1), n_max, 0.0);
    series
}

/// Lipschitz growth of `P_Y^k ψ` for `k = 1..=k_max`, estimated by pushing
/// weighted uniform samples of `Y` through `k` induced excursions and
/// projecting onto hat functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormReport {
    pub k: Vec<usize>,
    pub seminorm: Vec<f64>,
    pub sup_norm: Vec<f64>,
    /// Seminorm that pure sampling noise would produce at each `k`.
    pub noise_seminorm: Vec<f64>,
    /// `∫_Y P_Y^k ψ dm`
    pub mass: Vec<f64>,
    pub exact_mass: f64,
    /// Least-squares fit `seminorm_k ≈ c·2^{-k} + c′`.
    pub fit_c: f64,
    pub fit_c_prime: f64,
    pub noisy: bool,
    pub censored: u64,
}

#[derive(Debug, Clone)]
pub struct DiagnosticOptions {
    pub samples: usize,
    pub master_seed: u64,
    pub cap: u64,
    pub workers: Workers,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            master_seed: 0,
            cap: DEFAULT_CAP,
            workers: Workers::AUTO,
        }
    }
}

pub fn induced_operator_diagnostic(
    law: &ParamLaw,
    cells: usize,
    k_max: usize,
    psi: &Observable,
    opts: &DiagnosticOptions,
) -> Result<SeminormReport> {
    if !(1..=10).contains(&k_max) || cells < 2 {
        return Err(domain(format!(
            "diagnostic needs 1 ≤ k ≤ 10 and ≥ 2 cells, got k = {k_max}, cells = {cells}"
        )));
    }
    let h = 0.5 / cells as f64;
    let hat_mass = |m: usize| if m == 0 || m == cells { 0.5 * h } else { h };
    let law = Arc::new(law.clone());
    let chunks = MC_CHUNKS.min(opts.samples.max(1));
    let per = opts.samples / chunks;
    let extra = opts.samples % chunks;
    let one = Observable::constant(1.0);
    // per chunk: for every k, Σw·hat and Σw²·hat² at each node
    let parts = map_indexed(opts.workers, chunks, |c| {
        let count = per + usize::from(c < extra);
        let mut s = SeededStream::new(opts.master_seed, c as u64, law.clone());
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, c as u64, INIT_LANE));
        let mut acc = vec![vec![0.0; cells + 1]; k_max];
        let mut acc2 = vec![vec![0.0; cells + 1]; k_max];
        let mut cens = 0u64;
        'sample: for _ in 0..count {
            let y = 0.5 + 0.5 * crate::stats::open_unit(&mut init);
            let w = psi.eval(y);
            let mut x = y;
            for k in 0..k_max {
                match induced_excursion(x, &mut s, &one, opts.cap) {
                    Ok(r) => x = r.x_return,
                    Err(_) => {
                        cens += 1;
                        continue 'sample;
                    }
                }
                let t = ((x - 0.5) / h).clamp(0.0, cells as f64);
                let m = (t.floor() as usize).min(cells - 1);
                let frac = t - m as f64;
                for (node, hw) in [(m, 1.0 - frac), (m + 1, frac)] {
                    acc[k][node] += w * hw;
                    acc2[k][node] += (w * hw).powi(2);
                }
            }
        }
        (acc, acc2, cens)
    });
    let mut acc = vec![vec![0.0; cells + 1]; k_max];
    let mut acc2 = vec![vec![0.0; cells + 1]; k_max];
    let mut censored = 0;
    for (a, a2, c) in parts {
        for k in 0..k_max {
            acc[k].iter_mut().zip(&a[k]).for_each(|(x, y)| *x += y);
            acc2[k].iter_mut().zip(&a2[k]).for_each(|(x, y)| *x += y);
        }
        censored += c;
    }
    let n = opts.samples as f64;
    let mut report = SeminormReport {
        k: (1..=k_max).collect(),
        seminorm: Vec::new(),
        sup_norm: Vec::new(),
        noise_seminorm: Vec::new(),
        mass: Vec::new(),
        exact_mass: GaussRule::shared(16).integrate_composite(0.5, 1.0, 16, |x| psi.eval(x)),
        fit_c: 0.0,
        fit_c_prime: 0.0,
        noisy: false,
        censored,
    };
    for k in 0..k_max {
        // density values at nodes; the sampled measure has total mass |Y| = 1/2
        let dens: Vec<f64> = (0..=cells).map(|m| 0.5 * acc[k][m] / (n * hat_mass(m))).collect();
        let sd: Vec<f64> = (0..=cells).map(|m| 0.5 * acc2[k][m].sqrt() / (n * hat_mass(m))).collect();
        let semi = dens.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
        let noise = sd.windows(2).map(|w| (w[0].powi(2) + w[1].powi(2)).sqrt() / h).fold(0.0, f64::max);
        report.seminorm.push(semi);
        report.noise_seminorm.push(noise);
        report.sup_norm.push(dens.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        report.mass.push(0.5 * acc[k].iter().sum::<f64>() / n);
        if noise > 0.5 * semi {
            report.noisy = true;
        }
    }
    // two-parameter least squares on regressors (2^{-k}, 1)
    let xs: Vec<f64> = report.k.iter().map(|&k| 0.5f64.powi(k as i32)).collect();
    if k_max >= 3 {
        let f = crate::stats::fit_line(&xs, &report.seminorm)?;
        report.fit_c = f.slope;
        report.fit_c_prime = f.intercept;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const COARSE: GridScheme = GridScheme::Hybrid { floor: 1e-8, ratio: 1.2 };

    #[test]
    fn grids_are_valid() {
        let q = Grid::quadratic(2048).unwrap();
        assert_eq!(q.cells(), 2048);
        assert_abs_diff_eq!(q.edges()[1], 0.5 / 1024f64.powi(2), epsilon = 1e-20);
        let h = Grid::hybrid(2048, 1e-12, 1.05).unwrap();
        assert_eq!(h.cells(), 2048);
        assert_eq!(h.edges()[1], 1e-12);
        assert!(h.width(h.half_index()) < 1e-3);
        assert_eq!(h.locate(0.0), 0);
        assert_eq!(h.locate(1.0), 2047);
        assert_eq!(h.locate(0.5), h.half_index());
        assert!(Grid::from_edges(vec![0.0, 0.3, 1.0]).is_err());
        assert!(Grid::quadratic(7).is_err());
    }

    #[test]
    fn right_cells_push_forward_affinely() {
        let m = build_ulam(&ParamLaw::dirac(0.75).unwrap(), 128, 8, GridScheme::Quadratic).unwrap();
        let g = &m.grid;
        for i in g.half_index()..g.cells() {
            let (a, b) = g.cell(i);
            let (lo, hi) = (2.0 * a - 1.0, 2.0 * b - 1.0);
            for (j, v) in m.matrix.row(i) {
                let (c, d) = g.cell(j);
                let exact = (d.min(hi) - c.max(lo)) / (hi - lo);
                assert_abs_diff_eq!(v, exact, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rows_are_stochastic_and_stationary_is_fixed() {
        for law in [
            ParamLaw::dirac(0.5).unwrap(),
            ParamLaw::atomic(vec![(0.5, 0.5), (1.5, 0.5)]).unwrap(),
            ParamLaw::uniform(0.5, 1.5).unwrap(),
        ] {
            let m = build_ulam(&law, 256, 8, COARSE).unwrap();
            for i in 0..m.grid.cells() {
                assert!((m.matrix.row_sum(i) - 1.0).abs() < 1e-10);
            }
            assert_abs_diff_eq!(m.stationary.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(m.stationary.iter().all(|p| *p >= 0.0));
            assert!(m.residual() < 1e-8);
            let h = m.grid.half_index();
            assert!(m.stationary[h..].iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn power_law_is_rejected() {
        let law = ParamLaw::power_law(0.5, 1.0).unwrap();
        assert!(build_ulam(&law, 128, 8, GridScheme::default()).is_err());
        assert!(build_ulam(&ParamLaw::dirac(0.5).unwrap(), 32, 8, GridScheme::default()).is_err());
    }

    #[test]
    fn constants_do_not_correlate() {
        let m = build_ulam(&ParamLaw::dirac(0.75).unwrap(), 256, 8, COARSE).unwrap();
        let c = Observable::constant(2.5);
        let s = correlation_curve_operator(&m, &c, &c, 200);
        assert!(s.value.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lag_zero_is_the_covariance_against_pi() {
        let m = build_ulam(&ParamLaw::dirac(0.75).unwrap(), 256, 8, COARSE).unwrap();
        let phi = Observable::affine(-0.5, 1.0);
        let s = correlation_curve_operator(&m, &phi, &phi, 3);
        // ∫(x−½)² dx − 0 = 1/12, up to the piecewise-constant projection of ψ
        assert!((s.value[0] - 1.0 / 12.0).abs() < 1e-3, "{}", s.value[0]);
    }

    #[test]
    fn save_and_load_round_trip() {
        let m = build_ulam(&ParamLaw::dirac(0.6).unwrap(), 64, 8, GridScheme::Quadratic).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = UlamModel::load(dir.path()).unwrap();
        assert_eq!(back.grid, m.grid);
        assert_eq!(back.meta, m.meta);
        assert_eq!(back.stationary, m.stationary);
        assert_eq!(back.matrix.nnz(), m.matrix.nnz());
        for (a, b) in back.matrix.triplets().zip(m.matrix.triplets()) {
            assert_eq!((a.0, a.1), (b.0, b.1));
            assert!((a.2 - b.2).abs() <= 1e-15 * b.2.abs());
        }
    }

    #[test]
    fn mc_constants_vanish() {
        let law = ParamLaw::dirac(0.75).unwrap();
        let c = Observable::constant(1.0);
        let opts = McCorrelationOptions {
            n_samples: 2000,
            occupation_steps: 1000,
            occupation_orbits: 2,
            ..Default::default()
        };
        let s = correlation_curve_mc(&law, &c, &c, 20, &opts);
        assert!(s.value.iter().all(|v| v.abs() < 1e-12));
    }
}
