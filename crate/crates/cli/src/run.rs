//! Dispatch from a validated configuration to the experiment drivers.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use lsvlab::chain::{
    chain_stationary, default_chain_grid, hitting_statistics, make_geometry, tv_convergence_curve, ChainOperator, DensityVector,
    HittingKind, PowerLawKernel,
};
use lsvlab::ensemble::Workers;
use lsvlab::limits::{run_limit_experiment, LimitOptions, TAIL_FIT_EXCURSIONS};
use lsvlab::map::{distortion, distortion_bound, pullback_interval, Branch};
use lsvlab::orbit::DEFAULT_CAP;
use lsvlab::params::derive_seed;
use lsvlab::tails::{self, SimulationOptions, CENSORING_WARN_FRACTION, INIT_LANE};
use lsvlab::ulam::{self, decade_bins, GridScheme, UlamModel};
use lsvlab::{Interval, LabError, Observable, ParamLaw, Result, SeededStream};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::output::{write_rows, OutputDir};

/// Fixed points for the kernel normalization precheck.
const NORMALIZATION_POINTS: usize = 100;
const NORMALIZATION_TOL: f64 = 1e-8;
const DEFAULT_ORDER: u64 = 16;
const DEFAULT_DEPTH: u64 = 30;

pub struct Outcome {
    pub summary: Value,
    /// Set when more samples hit the cap than the estimators tolerate.
    pub excess_censoring: bool,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    law: ParamLaw,
    phi: Observable,
    seed: u64,
    workers: Workers,
}

impl Ctx<'_> {
    fn size(&self, v: Option<u64>) -> usize {
        v.expect("validated") as usize
    }
}

pub fn execute(cfg: &ExperimentConfig, workers: Workers, out: &mut OutputDir) -> Result<Outcome> {
    let ctx = Ctx {
        cfg,
        law: cfg.law()?,
        phi: Observable::from_spec(&cfg.observable),
        seed: cfg.master_seed,
        workers,
    };
    let mut outcome = match cfg.kind {
        ExperimentKind::Tails => run_tails(&ctx, out)?,
        ExperimentKind::Distortion => run_distortion(&ctx, out)?,
        ExperimentKind::Ulam => run_ulam(&ctx, out)?,
        ExperimentKind::Correlations => run_correlations(&ctx, out)?,
        ExperimentKind::Chain => run_chain(&ctx, out)?,
        ExperimentKind::Limits => run_limits(&ctx, out)?,
        ExperimentKind::Annulus => run_annulus(&ctx, out)?,
    };
    if let Value::Object(map) = &mut outcome.summary {
        map.insert("kind".into(), json!(cfg.kind.name()));
        map.insert("law".into(), serde_json::to_value(&cfg.law)?);
        map.insert("observable".into(), json!(ctx.phi.label()));
        map.insert("excess_censoring".into(), json!(outcome.excess_censoring));
    }
    out.json("summary.json", &outcome.summary)?;
    Ok(outcome)
}

const TAIL_COLUMNS: [(&str, &str, &str); 5] = [
    ("n", "steps", "threshold"),
    ("survivors", "count", "excursions with value above the threshold"),
    ("total", "count", "excursions run"),
    ("censored", "count", "excursions stopped at the cap"),
    ("survival", "probability", "P(value > n) under normalized Lebesgue on [1/2, 1]"),
];

fn run_tails(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome> {
    let opts = SimulationOptions {
        cap: ctx.cfg.sizes.cap.unwrap_or(DEFAULT_CAP),
        workers: ctx.workers,
        ..Default::default()
    };
    let report = tails::tail_via_simulation(&ctx.law, &ctx.phi, ctx.size(ctx.cfg.sizes.samples), ctx.seed, &opts)?;
    out.csv("tails.csv", &TAIL_COLUMNS, |p| report.write_csv(p))?;
    let mut summary = report.summary_json();
    summary["predicted_index"] = json!(1.0 / ctx.law.alpha());
    Ok(Outcome {
        summary,
        excess_censoring: report.excess_censoring,
    })
}

fn run_distortion(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome> {
    let trials = ctx.size(ctx.cfg.sizes.samples);
    let depth = ctx.cfg.sizes.depth.unwrap_or(DEFAULT_DEPTH) as usize;
    let beta = ctx.law.beta();
    let law = Arc::new(ctx.law.clone());
    let rows: Vec<Option<(usize, f64, f64, f64, f64)>> = lsvlab::ensemble::map_indexed(ctx.workers, trials, |i| {
        let mut params = SeededStream::new(ctx.seed, i as u64, law.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, i as u64, INIT_LANE));
        let n = rng.random_range(1..=depth);
        let ps: Vec<_> = (0..n).map(|_| params.sample()).collect();
        let branches: Vec<Branch> = (0..n)
            .map(|_| if rng.random_bool(0.5) { Branch::Left } else { Branch::Right })
            .collect();
        let a = rng.random_range(0.5..1.0);
        let b = rng.random_range(a..=1.0);
        let target = Interval::new(a, b).ok()?;
        let d = pullback_interval(&ps, target, &branches).and_then(|j| distortion(&ps, j)).ok()?;
        Some((n, a, b, d, distortion_bound(beta, target)))
    });
    let kept: Vec<_> = rows.iter().enumerate().filter_map(|(i, r)| r.map(|r| (i, r))).collect();
    let violations = kept.iter().filter(|(_, r)| r.3 > r.4 + 1e-9).count();
    let worst = kept.iter().map(|(_, r)| r.3 - r.4).fold(f64::NEG_INFINITY, f64::max);
    out.csv(
        "distortion.csv",
        &[
            ("trial", "index", "trial number"),
            ("depth", "steps", "length of the parameter sequence"),
            ("target_lo", "x", "left end of the target interval"),
            ("target_hi", "x", "right end of the target interval"),
            (
                "distortion",
                "log ratio",
                "sup of |log (f^n)'(x) − log (f^n)'(y)| over the pulled-back interval",
            ),
            ("bound", "log ratio", "(1 + β)·log(sup/inf of the target)"),
        ],
        |p| {
            write_rows(
                p,
                &["trial", "depth", "target_lo", "target_hi", "distortion", "bound"],
                kept.iter().map(|(i, (n, a, b, d, bound))| {
                    vec![
                        i.to_string(),
                        n.to_string(),
                        format!("{a:e}"),
                        format!("{b:e}"),
                        format!("{d:e}"),
                        format!("{bound:e}"),
                    ]
                }),
            )
        },
    )?;
    Ok(Outcome {
        summary: json!({
            "trials": trials,
            "degenerate": trials - kept.len(),
            "violations": violations,
            "max_excess": worst,
            "beta": beta,
        }),
        excess_censoring: false,
    })
}

fn build_model(ctx: &Ctx) -> Result<UlamModel> {
    ulam::build_ulam(
        &ctx.law,
        ctx.size(ctx.cfg.sizes.cells),
        ctx.cfg.sizes.order.unwrap_or(DEFAULT_ORDER) as usize,
        GridScheme::default(),
    )
}

fn run_ulam(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome> {
    let m = build_model(ctx)?;
    let density = m.density();
    out.csv(
        "density.csv",
        &[
            ("cell_lo", "x", "left cell edge"),
            ("cell_hi", "x", "right cell edge"),
            ("mass", "probability", "stationary mass of the cell"),
            ("density", "1/x", "stationary density, cell average"),
        ],
        |p| {
            write_rows(
                p,
                &["cell_lo", "cell_hi", "mass", "density"],
                (0..m.grid.cells()).map(|i| {
                    let (a, b) = m.grid.cell(i);
                    vec![
                        format!("{a:e}"),
                        format!("{b:e}"),
                        format!("{:e}", m.stationary[i]),
                        format!("{:e}", density[i]),
                    ]
                }),
            )
        },
    )?;
    let bins = decade_bins(1e-4);
    let decades: Vec<Value> = bins
        .windows(2)
        .map(|w| json!({"lo": w[0], "hi": w[1], "mass": m.mass_of(w[0], w[1])}))
        .collect();
    Ok(Outcome {
        summary: json!({
            "cells": m.grid.cells(),
            "stationary_residual": m.residual(),
            "observable_mean": m.stationary_expectation(|x| ctx.phi.eval(x)),
            "decade_masses": decades,
        }),
        excess_censoring: false,
    })
}

fn run_correlations(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome> {
    let m = build_model(ctx)?;
    let mean = m.stationary_expectation(|x| ctx.phi.eval(x));
    let base = ctx.phi.clone();
    let centered = Observable::new(format!("{} − {mean:e}", base.label()), base.lip(), move |x| base.eval(x) - mean);
    let n_max = ctx.cfg.sizes.n_max.expect("validated");
    let series = ulam::correlation_curve_operator(&m, &centered, &centered, n_max);
    let (lo, hi) = ctx.cfg.sizes.lag_range(n_max);
    let fit = ulam::fit_decay(&series, lo, hi, 0.0);
    out.csv(
        "correlations.csv",
        &[
            ("n", "steps", "lag"),
            ("C_n", "observable²", "annealed correlation of the centered observable with itself"),
            ("stderr", "observable²", "standard error (zero for the operator method)"),
        ],
        |p| series.write_csv(p),
    )?;
    Ok(Outcome {
        summary: json!({
            "cells": m.grid.cells(),
            "stationary_mean": mean,
            "slope_fit": fit,
            "predicted_slope": 1.0 - 1.0 / ctx.law.alpha(),
        }),
        excess_censoring: false,
    })
}

fn run_chain(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome> {
    let ParamLaw::PowerLaw { alpha, epsilon } = ctx.law else {
        return Err(LabError::Config("chain experiments need a power_law law".into()));
    };
    let kernel = PowerLawKernel::new(alpha, epsilon)?;
    let (worst_x, defect) = kernel.normalization_check(NORMALIZATION_POINTS);
    if defect > NORMALIZATION_TOL {
        eprintln!("kernel mass at x = {worst_x:e} is off by {defect:e}");
        return Err(LabError::MassDefect { defect });
    }
    let grid = Arc::new(default_chain_grid(ctx.size(ctx.cfg.sizes.cells))?);
    let op = ChainOperator::build(kernel, grid.clone(), ctx.workers)?;
    let (stationary, residual) = chain_stationary(&op)?;
    let n_max = ctx.cfg.sizes.n_max.expect("validated");
    let curve = tv_convergence_curve(&op, &DensityVector::uniform(grid), &stationary, n_max)?;
    let (lo, hi) = ctx.cfg.sizes.lag_range(n_max);
    let fit = curve.fit(lo, hi);
    out.csv(
        "stationary.csv",
        &[
            ("cell_lo", "x", "left cell edge"),
            ("cell_hi", "x", "right cell edge"),
            ("density", "1/x", "stationary density, cell average"),
        ],
        |p| stationary.write_csv(p),
    )?;
    out.csv(
        "tv.csv",
        &[
            ("n", "steps", "iteration"),
            ("tv", "probability", "total variation distance to the stationary density"),
        ],
        |p| curve.write_csv(p),
    )?;
    let geometry = make_geometry(alpha, ctx.cfg.sizes.b)?;
    let mut summary = json!({
        "cells": op.grid.cells(),
        "normalization_defect": defect,
        "stationary_residual": residual,
        "tv_slope_fit": fit,
        "geometry": geometry,
    });
    let mut excess = false;
    if let Some(samples) = ctx.cfg.sizes.samples {
        let cap = ctx.cfg.sizes.cap.unwrap_or(DEFAULT_CAP);
        let which = HittingKind::EnterH { start: geometry.b };
        let (report, exp) = hitting_statistics(&kernel, &geometry, which, samples as usize, cap, ctx.seed, ctx.workers)?;
        excess = report.total > 0 && report.censored as f64 / report.total as f64 > CENSORING_WARN_FRACTION;
        out.csv("hitting.csv", &TAIL_COLUMNS, |p| report.write_csv(p))?;
        summary["hitting"] = json!({
            "target": which,
            "censored": report.censored,
            "exponential_fit": exp,
        });
    }
    Ok(Outcome {
        summary,
        excess_censoring: excess,
    })
}

fn run_limits(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome> {
    let opts = LimitOptions {
        cap: ctx.cfg.sizes.cap.unwrap_or(DEFAULT_CAP),
        tail_excursions: ctx.cfg.sizes.tail_excursions.map_or(TAIL_FIT_EXCURSIONS, |v| v as usize),
        workers: ctx.workers,
        ..Default::default()
    };
    let exp = run_limit_experiment(
        &ctx.law,
        &ctx.phi,
        ctx.size(ctx.cfg.sizes.n),
        ctx.size(ctx.cfg.sizes.blocks),
        ctx.seed,
        &opts,
    )?;
    out.csv(
        "limits.csv",
        &[
            ("block", "index", "independent block"),
            ("normalized_sum_n", "1", "(S_n − A_n)/B_n over n excursions"),
            ("normalized_sum_2n", "1", "(S_2n − A_2n)/B_2n over 2n excursions, disjoint streams"),
        ],
        |p| exp.write_csv(p),
    )?;
    Ok(Outcome {
        summary: exp.summary_json(),
        excess_censoring: false,
    })
}

fn run_annulus(ctx: &Ctx, out: &mut OutputDir) -> Result<Outcome> {
    let n = ctx.cfg.sizes.n.expect("validated");
    let eta = ctx.cfg.sizes.eta.expect("validated");
    let times = tails::annulus_escape_times(n, &ctx.law, ctx.size(ctx.cfg.sizes.samples), ctx.seed, ctx.workers)?;
    let target = tails::annulus_steps(n, &ctx.law);
    let fraction = tails::annulus_fraction(&times, target, eta)?;
    out.csv(
        "annulus.csv",
        &[
            ("run", "index", "independent run"),
            ("steps", "steps", "escape time from the annulus"),
        ],
        |p| {
            write_rows(
                p,
                &["run", "steps"],
                times.iter().enumerate().map(|(i, t)| vec![i.to_string(), t.to_string()]),
            )
        },
    )?;
    Ok(Outcome {
        summary: json!({
            "n": n,
            "annulus": [tails::annulus_edge(n), tails::annulus_edge(n - 1)],
            "expected_steps": target,
            "eta": eta,
            "fraction_within": fraction,
        }),
        excess_censoring: false,
    })
}
