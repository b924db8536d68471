//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsvlab::chain::{self, ChainOperator, DensityVector, HittingKind, PowerLawKernel};
use lsvlab::ensemble::Workers;
use lsvlab::limits::{run_limit_experiment, LimitOptions};
use lsvlab::map::{distortion, distortion_bound, invert_left_branch, pullback_interval, Branch, Interval, MapParameter};
use lsvlab::orbit::Observable;
use lsvlab::params::{empirical_low_fraction, ParamLaw, SeededStream};
use lsvlab::tails::{self, SimulationOptions, TailReport};
use lsvlab::ulam::{self, GridScheme, UlamModel};
use lsvlab::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn check(id: &str, title: &str, limit: Duration, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let t = Instant::now();
    let res = f();
    let elapsed = t.elapsed();
    let (pass, detail) = match res {
        Ok(o) => (o.pass && elapsed <= limit, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let slow = if elapsed > limit { " (over time budget)" } else { "" };
    println!(
        "[{}] {id:>2} {title}: {detail} [{:.1}s{slow}]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

struct Shared {
    tail_sim: Option<TailReport>,
    tail_xn: Option<TailReport>,
    mixture: Option<UlamModel>,
    dirac: Option<UlamModel>,
    chain: Option<ChainOperator>,
}

fn centered_identity(m: &UlamModel) -> Observable {
    let mean = m.stationary_expectation(|x| x);
    Observable::affine(-mean, 1.0)
}

fn main() {
    let mut shared = Shared {
        tail_sim: None,
        tail_xn: None,
        mixture: None,
        dirac: None,
        chain: None,
    };
    let d075 = ParamLaw::dirac(0.75).expect("law");
    let mixture = ParamLaw::atomic(vec![(0.5, 0.5), (1.5, 0.5)]).expect("law");
    let mut results = Vec::new();

    results.push(check("1", "return-time tail, δ_0.75, 10^6 excursions", minutes(5), || {
        let opts = SimulationOptions {
            workers: Workers::single(),
            ..Default::default()
        };
        let r = tails::tail_via_simulation(&d075, &Observable::constant(1.0), 1_000_000, 20_240_101, &opts)?;
        let h = r.hill.clone().expect("hill fit");
        shared.tail_sim = Some(r);
        Ok(outcome(
            (1.20..=1.47).contains(&h.index),
            format!(
                "Hill index {:.4}, 95% CI [{:.3}, {:.3}], k={} (accept [1.20, 1.47])",
                h.index, h.ci_lo, h.ci_hi, h.k
            ),
        ))
    }));

    results.push(check("2", "simulation vs backward-preimage survival", minutes(5), || {
        let xn = tails::tail_via_xn(&d075, 1000, 1, 20_240_102, Workers::AUTO)?;
        let sim = shared.tail_sim.as_ref().expect("criterion 1 ran");
        let ag = tails::compare_reports(sim, &xn, (10.0, 1000.0));
        shared.tail_xn = Some(xn);
        Ok(outcome(
            !ag.n.is_empty() && ag.max_z <= 3.0,
            format!(
                "max |z| = {:.3} over {} grid points in [10, 10^3] (accept ≤ 3)",
                ag.max_z,
                ag.n.len()
            ),
        ))
    }));

    results.push(check("3", "distortion bound, 10^4 random triples", minutes(2), || {
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_103);
        let (mut violations, mut errors, mut worst) = (0usize, 0usize, f64::NEG_INFINITY);
        for _ in 0..10_000 {
            let n = rng.random_range(1..=30);
            let params: Vec<MapParameter> = (0..n)
                .map(|_| MapParameter::new(rng.random_range(0.5..=1.5)).expect("parameter"))
                .collect();
            let branches: Vec<Branch> = (0..n)
                .map(|_| if rng.random_bool(0.5) { Branch::Left } else { Branch::Right })
                .collect();
            let a = rng.random_range(0.5..1.0);
            let b = rng.random_range(a..=1.0);
            let Ok(target) = Interval::new(a, b) else {
                errors += 1;
                continue;
            };
            let d = pullback_interval(&params, target, &branches).and_then(|j| distortion(&params, j));
            match d {
                Ok(d) => {
                    let margin = d - distortion_bound(1.5, target);
                    worst = worst.max(margin);
                    if margin > 1e-9 {
                        violations += 1;
                    }
                }
                Err(_) => errors += 1,
            }
        }
        Ok(outcome(
            violations == 0,
            format!("{violations} violations, {errors} triples rejected as degenerate, max(Dist − bound) = {worst:.3e}"),
        ))
    }));

    results.push(check("4a", "annealed correlation decay, δ_0.75, 2048 cells", minutes(10), || {
        let m = ulam::build_ulam(&d075, 2048, 16, GridScheme::default())?;
        let phi = centered_identity(&m);
        let s = ulam::correlation_curve_operator(&m, &phi, &phi, 10_000);
        let fit = ulam::fit_decay(&s, 100, 10_000, 0.0).expect("slope fit");
        shared.dirac = Some(m);
        Ok(outcome(
            (-0.43..=-0.23).contains(&fit.slope),
            format!("slope {:.4} over [10^2, 10^4], r² {:.4} (accept [−0.43, −0.23])", fit.slope, fit.r2),
        ))
    }));

    results.push(check(
        "4b",
        "annealed correlation decay, ½δ_0.5+½δ_1.5, 2048 cells",
        minutes(10),
        || {
            let m = ulam::build_ulam(&mixture, 2048, 16, GridScheme::default())?;
            let phi = centered_identity(&m);
            let s = ulam::correlation_curve_operator(&m, &phi, &phi, 10_000);
            let fit = ulam::fit_decay(&s, 100, 10_000, 0.0).expect("slope fit");
            shared.mixture = Some(m);
            Ok(outcome(
                (-1.15..=-0.85).contains(&fit.slope),
                format!("slope {:.4} over [10^2, 10^4], r² {:.4} (accept [−1.15, −0.85])", fit.slope, fit.r2),
            ))
        },
    ));

    results.push(check("5", "stationary density vs 10^8-step occupation", minutes(15), || {
        let m = shared.mixture.as_ref().expect("criterion 4b ran");
        let bins = ulam::decade_bins(1e-4);
        let occ = ulam::occupation_histogram(&mixture, 100_000_000, 64, &bins, 20_240_105, Workers::AUTO);
        let model = ulam::bin_masses(&m.grid, m.stationary_density(), &bins);
        let rel: Vec<f64> = occ.iter().zip(&model).map(|(o, u)| (o - u).abs() / u).collect();
        let worst = rel.iter().copied().fold(0.0, f64::max);
        let cells: Vec<String> = bins
            .windows(2)
            .zip(&rel)
            .map(|(w, r)| format!("[{:.0e},{:.0e}) {:.2}%", w[0], w[1], 100.0 * r))
            .collect();
        Ok(outcome(
            worst <= 0.02,
            format!("max rel. dev. {:.3}% (accept ≤ 2%): {}", 100.0 * worst, cells.join(", ")),
        ))
    }));

    results.push(check("6", "power-law chain TV decay, α=0.5, ε=1", minutes(15), || {
        let k = PowerLawKernel::new(0.5, 1.0)?;
        let (x_worst, defect) = k.normalization_check(100);
        let grid = Arc::new(chain::default_chain_grid(2048)?);
        let op = ChainOperator::build(k, grid.clone(), Workers::AUTO)?;
        let (pi, res) = chain::chain_stationary(&op)?;
        let curve = chain::tv_convergence_curve(&op, &DensityVector::uniform(grid), &pi, 10_000)?;
        let fit = curve.fit(100, 10_000).expect("slope fit");
        shared.chain = Some(op);
        Ok(outcome(
            defect <= 1e-8 && fit.slope <= -0.85,
            format!(
                "normalization defect {defect:.2e} (worst x={x_worst:.3e}, accept ≤ 1e−8); TV slope {:.4} over [10^2, 10^4] (accept ≤ −0.85); TV(10^2)={:.3e}, TV(10^4)={:.3e}; fixed-point residual {res:.1e}",
                fit.slope, curve.tv[100], curve.tv[10_000]
            ),
        ))
    }));

    results.push(check("7", "exponential τ_H tail from x=b", minutes(15), || {
        let k = PowerLawKernel::new(0.5, 1.0)?;
        let g = chain::make_geometry(0.5, None)?;
        let (_, exp) = chain::hitting_statistics(
            &k,
            &g,
            HittingKind::EnterH { start: g.b },
            100_000,
            100_000_000,
            20_240_107,
            Workers::AUTO,
        )?;
        let exp = exp.expect("exponential fit");
        Ok(outcome(
            exp.correlation.abs() > 0.99,
            format!(
                "b={:.4}, corr(log S, t) = {:.4} over t ∈ [1, {}] (accept |r| > 0.99), rate {:.3}/step",
                g.b, exp.correlation, exp.t_max, exp.rate
            ),
        ))
    }));

    results.push(check("8", "Gaussian regime, α=0.3, φ=1+x", minutes(15), || {
        let e = run_limit_experiment(
            &ParamLaw::dirac(0.3)?,
            &Observable::affine(1.0, 1.0),
            10_000,
            1000,
            20_240_108,
            &LimitOptions::default(),
        )?;
        Ok(outcome(
            e.ks_gaussian < 0.05,
            format!(
                "KS to fitted normal {:.4} (accept < 0.05); fitted tail index {:.3}",
                e.ks_gaussian, e.plan.tail_index
            ),
        ))
    }));

    results.push(check("9", "stable regime, α=0.75, φ≡1", minutes(15), || {
        let e = run_limit_experiment(&d075, &Observable::constant(1.0), 10_000, 1000, 20_240_109, &LimitOptions::default())?;
        let oracle = e.ks_oracle.expect("stable regime");
        Ok(outcome(
            oracle < 0.07 && e.ks_gaussian > 0.15 && e.ks_selfsim < 0.07,
            format!(
                "KS to Pareto-sum oracle {oracle:.4} (accept < 0.07); Gaussian KS {:.4} (accept > 0.15); self-similarity KS {:.4} (accept < 0.07)",
                e.ks_gaussian, e.ks_selfsim
            ),
        ))
    }));

    results.push(check("10", "escape-time concentration, U[0.5,1], n=100", minutes(5), || {
        let law = ParamLaw::uniform(0.5, 1.0)?;
        let frac = tails::annulus_concentration(100, &law, 10_000, 0.5, 20_240_110, Workers::AUTO)?;
        Ok(outcome(
            frac >= 0.95,
            format!(
                "fraction within [(1−η)N, (1+η)N] = {frac:.4}, N_100 = {:.3} (accept ≥ 0.95)",
                tails::annulus_steps(100, &law)
            ),
        ))
    }));

    results.push(check("11", "property suites", minutes(10), || property_suites(&shared)));

    // context for criteria 6 and 7, not a criterion itself
    let k = PowerLawKernel::new(0.5, 1.0).expect("kernel");
    let g = chain::make_geometry(0.5, None).expect("geometry");
    let t = Instant::now();
    let mut parts = Vec::new();
    for (label, start) in [
        ("0.7·b+0.3·c", 0.7 * g.b + 0.3 * g.c.lo()),
        ("0.9·b+0.1·c", 0.9 * g.b + 0.1 * g.c.lo()),
        ("b", g.b),
    ] {
        if let Ok((r, _)) = chain::hitting_statistics(
            &k,
            &g,
            HittingKind::ReturnToC { start },
            100_000,
            100_000_000,
            20_240_112,
            Workers::AUTO,
        ) {
            if let Some(h) = r.hill {
                parts.push(format!("{label}: {:.3}", h.index));
            }
        }
    }
    println!(
        "[INFO] τ_C Hill index from points of C (reference 1/α·0.85 = 1.7): {} [{:.1}s]",
        parts.join(", "),
        t.elapsed().as_secs_f64()
    );

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}

fn property_suites(shared: &Shared) -> Result<Outcome> {
    let mut failures: Vec<String> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_111);

    // map round-trips
    let mut bad = 0;
    for _ in 0..10_000 {
        let x: f64 = rng.random_range(0.0..0.5);
        let p = MapParameter::new(rng.random_range(0.01..8.0))?;
        let y = p.step(x);
        if y < 1.0 {
            let back = invert_left_branch(y, p)?;
            if (back - x).abs() > 1e-12 {
                bad += 1;
            }
        }
    }
    if bad > 0 {
        failures.push(format!("{bad} left-branch round trips off by > 1e−12"));
    }

    // row-stochasticity
    let mut rows = 0usize;
    for m in [shared.dirac.as_ref(), shared.mixture.as_ref()].into_iter().flatten() {
        rows += (0..m.matrix.dim()).filter(|&i| (m.matrix.row_sum(i) - 1.0).abs() > 1e-8).count();
    }
    if let Some(op) = shared.chain.as_ref() {
        rows += (0..op.matrix.dim()).filter(|&i| (op.matrix.row_sum(i) - 1.0).abs() > 1e-8).count();
    }
    if rows > 0 {
        failures.push(format!("{rows} rows off stochastic by > 1e−8"));
    }

    // mass conservation of density evolution
    if let Some(op) = shared.chain.as_ref() {
        let path = chain::evolve_path(op, &DensityVector::uniform(op.grid.clone()), 200)?;
        let drift = path.iter().map(|d| (d.total_mass() - 1.0).abs()).fold(0.0, f64::max);
        if drift > 1e-8 || path.iter().any(|d| d.values.iter().any(|v| *v < 0.0)) {
            failures.push(format!("density evolution drifted by {drift:.2e} or went negative"));
        }
    }

    // survival monotonicity
    for r in [shared.tail_sim.as_ref(), shared.tail_xn.as_ref()].into_iter().flatten() {
        if r.survival.windows(2).any(|w| w[1] > w[0]) {
            failures.push(format!("{:?} survival curve increases", r.source));
        }
    }

    // sampler tail matching
    let laws = [
        (ParamLaw::dirac(0.75)?, 0.75),
        (ParamLaw::uniform(0.5, 1.5)?, 0.8),
        (ParamLaw::atomic(vec![(0.5, 0.25), (1.5, 0.75)])?, 1.0),
        (ParamLaw::power_law(0.5, 1.0)?, 2.0),
    ];
    for (i, (law, cut)) in laws.iter().enumerate() {
        let n = 200_000;
        let mut s = SeededStream::new(20_240_111, i as u64, Arc::new(law.clone()));
        let emp = empirical_low_fraction(&mut s, n, *cut)?;
        let exact = law.mass_up_to(*cut);
        let se = (exact * (1.0 - exact) / n as f64).sqrt().max(1e-12);
        if (emp - exact).abs() > 4.0 * se + 1e-12 {
            failures.push(format!("sampler for {law:?}: P(ω ≤ {cut}) = {emp:.5} vs {exact:.5}"));
        }
    }

    // stream determinism across worker counts
    let law = ParamLaw::uniform(0.5, 1.0)?;
    let a = tails::simulate_excursions(&law, &Observable::affine(1.0, 1.0), 20_000, 77, 1_000_000, Workers(1));
    let b = tails::simulate_excursions(&law, &Observable::affine(1.0, 1.0), 20_000, 77, 1_000_000, Workers(5));
    if a.values != b.values {
        failures.push("excursion samples depend on the worker count".into());
    }
    let k = PowerLawKernel::new(0.5, 1.0)?;
    let g = chain::make_geometry(0.5, None)?;
    let h1 = chain::hitting_times(&k, &g, HittingKind::EnterH { start: g.b }, 5000, 1_000_000, 78, Workers(1))?;
    let h3 = chain::hitting_times(&k, &g, HittingKind::EnterH { start: g.b }, 5000, 1_000_000, 78, Workers(3))?;
    if h1.values != h3.values {
        failures.push("chain hitting times depend on the worker count".into());
    }

    Ok(outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "round trips, row sums, mass, survival monotonicity, sampler tails, worker determinism: 0 failures".into()
        } else {
            failures.join("; ")
        },
    ))
}
