use std::sync::Arc;

use lsvlab::ensemble::Workers;
use lsvlab::orbit::hitting_time_where;
use lsvlab::stats::mean_sd;
use lsvlab::tails::{compare_reports, escape_proxy_q, simulate_excursions, tail_via_simulation, tail_via_xn, SimulationOptions};
use lsvlab::{Observable, ParamLaw, SeededStream};

fn one() -> Observable {
    Observable::constant(1.0)
}

#[test]
fn proxy_tracks_the_median_escape_time() {
    for law in [ParamLaw::dirac(0.75).unwrap(), ParamLaw::uniform(0.6, 1.0).unwrap()] {
        let shared = Arc::new(law.clone());
        for x in [1e-4, 1e-3, 1e-2] {
            let q = escape_proxy_q(x, &law, &one()).unwrap();
            let mut times: Vec<u64> = (0..2001)
                .map(|i| {
                    let mut s = SeededStream::new(5, i, shared.clone());
                    hitting_time_where(x, &mut s, 1 << 40, |y| y >= 0.5).unwrap()
                })
                .collect();
            times.sort_unstable();
            let median = times[1000] as f64;
            assert!((median / q - 1.0).abs() < 0.2, "x = {x}: q = {q}, median = {median}");
        }
    }
}

#[test]
fn preimage_decay_for_a_single_atom() {
    let r = tail_via_xn(&ParamLaw::dirac(0.75).unwrap(), 1000, 1, 1, Workers::AUTO).unwrap();
    assert_eq!(r.survival[0], 0.5);
    let slope = r.slope_fit.unwrap().slope;
    assert!((slope + 4.0 / 3.0).abs() < 0.1, "slope {slope}");
}

#[test]
fn preimage_and_simulation_slopes_agree_for_a_uniform_law() {
    let law = ParamLaw::uniform(0.6, 1.5).unwrap();
    let xn = tail_via_xn(&law, 1000, 2000, 1, Workers::AUTO).unwrap();
    let opts = SimulationOptions {
        slope_range: Some((10.0, 1000.0)),
        ..Default::default()
    };
    let sim = tail_via_simulation(&law, &one(), 400_000, 3, &opts).unwrap();
    let (a, b) = (xn.slope_fit.unwrap().slope, sim.slope_fit.unwrap().slope);
    assert!((a - b).abs() < 0.1, "preimage {a}, simulation {b}");
}

#[test]
fn two_estimators_agree_for_a_single_atom() {
    let law = ParamLaw::dirac(0.75).unwrap();
    let sim = tail_via_simulation(&law, &one(), 1_000_000, 8, &SimulationOptions::default()).unwrap();
    let xn = tail_via_xn(&law, 1000, 1, 1, Workers::AUTO).unwrap();
    let ag = compare_reports(&sim, &xn, (10.0, 1000.0));
    assert!(ag.n.len() > 10);
    assert!(ag.max_z < 3.0, "max z {}", ag.max_z);
}

#[test]
fn light_tail_at_small_parameter() {
    let law = ParamLaw::dirac(0.3).unwrap();
    let r = tail_via_simulation(&law, &one(), 1_000_000, 3, &SimulationOptions::default()).unwrap();
    let h = r.hill.unwrap().index;
    assert!((h * 0.3 - 1.0).abs() < 0.1, "hill {h}");

    let sample = simulate_excursions(&law, &one(), 1_000_000, 3, 1 << 30, Workers::AUTO);
    let var = |xs: &[f64]| mean_sd(xs).1.powi(2);
    let full = var(&sample.values);
    for quarter in sample.values.chunks(250_000) {
        let v = var(quarter);
        assert!((v / full - 1.0).abs() < 0.25, "quarter variance {v} vs {full}");
    }
}

#[test]
fn constant_observables_scale_return_times() {
    let law = ParamLaw::uniform(0.6, 1.2).unwrap();
    let a = simulate_excursions(&law, &one(), 5000, 2, 1 << 30, Workers::AUTO);
    let b = simulate_excursions(&law, &Observable::constant(2.5), 5000, 2, 1 << 30, Workers::AUTO);
    assert_eq!(a.values.len(), b.values.len());
    for (t, p) in a.values.iter().zip(&b.values) {
        assert_eq!(2.5 * t, *p);
    }
}

#[test]
fn survival_is_monotone_and_starts_at_one() {
    let r = tail_via_simulation(&ParamLaw::dirac(0.9).unwrap(), &one(), 20_000, 4, &SimulationOptions::default()).unwrap();
    assert_eq!(r.grid[0], 0.0);
    assert_eq!(r.survival[0], 1.0);
    assert!(r.survival.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.hill.unwrap().index > 0.0);
}
