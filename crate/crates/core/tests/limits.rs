use lsvlab::ensemble::Workers;
use lsvlab::limits::{iqr_growth, ks_shape, phi_y_tail_index, run_limit_experiment, variance_growth, LimitOptions, Regime};
use lsvlab::{Observable, ParamLaw};

fn opts() -> LimitOptions {
    LimitOptions {
        tail_excursions: 200_000,
        ..Default::default()
    }
}

#[test]
fn independent_runs_agree_at_the_noise_floor() {
    let law = ParamLaw::dirac(0.75).unwrap();
    let one = Observable::constant(1.0);
    let a = run_limit_experiment(&law, &one, 1000, 1000, 1, &opts()).unwrap();
    let b = run_limit_experiment(&law, &one, 1000, 1000, 2, &opts()).unwrap();
    let ks = ks_shape(&a.sums, &b.sums);
    assert!(ks < 0.07, "KS between runs {ks}");
}

#[test]
fn gaussian_variance_stabilizes() {
    let law = ParamLaw::dirac(0.3).unwrap();
    let ratio = variance_growth(&law, &Observable::affine(1.0, 1.0), 1000, 2, 1000, 5, Workers::AUTO).unwrap();
    assert!((0.8..=1.25).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn stable_spread_outgrows_square_root_scaling() {
    let law = ParamLaw::dirac(0.75).unwrap();
    let ratio = iqr_growth(&law, &Observable::constant(1.0), 1000, 4, 1000, 6, Workers::AUTO).unwrap();
    assert!(ratio > 1.5, "IQR growth {ratio}");
}

#[test]
fn normalizing_scales_follow_the_regime() {
    let stable = run_limit_experiment(&ParamLaw::dirac(0.75).unwrap(), &Observable::constant(1.0), 200, 200, 3, &opts()).unwrap();
    assert_eq!(stable.regime, Regime::Stable);
    let growth = stable.plan.scale(2000) / stable.plan.scale(1000);
    assert!((growth.log2() - 0.75).abs() < 0.075, "B_2n/B_n = {growth}");

    let gauss = run_limit_experiment(&ParamLaw::dirac(0.3).unwrap(), &Observable::affine(1.0, 1.0), 200, 200, 3, &opts()).unwrap();
    assert_eq!(gauss.regime, Regime::Gaussian);
    let growth = gauss.plan.scale(2000) / gauss.plan.scale(1000);
    assert!((growth - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn negative_observables_flip_sign() {
    let law = ParamLaw::dirac(0.3).unwrap();
    let pos = run_limit_experiment(&law, &Observable::affine(1.0, 1.0), 100, 100, 4, &opts()).unwrap();
    let neg = run_limit_experiment(&law, &Observable::affine(-1.0, -1.0), 100, 100, 4, &opts()).unwrap();
    assert!(!pos.sign_flipped && neg.sign_flipped);
    for (a, b) in pos.sums.iter().zip(&neg.sums) {
        assert_eq!(*a, -*b);
    }
}

#[test]
fn excursion_sum_tail_index() {
    let law = ParamLaw::dirac(0.75).unwrap();
    let t = phi_y_tail_index(&law, &Observable::constant(1.0), 1_000_000, 7, Workers::AUTO).unwrap();
    let h = t.report.hill.unwrap().index;
    assert!((h * 0.75 - 1.0).abs() < 0.1, "index {h}");
}

#[test]
fn doubled_observable_shifts_the_tail_exactly() {
    let law = ParamLaw::dirac(0.75).unwrap();
    let t = phi_y_tail_index(&law, &Observable::constant(2.0), 100_000, 8, Workers::AUTO).unwrap();
    assert!(!t.ratio.is_empty());
    assert!(t.ratio.iter().all(|(_, r)| (r - 1.0).abs() < 1e-12));
}
