//! Fibre orbits of the skew product `F(ω, x) = (σω, f_{ω_0} x)`, first returns
//! to `Y = [1/2, 1]` and Birkhoff sums of observables along excursions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, LabError, Result};
use crate::map::Interval;
use crate::params::SeededStream;

pub const DEFAULT_CAP: u64 = 100_000_000;

/// Lipschitz observable `φ : [0, 1] → ℝ`.
#[derive(Clone)]
pub struct Observable {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    lip: f64,
    value_at_zero: f64,
    label: String,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("label", &self.label)
            .field("lip", &self.lip)
            .field("value_at_zero", &self.value_at_zero)
            .finish()
    }
}

/// Wire form of an observable in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObservableSpec {
    Constant {
        value: f64,
    },
    /// `a + b·x`
    Affine {
        a: f64,
        b: f64,
    },
    /// `Σ c_k x^k`
    Polynomial {
        coeffs: Vec<f64>,
    },
}

impl Default for ObservableSpec {
    fn default() -> Self {
        ObservableSpec::Constant { value: 1.0 }
    }
}

impl Observable {
    pub fn new(label: impl Into<String>, lip: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let value_at_zero = f(0.0);
        Self {
            eval: Arc::new(f),
            lip,
            value_at_zero,
            label: label.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), 0.0, move |_| c)
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Self::new(format!("{a} + {b}·x"), b.abs(), move |x| a + b * x)
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        // |p'| on [0, 1] is bounded by Σ k|c_k|
        let lip = coeffs.iter().enumerate().map(|(k, c)| k as f64 * c.abs()).sum();
        let label = format!("poly{coeffs:?}");
        Self::new(label, lip, move |x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
    }

    pub fn from_spec(spec: &ObservableSpec) -> Self {
        match spec {
            ObservableSpec::Constant { value } => Self::constant(*value),
            ObservableSpec::Affine { a, b } => Self::affine(*a, *b),
            ObservableSpec::Polynomial { coeffs } => Self::polynomial(coeffs.clone()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn negated(&self) -> Self {
        let inner = self.eval.clone();
        Self::new(format!("-({})", self.label), self.lip, move |x| -inner(x))
    }

    /// Checks `|φ(x) − φ(y)| ≤ lip·|x − y|` on consecutive points of a uniform grid.
    pub fn check_lipschitz(&self, points: usize) -> bool {
        let h = 1.0 / points.max(1) as f64;
        (0..points).all(|k| {
            let (x, y) = (k as f64 * h, (k + 1) as f64 * h);
            (self.eval(x) - self.eval(y)).abs() <= self.lip * h * (1.0 + 1e-9) + 1e-12
        })
    }
}

/// One excursion of the induced system on `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InducedRecord {
    pub tau: u64,
    pub birkhoff: f64,
    pub x_entry: f64,
    pub x_return: f64,
}

/// The step cap was reached; carries what had been accumulated so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Censored {
    pub steps: u64,
    pub birkhoff: f64,
    pub last: f64,
}

impl From<Censored> for LabError {
    fn from(c: Censored) -> Self {
        LabError::ExcessCensoring {
            censored: 1,
            total: c.steps as usize,
        }
    }
}

pub fn run_orbit(x0: f64, stream: &mut SeededStream, n: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(domain(format!("initial point {x0} outside [0, 1]")));
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(x0);
    let mut x = x0;
    for _ in 0..n {
        x = stream.sample().step(x);
        out.push(x);
    }
    Ok(out)
}

/// Iterates from `x_entry ∈ Y` until the orbit is back in `Y`, summing `φ`
/// over the visited points (the entry point included, the return point not).
/// Exactly `tau` parameters are drawn from the stream.
pub fn induced_excursion(
    x_entry: f64,
    stream: &mut SeededStream,
    phi: &Observable,
    cap: u64,
) -> std::result::Result<InducedRecord, Censored> {
    debug_assert!((0.5..=1.0).contains(&x_entry), "entry {x_entry} not in Y");
    let mut x = x_entry;
    let mut sum = 0.0;
    let mut tau = 0u64;
    loop {
        sum += phi.eval(x);
        x = stream.sample().step(x);
        tau += 1;
        if x >= 0.5 {
            return Ok(InducedRecord {
                tau,
                birkhoff: sum,
                x_entry,
                x_return: x,
            });
        }
        if tau >= cap {
            return Err(Censored {
                steps: tau,
                birkhoff: sum,
                last: x,
            });
        }
    }
}

/// Return time only, for `φ ≡ 1` runs where the observable is irrelevant.
pub fn return_time(x_entry: f64, stream: &mut SeededStream, cap: u64) -> std::result::Result<(u64, f64), Censored> {
    let mut x = x_entry;
    let mut tau = 0u64;
    loop {
        x = stream.sample().step(x);
        tau += 1;
        if x >= 0.5 {
            return Ok((tau, x));
        }
        if tau >= cap {
            return Err(Censored {
                steps: tau,
                birkhoff: tau as f64,
                last: x,
            });
        }
    }
}

/// Least `n ≥ 1` with `X_n` satisfying `hit`.
pub fn hitting_time_where(x0: f64, stream: &mut SeededStream, cap: u64, hit: impl Fn(f64) -> bool) -> std::result::Result<u64, Censored> {
    let mut x = x0;
    for n in 1..=cap {
        x = stream.sample().step(x);
        if hit(x) {
            return Ok(n);
        }
    }
    Err(Censored {
        steps: cap,
        birkhoff: cap as f64,
        last: x,
    })
}

pub fn hitting_time(x0: f64, stream: &mut SeededStream, target: Interval, cap: u64) -> std::result::Result<u64, Censored> {
    hitting_time_where(x0, stream, cap, |x| target.contains(x))
}

/// Chains `n` excursions, feeding each return point forward.
pub fn induced_chain(
    n: usize,
    stream: &mut SeededStream,
    phi: &Observable,
    x_init: f64,
    cap: u64,
) -> std::result::Result<Vec<InducedRecord>, (Vec<InducedRecord>, Censored)> {
    let mut out = Vec::with_capacity(n);
    let mut x = x_init;
    for _ in 0..n {
        match induced_excursion(x, stream, phi, cap) {
            Ok(rec) => {
                x = rec.x_return;
                out.push(rec);
            }
            Err(c) => return Err((out, c)),
        }
    }
    Ok(out)
}

/// Partial sums `S^k φ_Y`, `k = 1..=n`.
pub fn birkhoff_sums_induced(
    n: usize,
    stream: &mut SeededStream,
    phi: &Observable,
    x_init: f64,
    cap: u64,
) -> std::result::Result<Vec<f64>, (Vec<f64>, Censored)> {
    let cumulate = |recs: &[InducedRecord]| {
        recs.iter()
            .scan(0.0, |acc, r| {
                *acc += r.birkhoff;
                Some(*acc)
            })
            .collect::<Vec<_>>()
    };
    match induced_chain(n, stream, phi, x_init, cap) {
        Ok(recs) => Ok(cumulate(&recs)),
        Err((recs, c)) => Err((cumulate(&recs), c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamLaw;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn stream(law: ParamLaw, idx: u64) -> SeededStream {
        SeededStream::new(2024, idx, Arc::new(law))
    }

    #[test]
    fn orbit_examples() {
        let mut s = stream(ParamLaw::uniform(0.5, 1.5).unwrap(), 0);
        assert!(run_orbit(0.0, &mut s, 50).unwrap().iter().all(|&x| x == 0.0));
        let mut s = stream(ParamLaw::dirac(1.0).unwrap(), 0);
        assert_eq!(run_orbit(0.75, &mut s, 2).unwrap(), vec![0.75, 0.5, 0.0]);
        let mut s = stream(ParamLaw::dirac(1.0).unwrap(), 0);
        let o = run_orbit(0.25, &mut s, 1).unwrap();
        assert_abs_diff_eq!(o[1], 0.375, epsilon = 1e-15);
        assert!(run_orbit(1.2, &mut s, 1).is_err());
    }

    #[test]
    fn excursion_examples() {
        let one = Observable::constant(1.0);
        let mut s = stream(ParamLaw::uniform(0.3, 2.0).unwrap(), 1);
        let r = induced_excursion(0.8, &mut s, &one, DEFAULT_CAP).unwrap();
        assert_eq!(r.tau, 1);
        assert_eq!(r.birkhoff, 1.0);
        assert_abs_diff_eq!(r.x_return, 0.6, epsilon = 1e-15);

        let mut s = stream(ParamLaw::dirac(1.0).unwrap(), 1);
        let r = induced_excursion(0.6, &mut s, &one, DEFAULT_CAP).unwrap();
        assert!(r.tau >= 2);
        // 0.2 -> 0.28 -> 0.4368 -> 0.818...
        assert_eq!(r.tau, 4);

        let mut s = stream(ParamLaw::dirac(1.0).unwrap(), 1);
        let deep = induced_excursion(0.5 + 1e-6, &mut s, &one, DEFAULT_CAP).unwrap();
        assert!(deep.tau > 1000, "tau = {}", deep.tau);
        let mut s = stream(ParamLaw::dirac(1.0).unwrap(), 1);
        let shallow = induced_excursion(0.5 + 1e-3, &mut s, &one, DEFAULT_CAP).unwrap();
        assert!(shallow.tau < deep.tau);
    }

    #[test]
    fn excursion_cap_is_reported() {
        let one = Observable::constant(1.0);
        let mut s = stream(ParamLaw::dirac(0.9).unwrap(), 3);
        let c = induced_excursion(0.5 + 1e-12, &mut s, &one, 100).unwrap_err();
        assert_eq!(c.steps, 100);
        assert_eq!(c.birkhoff, 100.0);
    }

    #[test]
    fn hitting_examples() {
        let mut s = stream(ParamLaw::dirac(1.0).unwrap(), 4);
        let t = Interval::new(0.5, 0.65).unwrap();
        assert_eq!(hitting_time(0.8, &mut s, t, 10).unwrap(), 1);
        assert!(hitting_time(0.0, &mut s, t, 1000).is_err());
    }

    #[test]
    fn birkhoff_sums_telescope() {
        let one = Observable::constant(1.0);
        let law = ParamLaw::dirac(0.75).unwrap();
        let mut a = stream(law.clone(), 7);
        let sums = birkhoff_sums_induced(500, &mut a, &one, 0.9, DEFAULT_CAP).unwrap();
        let mut b = stream(law, 7);
        let recs = induced_chain(500, &mut b, &one, 0.9, DEFAULT_CAP).unwrap();
        let total: u64 = recs.iter().map(|r| r.tau).sum();
        assert_eq!(sums[499], total as f64);
        assert_eq!(sums[0], recs[0].birkhoff);
        // the whole chain consumed exactly `total` parameters: replay as a plain orbit
        let mut c = stream(ParamLaw::dirac(0.75).unwrap(), 7);
        let orbit = run_orbit(0.9, &mut c, total as usize).unwrap();
        assert_eq!(orbit[total as usize], recs[499].x_return);
    }

    #[test]
    fn observables() {
        let p = Observable::polynomial(vec![1.0, -2.0, 3.0]);
        assert_abs_diff_eq!(p.eval(0.5), 1.0 - 1.0 + 0.75, epsilon = 1e-15);
        assert_eq!(p.value_at_zero(), 1.0);
        assert!(p.check_lipschitz(1000));
        assert!(Observable::affine(1.0, 1.0).check_lipschitz(1000));
        let bad = Observable::new("wiggle", 1.0, |x| (50.0 * x).sin());
        assert!(!bad.check_lipschitz(1000));
        assert_eq!(Observable::affine(2.0, 1.0).negated().eval(0.5), -2.5);
    }

    proptest! {
        #[test]
        fn excursion_matches_hitting_time(x in 0.5f64..=1.0, idx in 0u64..1000) {
            let law = ParamLaw::uniform(0.4, 1.6).unwrap();
            let one = Observable::constant(1.0);
            let mut a = stream(law.clone(), idx);
            let mut b = stream(law, idx);
            let y = Interval::new(0.5, 1.0).unwrap();
            match (induced_excursion(x, &mut a, &one, 1_000_000), hitting_time(x, &mut b, y, 1_000_000)) {
                (Ok(r), Ok(t)) => {
                    prop_assert_eq!(r.tau, t);
                    prop_assert_eq!(r.birkhoff, r.tau as f64);
                    prop_assert!((0.5..=1.0).contains(&r.x_return));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "excursion and hitting time disagree on censoring"),
            }
        }

        #[test]
        fn orbits_stay_in_unit_interval(x in 0.0f64..=1.0, idx in 0u64..1000) {
            let mut s = stream(ParamLaw::atomic(vec![(0.2, 0.3), (3.0, 0.7)]).unwrap(), idx);
            let o = run_orbit(x, &mut s, 500).unwrap();
            prop_assert!(o.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn smaller_parameters_dominate_on_left_branch(x in 1e-4f64..0.3, idx in 0u64..500) {
            // same uniforms through two ordered laws
            let lo = Arc::new(ParamLaw::uniform(0.3, 0.8).unwrap());
            let hi = Arc::new(ParamLaw::uniform(0.9, 1.4).unwrap());
            let mut a = SeededStream::new(9, idx, lo);
            let mut b = SeededStream::new(9, idx, hi);
            let (mut xa, mut xb) = (x, x);
            for _ in 0..10_000 {
                if xa >= 0.5 || xb >= 0.5 { break; }
                prop_assert!(xa >= xb);
                xa = a.sample().step(xa);
                xb = b.sample().step(xb);
            }
        }
    }
}
