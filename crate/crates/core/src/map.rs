//! The intermittent map family `f_ω(x) = x(1 + (2x)^ω)` on `[0, 1/2)`,
//! `2x - 1` on `[1/2, 1]`, with its left-branch inverse, derivative and
//! distortion functionals over compositions.

use serde::{Deserialize, Serialize};

use crate::error::{domain, LabError, Result};

/// Below this the left-branch increment `x(2x)^ω` underflows; points are
/// returned unchanged.
pub const UNDERFLOW_GUARD: f64 = 1e-300;

const INVERSE_MAX_ITER: usize = 200;
const INVERSE_ABS_TOL: f64 = 1e-14;
const DISTORTION_GRID: usize = 64;

/// Exponent `ω > 0` of a single map.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MapParameter(f64);

impl MapParameter {
    pub fn new(omega: f64) -> Result<Self> {
        if omega.is_finite() && omega > 0.0 {
            Ok(Self(omega))
        } else {
            Err(domain(format!("map exponent must be positive and finite, got {omega}")))
        }
    }

    #[inline]
    pub fn omega(self) -> f64 {
        self.0
    }

    /// Unchecked forward map for hot loops. `x` must lie in `[0, 1]`.
    #[inline]
    pub fn step(self, x: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&x), "x = {x}");
        if x >= 0.5 {
            2.0 * x - 1.0
        } else if x < UNDERFLOW_GUARD {
            x
        } else {
            x * (1.0 + (2.0 * x).powf(self.0))
        }
    }

    /// Derivative with `x = 1/2` assigned to the right branch.
    #[inline]
    pub fn slope(self, x: f64) -> f64 {
        if x >= 0.5 {
            2.0
        } else {
            1.0 + (self.0 + 1.0) * (2.0 * x).powf(self.0)
        }
    }

    /// Derivative of the left branch, valid up to and including `1/2⁻`.
    #[inline]
    pub fn left_slope(self, x: f64) -> f64 {
        1.0 + (self.0 + 1.0) * (2.0 * x).powf(self.0)
    }
}

/// A closed subinterval `[lo, hi]` of `[0, 1]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(domain(format!("interval needs 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Half-open membership `[lo, hi)`.
    pub fn contains_half_open(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn log_ratio(&self) -> f64 {
        (self.hi / self.lo).ln()
    }
}

/// Support window `[alpha, beta]` of a parameter law; `beta` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamWindow {
    pub alpha: f64,
    pub beta: f64,
}

impl ParamWindow {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || beta.is_nan() || beta < alpha {
            return Err(domain(format!("parameter window needs 0 < alpha <= beta, got [{alpha}, {beta}]")));
        }
        Ok(Self { alpha, beta })
    }

    /// Whether the stationary-measure and limit-law results apply.
    pub fn has_expanding_minimum(&self) -> bool {
        self.alpha < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    #[inline]
    pub fn of(x: f64) -> Self {
        if x < 0.5 {
            Branch::Left
        } else {
            Branch::Right
        }
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(domain(format!("point {x} outside [0, 1]")))
    }
}

pub fn apply_map(x: f64, p: MapParameter) -> Result<f64> {
    check_unit(x)?;
    Ok(p.step(x))
}

pub fn derivative(x: f64, p: MapParameter) -> Result<f64> {
    check_unit(x)?;
    Ok(p.slope(x))
}

/// Unique `x ∈ [0, 1/2)` with `x(1 + (2x)^ω) = y`.
///
/// The left branch is increasing and convex, so Newton started at the right
/// end of the bracket `[0, min(y, 1/2)]` descends monotonically onto the root;
/// the bracket is kept anyway and bisection takes over whenever a Newton
/// step leaves it.
pub fn invert_left_branch(y: f64, p: MapParameter) -> Result<f64> {
    if !(0.0..1.0).contains(&y) {
        return Err(domain(format!("left branch covers [0, 1), got {y}")));
    }
    if y < UNDERFLOW_GUARD {
        return Ok(y);
    }
    let w = p.omega();
    let residual = |x: f64| x * (1.0 + (2.0 * x).powf(w)) - y;
    let mut lo = 0.0_f64;
    let mut hi = y.min(0.5);
    let mut x = hi;
    for _ in 0..INVERSE_MAX_ITER {
        let r = residual(x);
        if r == 0.0 {
            return Ok(x);
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - r / p.left_slope(x);
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let delta = (next - x).abs();
        x = next;
        if delta <= INVERSE_ABS_TOL.min(4.0 * f64::EPSILON * x) || hi - lo <= 2.0 * f64::EPSILON * hi {
            return Ok(x);
        }
    }
    Err(LabError::NonConvergence {
        iterations: INVERSE_MAX_ITER,
        residual: residual(x).abs(),
    })
}

/// Forward image of `x` under `f_{ω_{n-1}} ∘ … ∘ f_{ω_0}`.
pub fn compose(params: &[MapParameter], x: f64) -> f64 {
    params.iter().fold(x, |acc, p| p.step(acc))
}

/// Interval mapped bijectively onto `target` by the composition, following
/// `branches[i]` at step `i`.
pub fn pullback_interval(params: &[MapParameter], target: Interval, branches: &[Branch]) -> Result<Interval> {
    if params.len() != branches.len() {
        return Err(domain(format!("{} parameters but {} branch labels", params.len(), branches.len())));
    }
    if target.lo() < 0.5 {
        return Err(domain(format!(
            "target must lie in [1/2, 1], got [{}, {}]",
            target.lo(),
            target.hi()
        )));
    }
    let (mut lo, mut hi) = (target.lo(), target.hi());
    for (step, (p, b)) in params.iter().zip(branches).enumerate().rev() {
        match b {
            Branch::Right => {
                lo = 0.5 * (lo + 1.0);
                hi = 0.5 * (hi + 1.0);
            }
            Branch::Left => {
                if hi >= 1.0 {
                    return Err(LabError::EmptyPreimage {
                        step,
                        reason: format!("left branch never reaches {hi}"),
                    });
                }
                lo = invert_left_branch(lo, *p)?;
                hi = invert_left_branch(hi, *p)?;
            }
        }
    }
    Interval::new(lo, hi).map_err(|_| LabError::EmptyPreimage {
        step: 0,
        reason: format!("degenerate preimage [{lo}, {hi}]"),
    })
}

/// `log D f^n(x)` along the orbit together with its branch itinerary.
fn log_derivative(params: &[MapParameter], x: f64, itinerary: &mut Vec<Branch>) -> f64 {
    itinerary.clear();
    let mut acc = 0.0;
    let mut y = x;
    for p in params {
        itinerary.push(Branch::of(y));
        acc += p.slope(y).ln();
        y = p.step(y);
    }
    acc
}

/// Evaluates `log Df^n` on `points`, checking each itinerary against `reference`.
fn profile(params: &[MapParameter], points: &[f64], reference: &[Branch]) -> Result<Vec<f64>> {
    let mut itinerary = Vec::with_capacity(params.len());
    points
        .iter()
        .map(|&x| {
            let v = log_derivative(params, x, &mut itinerary);
            match itinerary.iter().zip(reference).position(|(a, b)| a != b) {
                Some(step) => Err(LabError::CylinderViolation { point: x, step }),
                None => Ok(v),
            }
        })
        .collect()
}

fn spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if lo > 0.0 {
        let ratio = hi / lo;
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    hi
                } else {
                    lo * ratio.powf(k as f64 / (n - 1) as f64)
                }
            })
            .collect()
    } else {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }
}

/// Lower approximation of `sup_{x,y ∈ J} log(Df^n(x) / Df^n(y))`.
///
/// `log Df^n` is sampled on a geometric grid of 64 points; the spread between
/// the largest and smallest sample is refined once on the grid cells adjacent
/// to the extremal samples.
pub fn distortion(params: &[MapParameter], j: Interval) -> Result<f64> {
    if params.is_empty() {
        return Ok(0.0);
    }
    let mut reference = Vec::with_capacity(params.len());
    log_derivative(params, j.lo(), &mut reference);

    let grid = spaced(j.lo(), j.hi(), DISTORTION_GRID);
    let values = profile(params, &grid, &reference)?;
    let (imax, mut vmax) = extremum(&values, |a, b| a > b);
    let (imin, mut vmin) = extremum(&values, |a, b| a < b);

    for (idx, is_max) in [(imax, true), (imin, false)] {
        let a = grid[idx.saturating_sub(1)];
        let b = grid[(idx + 1).min(grid.len() - 1)];
        if b <= a {
            continue;
        }
        let fine = spaced(a, b, DISTORTION_GRID);
        for v in profile(params, &fine, &reference)? {
            if is_max {
                vmax = vmax.max(v);
            } else {
                vmin = vmin.min(v);
            }
        }
    }
    Ok((vmax - vmin).max(0.0))
}

fn extremum(values: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, values[0]), |(bi, bv), (i, v)| if better(v, bv) { (i, v) } else { (bi, bv) })
}

/// Uniform bound `(1 + β) log(sup I' / inf I')` for pullbacks onto `target`.
pub fn distortion_bound(beta: f64, target: Interval) -> f64 {
    (1.0 + beta) * target.log_ratio()
}

/// Return-cylinder constant `2(1 + β)`.
pub fn return_cylinder_constant(beta: f64) -> f64 {
    2.0 * (1.0 + beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn w(o: f64) -> MapParameter {
        MapParameter::new(o).unwrap()
    }

    #[test]
    fn forward_examples() {
        assert_eq!(apply_map(0.0, w(0.7)).unwrap(), 0.0);
        assert_abs_diff_eq!(apply_map(0.25, w(1.0)).unwrap(), 0.375, epsilon = 1e-15);
        assert_eq!(apply_map(0.75, w(2.3)).unwrap(), 0.5);
        assert_eq!(apply_map(0.5, w(0.3)).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(MapParameter::new(0.0).is_err());
        assert!(MapParameter::new(-1.0).is_err());
        assert!(MapParameter::new(f64::NAN).is_err());
        assert!(apply_map(1.5, w(1.0)).is_err());
        assert!(apply_map(-0.1, w(1.0)).is_err());
        assert!(invert_left_branch(1.0, w(1.0)).is_err());
        assert!(invert_left_branch(-0.2, w(1.0)).is_err());
        assert!(Interval::new(0.4, 0.4).is_err());
        assert!(ParamWindow::new(0.0, 1.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(derivative(0.0, w(0.4)).unwrap(), 1.0);
        assert_abs_diff_eq!(derivative(0.25, w(1.0)).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(derivative(0.9, w(5.0)).unwrap(), 2.0);
        assert_eq!(derivative(0.5, w(5.0)).unwrap(), 2.0);
        assert_abs_diff_eq!(w(1.0).left_slope(0.5), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(invert_left_branch(0.0, w(3.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(invert_left_branch(0.375, w(1.0)).unwrap(), 0.25, epsilon = 1e-14);

        // bisection oracle for x(1 + sqrt(2x)) = 1/2
        let g = |x: f64| x * (1.0 + (2.0 * x).sqrt()) - 0.5;
        let (mut a, mut b) = (0.0_f64, 0.5_f64);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if g(m) > 0.0 {
                b = m
            } else {
                a = m
            }
        }
        let x = invert_left_branch(0.5, w(0.5)).unwrap();
        assert_abs_diff_eq!(x, 0.5 * (a + b), epsilon = 1e-14);
        assert_abs_diff_eq!(apply_map(x, w(0.5)).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn inverse_near_fixed_point_and_near_one() {
        for &y in &[1e-250, 1e-40, 1e-12, 1e-5, 0.999_999_999] {
            for &o in &[0.05, 0.75, 1.5, 6.0] {
                let x = invert_left_branch(y, w(o)).unwrap();
                assert!(x < 0.5);
                assert!((w(o).step(x) - y).abs() <= 1e-12 * y.max(1e-300) + 1e-300, "y={y} o={o}");
            }
        }
    }

    #[test]
    fn pullback_examples() {
        let t = Interval::new(0.6, 0.9).unwrap();
        assert_eq!(pullback_interval(&[], t, &[]).unwrap(), t);
        let r = pullback_interval(&[w(1.0)], t, &[Branch::Right]).unwrap();
        assert_abs_diff_eq!(r.lo(), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(r.hi(), 0.95, epsilon = 1e-15);
        let l = pullback_interval(&[w(1.0)], t, &[Branch::Left]).unwrap();
        assert_abs_diff_eq!(l.lo(), invert_left_branch(0.6, w(1.0)).unwrap(), epsilon = 0.0);
        assert_abs_diff_eq!(w(1.0).step(l.hi()), 0.9, epsilon = 1e-12);

        let to_one = Interval::new(0.7, 1.0).unwrap();
        assert!(matches!(
            pullback_interval(&[w(1.0)], to_one, &[Branch::Left]),
            Err(LabError::EmptyPreimage { .. })
        ));
        assert!(pullback_interval(&[w(1.0)], t, &[]).is_err());
    }

    #[test]
    fn distortion_examples() {
        let tiny = Interval::new(0.3, 0.3 + 1e-15).unwrap();
        assert!(distortion(&[w(1.3)], tiny).unwrap() < 1e-12);

        let j = Interval::new(0.3, 0.4).unwrap();
        let exact = (w(0.8).slope(0.4) / w(0.8).slope(0.3)).ln();
        assert_abs_diff_eq!(distortion(&[w(0.8)], j).unwrap(), exact, epsilon = 1e-12);
    }

    #[test]
    fn distortion_rejects_cylinder_crossing() {
        // [0.4, 0.6] straddles the branch point
        let j = Interval::new(0.4, 0.6).unwrap();
        assert!(matches!(distortion(&[w(1.0)], j), Err(LabError::CylinderViolation { .. })));
    }

    #[test]
    fn distortion_of_long_pullback_respects_bound() {
        // brute-force grid of 20k points as the independent check
        let params: Vec<_> = (0..12).map(|i| w(0.5 + (i as f64 * 0.37) % 1.0)).collect();
        let beta = params.iter().map(|p| p.omega()).fold(0.0, f64::max);
        let target = Interval::new(0.6, 0.9).unwrap();
        let branches = vec![Branch::Left; 12];
        let j = pullback_interval(&params, target, &branches).unwrap();
        let d = distortion(&params, j).unwrap();
        let brute = {
            let vals: Vec<f64> = (0..=20_000)
                .map(|k| {
                    let x = j.lo() + j.width() * k as f64 / 20_000.0;
                    let mut y = x;
                    let mut acc = 0.0;
                    for p in &params {
                        acc += p.slope(y).ln();
                        y = p.step(y);
                    }
                    acc
                })
                .collect();
            vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(d >= brute - 1e-9);
        assert!(d <= distortion_bound(beta, target) + 1e-9);
        assert!(d <= distortion_bound(1.5, target));
    }

    proptest! {
        #[test]
        fn branches_are_increasing(o in 0.01f64..8.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(b - a > 1e-12 && Branch::of(a) == Branch::of(b));
            prop_assert!(w(o).step(a) < w(o).step(b));
        }

        #[test]
        fn decreasing_in_parameter(x in 1e-6f64..0.4999, o1 in 0.01f64..6.0, o2 in 0.01f64..6.0) {
            prop_assume!((o1 - o2).abs() > 1e-6);
            let (lo, hi) = if o1 < o2 { (o1, o2) } else { (o2, o1) };
            prop_assert!(w(lo).step(x) > w(hi).step(x));
        }

        #[test]
        fn inverse_round_trip(x in 0.0f64..0.5, o in 0.01f64..8.0) {
            let y = w(o).step(x);
            prop_assume!(y < 1.0);
            let back = invert_left_branch(y, w(o)).unwrap();
            prop_assert!((back - x).abs() <= 1e-12);
            prop_assert!((w(o).step(back) - y).abs() <= 1e-12);
        }

        #[test]
        fn image_stays_in_unit_interval(x in 0.0f64..=1.0, o in 0.01f64..10.0) {
            let y = w(o).step(x);
            prop_assert!((0.0..=1.0).contains(&y));
        }
    }
}
