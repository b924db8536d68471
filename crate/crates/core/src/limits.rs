//! Distributional limits of induced Birkhoff sums `S^n φ_Y`: normalization
//! from a tail fit, block experiments, a Pareto-sum oracle for the one-sided
//! stable law and shape comparisons by Kolmogorov–Smirnov distance.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{map_indexed, Workers};
use crate::error::{domain, LabError, Result};
use crate::orbit::{induced_chain, Observable, DEFAULT_CAP};
use crate::params::{derive_seed, ParamLaw, SeededStream};
use crate::stats::{ks_one_sample, ks_two_sample, mean_sd, median, normal_cdf, open_unit, quantile};
use crate::tails::{simulate_excursions, tail_report_from_sample, SimulationOptions, TailReport, INIT_LANE};

pub const MIN_BLOCKS: usize = 1000;
pub const TAIL_FIT_EXCURSIONS: usize = 1_000_000;
/// Stream index offsets keeping the `n`, `2n` and tail-fit runs disjoint.
const DOUBLED_OFFSET: u64 = 1 << 40;
const TAIL_SEED_LANE: u64 = 0x7a11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Gaussian,
    Stable,
}

impl Regime {
    /// `α < 1/2` gives a finite second moment of `φ_Y`.
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        if alpha == 0.5 {
            return Err(domain("α = 1/2 is excluded: the case α=1/2 is not addressed"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(domain(format!("limit laws need 0 < α < 1, got {alpha}")));
        }
        Ok(if alpha < 0.5 { Regime::Gaussian } else { Regime::Stable })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPlan {
    /// Tail index `p` of `φ_Y` used for the scale.
    pub tail_index: f64,
    /// `c_L` in `P(φ_Y > t) ≈ c_L·t^{-p}`.
    pub tail_constant: f64,
    pub mean: f64,
    pub sd: f64,
    /// Either `"tail-fit"` (`B_n = (c_L n)^{1/p}`) or `"moments"` (`B_n = √n·sd`).
    pub scale_rule: String,
}

impl NormalizationPlan {
    pub fn scale(&self, n: usize) -> f64 {
        let n = n as f64;
        if self.scale_rule == "moments" {
            n.sqrt() * self.sd
        } else {
            (self.tail_constant * n).powf(1.0 / self.tail_index)
        }
    }

    pub fn centering(&self, n: usize) -> f64 {
        n as f64 * self.mean
    }

    pub fn normalize(&self, n: usize, sum: f64) -> f64 {
        (sum - self.centering(n)) / self.scale(n)
    }
}

/// Solves `n c_L = B^p` from the Hill fit of `tail`, or uses `√n·sd`
/// when the fitted index exceeds 2.
pub fn plan_normalization(tail: &TailReport, mean: f64, sd: f64) -> Result<NormalizationPlan> {
    let hill = tail
        .hill
        .as_ref()
        .ok_or_else(|| domain("normalization needs a fitted tail index"))?;
    let scale_rule = if hill.index > 2.0 { "moments" } else { "tail-fit" };
    if scale_rule == "tail-fit" && !(hill.tail_constant > 0.0) {
        return Err(domain("tail constant must be positive"));
    }
    Ok(NormalizationPlan {
        tail_index: hill.index,
        tail_constant: hill.tail_constant,
        mean,
        sd,
        scale_rule: scale_rule.into(),
    })
}

/// `(x − median)/IQR`.
pub fn standardize_robust(xs: &[f64]) -> Vec<f64> {
    let m = median(xs);
    let iqr = quantile(xs, 0.75) - quantile(xs, 0.25);
    xs.iter().map(|x| (x - m) / iqr).collect()
}

/// `(x − mean)/sd`.
pub fn standardize_moments(xs: &[f64]) -> Vec<f64> {
    let (m, s) = mean_sd(xs);
    xs.iter().map(|x| (x - m) / s).collect()
}

/// KS distance to the normal law with mean and variance fitted to `xs`.
pub fn ks_to_fitted_normal(xs: &[f64]) -> f64 {
    ks_one_sample(&standardize_moments(xs), normal_cdf)
}

/// KS distance between two samples after median/IQR standardization of each.
pub fn ks_shape(a: &[f64], b: &[f64]) -> f64 {
    ks_two_sample(&standardize_robust(a), &standardize_robust(b))
}

/// Normalized sums `(Σ X_i − n·p/(p−1)) / n^{1/p}` of i.i.d. Pareto variables
/// `P(X > t) = t^{-p}`, `t ≥ 1`.
pub fn stable_oracle_samples(p: f64, n_terms: usize, n_samples: usize, master_seed: u64, workers: Workers) -> Result<Vec<f64>> {
    if !(p > 1.0 && p < 2.0) {
        return Err(domain(format!("oracle index must lie in (1, 2), got {p}")));
    }
    let mean = p / (p - 1.0);
    let scale = (n_terms as f64).powf(1.0 / p);
    Ok(map_indexed(workers, n_samples, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, i as u64, 0));
        let s: f64 = (0..n_terms).map(|_| open_unit(&mut rng).powf(-1.0 / p)).sum();
        (s - n_terms as f64 * mean) / scale
    }))
}

/// Sample skewness.
pub fn skewness(xs: &[f64]) -> f64 {
    let (m, s) = mean_sd(xs);
    xs.iter().map(|x| ((x - m) / s).powi(3)).sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone)]
pub struct LimitOptions {
    pub cap: u64,
    pub tail_excursions: usize,
    pub oracle_samples: usize,
    pub workers: Workers,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            tail_excursions: TAIL_FIT_EXCURSIONS,
            oracle_samples: 10_000,
            workers: Workers::AUTO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitExperiment {
    pub law: ParamLaw,
    pub observable: String,
    pub regime: Regime,
    pub n: usize,
    pub n_blocks: usize,
    pub plan: NormalizationPlan,
    /// `(S^n φ_Y − A_n)/B_n`, one per block, for the observable as given.
    pub sums: Vec<f64>,
    /// The same at `2n` on disjoint streams.
    pub sums_doubled: Vec<f64>,
    pub ks_gaussian: f64,
    pub ks_selfsim: f64,
    /// KS distance to the Pareto-sum oracle with `p = 1/α` (stable regime).
    pub ks_oracle: Option<f64>,
    /// `Var(S^{2n}φ_Y)/(2n)` over `Var(S^n φ_Y)/n`.
    pub variance_ratio: f64,
    pub sign_flipped: bool,
    pub warnings: Vec<String>,
}

impl LimitExperiment {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["block", "normalized_sum_n", "normalized_sum_2n"])?;
        for (i, (a, b)) in self.sums.iter().zip(&self.sums_doubled).enumerate() {
            w.write_record([i.to_string(), format!("{a:e}"), format!("{b:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "regime": self.regime,
            "n": self.n,
            "n_blocks": self.n_blocks,
            "observable": self.observable,
            "tail_index": self.plan.tail_index,
            "tail_constant": self.plan.tail_constant,
            "scale_rule": self.plan.scale_rule,
            "ks_gaussian": self.ks_gaussian,
            "ks_selfsim": self.ks_selfsim,
            "ks_oracle": self.ks_oracle,
            "variance_ratio": self.variance_ratio,
            "sign_flipped": self.sign_flipped,
            "warnings": self.warnings,
        })
    }
}

/// `S^n φ_Y` for `blocks` induced chains, stream `offset + b` for block `b`,
/// each started at a uniform point of `Y`.
pub fn block_sums(
    law: &ParamLaw,
    phi: &Observable,
    n: usize,
    blocks: usize,
    master_seed: u64,
    offset: u64,
    cap: u64,
    workers: Workers,
) -> Result<Vec<f64>> {
    let law = Arc::new(law.clone());
    let sums = map_indexed(workers, blocks, |b| {
        let idx = offset + b as u64;
        let mut stream = SeededStream::new(master_seed, idx, law.clone());
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, idx, INIT_LANE));
        let x0 = 0.5 + 0.5 * open_unit(&mut init);
        induced_chain(n, &mut stream, phi, x0, cap)
            .map(|recs| recs.iter().map(|r| r.birkhoff).sum::<f64>())
            .map_err(|(done, _)| done.len())
    });
    let failed = sums.iter().filter(|s| s.is_err()).count();
    if failed > 0 {
        return Err(LabError::ExcessCensoring {
            censored: failed,
            total: blocks,
        });
    }
    Ok(sums.into_iter().map(|s| s.expect("checked")).collect())
}

fn check_law(law: &ParamLaw) -> Result<Regime> {
    if matches!(law, ParamLaw::PowerLaw { .. }) {
        return Err(domain("limit laws are not considered for unbounded parameter range"));
    }
    Regime::for_alpha(law.alpha())
}

/// Runs `n_blocks` independent induced chains of `n` and of `2n` excursions
/// and compares the normalized sums with the predicted limit shape.
pub fn run_limit_experiment(
    law: &ParamLaw,
    phi: &Observable,
    n: usize,
    n_blocks: usize,
    master_seed: u64,
    opts: &LimitOptions,
) -> Result<LimitExperiment> {
    let regime = check_law(law)?;
    if phi.value_at_zero() == 0.0 {
        return Err(domain("observable must not vanish at 0"));
    }
    if n == 0 || n_blocks < 2 {
        return Err(domain("need n ≥ 1 and at least two blocks"));
    }
    let mut warnings = Vec::new();
    if n_blocks < MIN_BLOCKS {
        warnings.push(format!("only {n_blocks} blocks; KS thresholds assume ≥ {MIN_BLOCKS}"));
    }
    // φ and −φ have mirrored limits; work with φ(0) > 0
    let sign_flipped = phi.value_at_zero() < 0.0;
    let work = if sign_flipped { phi.negated() } else { phi.clone() };

    let tail_seed = derive_seed(master_seed, 0, TAIL_SEED_LANE);
    let sample = simulate_excursions(law, &work, opts.tail_excursions, tail_seed, opts.cap, opts.workers);
    let (mean, sd) = mean_sd(&sample.values);
    let sim_opts = SimulationOptions {
        cap: opts.cap,
        workers: opts.workers,
        ..Default::default()
    };
    let tail = tail_report_from_sample(&sample, &sim_opts, tail_seed)?;
    let plan = plan_normalization(&tail, mean, sd)?;

    let raw = block_sums(law, &work, n, n_blocks, master_seed, 0, opts.cap, opts.workers)?;
    let raw2 = block_sums(law, &work, 2 * n, n_blocks, master_seed, DOUBLED_OFFSET, opts.cap, opts.workers)?;
    let normalized: Vec<f64> = raw.iter().map(|s| plan.normalize(n, *s)).collect();
    let normalized2: Vec<f64> = raw2.iter().map(|s| plan.normalize(2 * n, *s)).collect();

    let ks_gaussian = ks_to_fitted_normal(&normalized);
    let ks_selfsim = ks_shape(&normalized, &normalized2);
    let ks_oracle = match regime {
        Regime::Stable => {
            let oracle = stable_oracle_samples(
                1.0 / law.alpha(),
                n,
                opts.oracle_samples,
                derive_seed(master_seed, 1, TAIL_SEED_LANE),
                opts.workers,
            )?;
            Some(ks_shape(&normalized, &oracle))
        }
        Regime::Gaussian => None,
    };
    let (_, sd1) = mean_sd(&raw);
    let (_, sd2) = mean_sd(&raw2);
    let variance_ratio = (sd2 * sd2 / (2 * n) as f64) / (sd1 * sd1 / n as f64);

    let flip = |v: Vec<f64>| if sign_flipped { v.into_iter().map(|x| -x).collect() } else { v };
    Ok(LimitExperiment {
        law: law.clone(),
        observable: phi.label().to_string(),
        regime,
        n,
        n_blocks,
        plan,
        sums: flip(normalized),
        sums_doubled: flip(normalized2),
        ks_gaussian,
        ks_selfsim,
        ks_oracle,
        variance_ratio,
        sign_flipped,
        warnings,
    })
}

/// `Var(S^{kn}φ_Y)/(kn)` over `Var(S^n φ_Y)/n`: bounded in the Gaussian
/// regime, growing like `k^{2α−1}` in the stable one.
pub fn variance_growth(
    law: &ParamLaw,
    phi: &Observable,
    n: usize,
    factor: usize,
    blocks: usize,
    master_seed: u64,
    workers: Workers,
) -> Result<f64> {
    check_law(law)?;
    let a = block_sums(law, phi, n, blocks, master_seed, 0, DEFAULT_CAP, workers)?;
    let b = block_sums(law, phi, factor * n, blocks, master_seed, DOUBLED_OFFSET, DEFAULT_CAP, workers)?;
    let (_, sa) = mean_sd(&a);
    let (_, sb) = mean_sd(&b);
    Ok((sb * sb / (factor * n) as f64) / (sa * sa / n as f64))
}

/// `IQR(S^{kn}φ_Y)²/(kn)` over `IQR(S^n φ_Y)²/n`: a spread ratio that stays
/// meaningful when the second moment is infinite; tends to `k^{2α−1}` in
/// the stable regime and to 1 in the Gaussian one.
pub fn iqr_growth(
    law: &ParamLaw,
    phi: &Observable,
    n: usize,
    factor: usize,
    blocks: usize,
    master_seed: u64,
    workers: Workers,
) -> Result<f64> {
    check_law(law)?;
    let a = block_sums(law, phi, n, blocks, master_seed, 0, DEFAULT_CAP, workers)?;
    let b = block_sums(law, phi, factor * n, blocks, master_seed, DOUBLED_OFFSET, DEFAULT_CAP, workers)?;
    let iqr = |v: &[f64]| quantile(v, 0.75) - quantile(v, 0.25);
    Ok((iqr(&b).powi(2) / (factor * n) as f64) / (iqr(&a).powi(2) / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiTail {
    pub report: TailReport,
    /// `(t, P(φ_Y > t) / P(τ_Y > t/φ(0)))` where both survivals are positive.
    pub ratio: Vec<(f64, f64)>,
}

/// Tail of `φ_Y` with the comparison against the return-time tail rescaled
/// by `φ(0)`; both come from the same excursions.
pub fn phi_y_tail_index(law: &ParamLaw, phi: &Observable, n_excursions: usize, master_seed: u64, workers: Workers) -> Result<PhiTail> {
    let phi0 = phi.value_at_zero();
    if !(phi0 > 0.0) {
        return Err(domain("φ_Y tail needs φ(0) > 0"));
    }
    let opts = SimulationOptions {
        workers,
        ..Default::default()
    };
    let sample = simulate_excursions(law, phi, n_excursions, master_seed, opts.cap, workers);
    let taus = simulate_excursions(law, &Observable::constant(1.0), n_excursions, master_seed, opts.cap, workers);
    let report = tail_report_from_sample(&sample, &opts, master_seed)?;
    let total = sample.values.len() as f64;
    let mut phi_sorted = sample.values.clone();
    phi_sorted.sort_by(f64::total_cmp);
    let mut tau_sorted = taus.values.clone();
    tau_sorted.sort_by(f64::total_cmp);
    let above = |v: &[f64], t: f64| (v.len() - v.partition_point(|&x| x <= t)) as f64 / total;
    let ratio = report
        .grid
        .iter()
        .filter_map(|&t| {
            let (a, b) = (above(&phi_sorted, t), above(&tau_sorted, t / phi0));
            (a > 0.0 && b > 0.0).then_some((t, a / b))
        })
        .collect();
    Ok(PhiTail { report, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn half_is_rejected() {
        assert!(Regime::for_alpha(0.5).is_err());
        assert_eq!(Regime::for_alpha(0.3).unwrap(), Regime::Gaussian);
        assert_eq!(Regime::for_alpha(0.75).unwrap(), Regime::Stable);
        let e = run_limit_experiment(
            &ParamLaw::dirac(0.5).unwrap(),
            &Observable::constant(1.0),
            10,
            10,
            1,
            &LimitOptions::default(),
        );
        assert!(e.unwrap_err().to_string().contains("α=1/2"));
    }

    #[test]
    fn power_law_and_vanishing_observable_are_rejected() {
        let o = LimitOptions::default();
        assert!(run_limit_experiment(&ParamLaw::power_law(0.3, 1.0).unwrap(), &Observable::constant(1.0), 10, 10, 1, &o).is_err());
        assert!(run_limit_experiment(&ParamLaw::dirac(0.3).unwrap(), &Observable::affine(0.0, 1.0), 10, 10, 1, &o).is_err());
    }

    #[test]
    fn scale_solves_the_tail_equation() {
        let plan = NormalizationPlan {
            tail_index: 4.0 / 3.0,
            tail_constant: 0.7,
            mean: 2.0,
            sd: 1.0,
            scale_rule: "tail-fit".into(),
        };
        for n in [10, 1000, 100_000] {
            let b = plan.scale(n);
            assert_relative_eq!(n as f64 * 0.7, b.powf(4.0 / 3.0), max_relative = 1e-12);
        }
        assert_relative_eq!(plan.scale(2000) / plan.scale(1000), 2f64.powf(0.75), max_relative = 1e-12);
        let gauss = NormalizationPlan {
            scale_rule: "moments".into(),
            sd: 3.0,
            ..plan
        };
        assert_relative_eq!(gauss.scale(400), 60.0);
        assert!(gauss.scale(401) > gauss.scale(400));
    }

    #[test]
    fn oracle_shape() {
        let a = stable_oracle_samples(4.0 / 3.0, 10_000, 1000, 1, Workers::AUTO).unwrap();
        assert!(skewness(&a) > 1.0);
        let b = stable_oracle_samples(4.0 / 3.0, 10_000, 1000, 2, Workers::AUTO).unwrap();
        // same-law noise floor at 1000 vs 1000 samples
        assert!(ks_shape(&a, &b) < 0.07);
        let near_gauss = stable_oracle_samples(1.95, 10_000, 1000, 3, Workers::AUTO).unwrap();
        let heavy = stable_oracle_samples(1.3, 10_000, 1000, 3, Workers::AUTO).unwrap();
        assert!(ks_to_fitted_normal(&near_gauss) < ks_to_fitted_normal(&heavy));
        assert!(stable_oracle_samples(2.5, 10, 10, 1, Workers::AUTO).is_err());
    }

    #[test]
    fn oracle_is_worker_independent() {
        let a = stable_oracle_samples(1.5, 100, 50, 9, Workers(1)).unwrap();
        let b = stable_oracle_samples(1.5, 100, 50, 9, Workers(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn robust_standardization_is_affine_invariant() {
        let xs: Vec<f64> = (0..101).map(|i| (i as f64).powf(1.5)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 7.0).collect();
        let (a, b) = (standardize_robust(&xs), standardize_robust(&ys));
        for (u, v) in a.iter().zip(&b) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }
}
