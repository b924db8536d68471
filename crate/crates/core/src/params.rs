//! Parameter laws `ν` and reproducible i.i.d. parameter streams.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, LabError, Result};
use crate::map::{MapParameter, ParamWindow};
use crate::quad::GaussRule;

const WEIGHT_TOL: f64 = 1e-12;

/// Distribution of the map exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawSpec", into = "LawSpec")]
pub enum ParamLaw {
    /// Finite mixture of point masses `Σ p_i δ_{ω_i}`, sorted by `ω`.
    Atomic(Vec<(f64, f64)>),
    Uniform {
        alpha: f64,
        beta: f64,
    },
    /// Survival `(t/α)^{-ε}` on `[α, ∞)`.
    PowerLaw {
        alpha: f64,
        epsilon: f64,
    },
}

/// Wire form of [`ParamLaw`] used in configuration files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LawSpec {
    Atomic { atoms: Vec<[f64; 2]> },
    Uniform { alpha: f64, beta: f64 },
    PowerLaw { alpha: f64, epsilon: f64 },
}

impl TryFrom<LawSpec> for ParamLaw {
    type Error = LabError;

    fn try_from(spec: LawSpec) -> Result<Self> {
        match spec {
            LawSpec::Atomic { atoms } => ParamLaw::atomic(atoms.into_iter().map(|[w, p]| (w, p)).collect()),
            LawSpec::Uniform { alpha, beta } => ParamLaw::uniform(alpha, beta),
            LawSpec::PowerLaw { alpha, epsilon } => ParamLaw::power_law(alpha, epsilon),
        }
    }
}

impl From<ParamLaw> for LawSpec {
    fn from(law: ParamLaw) -> Self {
        match law {
            ParamLaw::Atomic(atoms) => LawSpec::Atomic {
                atoms: atoms.into_iter().map(|(w, p)| [w, p]).collect(),
            },
            ParamLaw::Uniform { alpha, beta } => LawSpec::Uniform { alpha, beta },
            ParamLaw::PowerLaw { alpha, epsilon } => LawSpec::PowerLaw { alpha, epsilon },
        }
    }
}

impl ParamLaw {
    pub fn atomic(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(domain("atomic law needs at least one atom"));
        }
        for &(w, p) in &atoms {
            MapParameter::new(w)?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(domain(format!("atom weight must be positive, got {p}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(domain(format!("atom weights sum to {total}, expected 1")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(ParamLaw::Atomic(atoms))
    }

    pub fn dirac(omega: f64) -> Result<Self> {
        Self::atomic(vec![(omega, 1.0)])
    }

    pub fn uniform(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > alpha && beta.is_finite()) {
            return Err(domain(format!("uniform law needs 0 < alpha < beta < inf, got [{alpha}, {beta}]")));
        }
        Ok(ParamLaw::Uniform { alpha, beta })
    }

    pub fn power_law(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && epsilon > 0.0 && epsilon.is_finite()) {
            return Err(domain(format!(
                "power law needs alpha > 0 and epsilon > 0, got ({alpha}, {epsilon})"
            )));
        }
        Ok(ParamLaw::PowerLaw { alpha, epsilon })
    }

    /// Essential infimum of the law.
    pub fn alpha(&self) -> f64 {
        match self {
            ParamLaw::Atomic(atoms) => atoms[0].0,
            ParamLaw::Uniform { alpha, .. } | ParamLaw::PowerLaw { alpha, .. } => *alpha,
        }
    }

    /// Essential supremum; infinite for the power law.
    pub fn beta(&self) -> f64 {
        match self {
            ParamLaw::Atomic(atoms) => atoms[atoms.len() - 1].0,
            ParamLaw::Uniform { beta, .. } => *beta,
            ParamLaw::PowerLaw { .. } => f64::INFINITY,
        }
    }

    pub fn window(&self) -> ParamWindow {
        ParamWindow {
            alpha: self.alpha(),
            beta: self.beta(),
        }
    }

    /// `ν({α}) > 0`.
    pub fn has_atom_at_alpha(&self) -> bool {
        matches!(self, ParamLaw::Atomic(_))
    }

    /// Maps a uniform variate to a parameter. For the power law `u` must lie
    /// in `(0, 1]`; other laws accept `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            ParamLaw::Atomic(atoms) => {
                let mut acc = 0.0;
                for &(w, p) in atoms {
                    acc += p;
                    if u < acc {
                        return w;
                    }
                }
                atoms[atoms.len() - 1].0
            }
            ParamLaw::Uniform { alpha, beta } => alpha + (beta - alpha) * u,
            ParamLaw::PowerLaw { alpha, epsilon } => alpha * u.powf(-1.0 / epsilon),
        }
    }

    /// `ν(t, ∞)`.
    pub fn survival(&self, t: f64) -> f64 {
        match self {
            ParamLaw::Atomic(atoms) => atoms.iter().filter(|a| a.0 > t).map(|a| a.1).sum(),
            ParamLaw::Uniform { alpha, beta } => ((beta - t) / (beta - alpha)).clamp(0.0, 1.0),
            ParamLaw::PowerLaw { alpha, epsilon } => {
                if t <= *alpha {
                    1.0
                } else {
                    (t / alpha).powf(-epsilon)
                }
            }
        }
    }

    /// `ν[α, cutoff]`.
    pub fn mass_up_to(&self, cutoff: f64) -> f64 {
        match self {
            ParamLaw::Atomic(atoms) => atoms.iter().filter(|a| a.0 <= cutoff).map(|a| a.1).sum(),
            _ => 1.0 - self.survival(cutoff),
        }
    }

    /// Mean relative one-step displacement `∫ (2t)^γ dν(γ)` at `t ∈ (0, 1/2)`.
    ///
    /// Exact for atomic laws; continuous laws are integrated in the
    /// quantile variable, where the measure becomes Lebesgue on `(0, 1)`.
    pub fn displacement_factor(&self, t: f64) -> f64 {
        let base = 2.0 * t;
        match self {
            ParamLaw::Atomic(atoms) => atoms.iter().map(|&(w, p)| p * base.powf(w)).sum(),
            ParamLaw::Uniform { .. } | ParamLaw::PowerLaw { .. } => {
                let rule = GaussRule::shared(32);
                // the power-law integrand vanishes super-exponentially at u -> 0
                let panels = 8;
                (0..panels)
                    .map(|k| {
                        let a = k as f64 / panels as f64;
                        let b = (k + 1) as f64 / panels as f64;
                        rule.integrate(a, b, |u| base.powf(self.quantile(u.max(f64::MIN_POSITIVE))))
                    })
                    .sum()
            }
        }
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(master, index, lane)`; distinct lanes of one index give
/// independent sibling streams (for example parameters vs. initial points).
pub fn derive_seed(master_seed: u64, stream_index: u64, lane: u64) -> u64 {
    let a = mix64(master_seed ^ 0x9E37_79B9_7F4A_7C15);
    let b = mix64(a ^ stream_index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    mix64(b ^ lane.wrapping_mul(0xA076_1D64_78BD_642F))
}

/// Reproducible i.i.d. parameter sequence `ω_0, ω_1, …` drawn from a law,
/// determined entirely by `(master_seed, stream_index, lane, law)`.
#[derive(Debug, Clone)]
pub struct SeededStream {
    master_seed: u64,
    stream_index: u64,
    law: Arc<ParamLaw>,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn new(master_seed: u64, stream_index: u64, law: Arc<ParamLaw>) -> Self {
        Self::with_lane(master_seed, stream_index, 0, law)
    }

    pub fn with_lane(master_seed: u64, stream_index: u64, lane: u64, law: Arc<ParamLaw>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, stream_index, lane));
        Self {
            master_seed,
            stream_index,
            law,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn law(&self) -> &ParamLaw {
        &self.law
    }

    #[inline]
    pub fn sample(&mut self) -> MapParameter {
        let omega = match &*self.law {
            ParamLaw::Atomic(atoms) if atoms.len() == 1 => atoms[0].0,
            ParamLaw::PowerLaw { .. } => self.law.quantile(1.0 - self.rng.random::<f64>()),
            law => law.quantile(self.rng.random::<f64>()),
        };
        // every law variant only produces positive finite exponents
        MapParameter::new(omega).expect("law produced invalid exponent")
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    pub fn next_open_unit(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Frequency of draws in `[α, cutoff]` among the next `n` parameters.
pub fn empirical_low_fraction(stream: &mut SeededStream, n: usize, cutoff: f64) -> Result<f64> {
    if cutoff < stream.law().alpha() {
        return Err(domain(format!(
            "cutoff {cutoff} below the support minimum {}",
            stream.law().alpha()
        )));
    }
    if n == 0 {
        return Err(domain("need at least one draw"));
    }
    let hits = (0..n).filter(|_| stream.sample().omega() <= cutoff).count();
    Ok(hits as f64 / n as f64)
}
