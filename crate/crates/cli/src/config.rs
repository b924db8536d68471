//! Experiment configuration files and their validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lsvlab::chain::{make_geometry, PowerLawKernel};
use lsvlab::limits::Regime;
use lsvlab::params::LawSpec;
use lsvlab::tails::annulus_edge;
use lsvlab::{ObservableSpec, ParamLaw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Tails,
    Distortion,
    Ulam,
    Correlations,
    Chain,
    Limits,
    Annulus,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Tails => "tails",
            ExperimentKind::Distortion => "distortion",
            ExperimentKind::Ulam => "ulam",
            ExperimentKind::Correlations => "correlations",
            ExperimentKind::Chain => "chain",
            ExperimentKind::Limits => "limits",
            ExperimentKind::Annulus => "annulus",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Tails | ExperimentKind::Distortion => &["samples"],
            ExperimentKind::Ulam => &["cells"],
            ExperimentKind::Correlations | ExperimentKind::Chain => &["cells", "n_max"],
            ExperimentKind::Limits => &["n", "blocks"],
            ExperimentKind::Annulus => &["n", "samples", "eta"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sizes and tuning knobs; which of them are read depends on the kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sizes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag_lo: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag_hi: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_excursions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl Sizes {
    fn integers(&self) -> [(&'static str, Option<u64>); 11] {
        [
            ("samples", self.samples),
            ("n", self.n),
            ("n_max", self.n_max),
            ("cells", self.cells),
            ("cap", self.cap),
            ("blocks", self.blocks),
            ("order", self.order),
            ("depth", self.depth),
            ("lag_lo", self.lag_lo),
            ("lag_hi", self.lag_hi),
            ("tail_excursions", self.tail_excursions),
        ]
    }

    fn has(&self, field: &str) -> bool {
        match field {
            "eta" => self.eta.is_some(),
            "b" => self.b.is_some(),
            _ => self.integers().iter().any(|(k, v)| *k == field && v.is_some()),
        }
    }

    /// Lag window for slope fits, defaulting to the last two decades.
    pub fn lag_range(&self, n_max: u64) -> (u64, u64) {
        let hi = self.lag_hi.unwrap_or(n_max);
        let lo = self.lag_lo.unwrap_or((hi / 100).max(1));
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub law: LawSpecWire,
    #[serde(default)]
    pub observable: ObservableSpec,
    #[serde(default)]
    pub sizes: Sizes,
}

/// [`LawSpec`] with equality, so configs can be compared after a round-trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LawSpecWire(pub LawSpec);

impl PartialEq for LawSpecWire {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(&self.0).ok() == serde_json::to_value(&other.0).ok()
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn law(&self) -> lsvlab::Result<ParamLaw> {
        ParamLaw::try_from(self.law.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Fewest cells the power-law chain grid accepts.
const MIN_CHAIN_CELLS: u64 = 512;

/// Every problem with `cfg`, in a stable order; empty means runnable.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let s = &cfg.sizes;

    for (name, v) in s.integers() {
        if v == Some(0) {
            out.push(Diagnostic::new(format!("sizes.{name}"), "must be positive"));
        }
    }
    if let Some(eta) = s.eta {
        if !(eta > 0.0 && eta < 1.0) {
            out.push(Diagnostic::new("sizes.eta", format!("must lie in (0, 1), got {eta}")));
        }
    }
    if let Some(b) = s.b {
        if !(b > 0.0 && b.is_finite()) {
            out.push(Diagnostic::new("sizes.b", format!("must be positive, got {b}")));
        }
    }
    for field in cfg.kind.required() {
        if !s.has(field) {
            out.push(Diagnostic::new(
                format!("sizes.{field}"),
                format!("required for {} experiments", cfg.kind),
            ));
        }
    }

    let law = match cfg.law() {
        Ok(l) => Some(l),
        Err(e) => {
            out.push(Diagnostic::new("law", e.to_string()));
            None
        }
    };

    match cfg.kind {
        ExperimentKind::Chain => chain_checks(cfg, &mut out),
        ExperimentKind::Limits => {
            if let Some(law) = &law {
                if matches!(law, ParamLaw::PowerLaw { .. }) {
                    out.push(Diagnostic::new("law", "limit experiments need a law with bounded support"));
                } else if let Err(e) = Regime::for_alpha(law.alpha()) {
                    out.push(Diagnostic::new("law", e.to_string()));
                }
            }
        }
        ExperimentKind::Ulam | ExperimentKind::Correlations => {
            if let Some(law) = &law {
                if matches!(law, ParamLaw::PowerLaw { .. }) {
                    out.push(Diagnostic::new("law", "the cell operator needs a law with bounded support"));
                }
                if law.alpha() >= 1.0 {
                    out.push(Diagnostic::new(
                        "law",
                        format!("α = {} ≥ 1 puts no mass below 1; a stationary density needs 0 < α < 1", law.alpha()),
                    ));
                }
            }
            if cfg.kind == ExperimentKind::Correlations {
                if let Some(n_max) = s.n_max {
                    let (lo, hi) = s.lag_range(n_max);
                    if lo >= hi || hi > n_max {
                        out.push(Diagnostic::new(
                            "sizes.lag_lo",
                            format!("need lag_lo < lag_hi ≤ n_max, got [{lo}, {hi}] with n_max = {n_max}"),
                        ));
                    }
                }
            }
        }
        ExperimentKind::Distortion => {
            if matches!(law, Some(ParamLaw::PowerLaw { .. })) {
                out.push(Diagnostic::new("law", "the distortion bound needs a bounded parameter window"));
            }
        }
        ExperimentKind::Tails => {
            if matches!(s.samples, Some(k) if k < 1000) {
                out.push(Diagnostic::new("sizes.samples", "tail fits need at least 1000 excursions"));
            }
        }
        ExperimentKind::Annulus => {
            if let Some(n) = s.n {
                if annulus_edge(n) < 1e-12 {
                    out.push(Diagnostic::new("sizes.n", format!("annulus {n} lies below 1e-12; use n ≤ 763")));
                }
            }
        }
    }
    out
}

fn chain_checks(cfg: &ExperimentConfig, out: &mut Vec<Diagnostic>) {
    let LawSpec::PowerLaw { alpha, epsilon } = cfg.law.0 else {
        out.push(Diagnostic::new("law", "chain experiments need a power_law law"));
        return;
    };
    if !(epsilon > 0.0) {
        out.push(Diagnostic::new("law.epsilon", format!("the chain needs ε > 0, got {epsilon}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        out.push(Diagnostic::new("law.alpha", format!("the chain needs 0 < α < 1, got {alpha}")));
    } else if epsilon > 0.0 {
        if let Err(e) = PowerLawKernel::new(alpha, epsilon) {
            out.push(Diagnostic::new("law", e.to_string()));
        }
        if let Some(b) = cfg.sizes.b {
            if let Err(e) = make_geometry(alpha, Some(b)) {
                out.push(Diagnostic::new("sizes.b", e.to_string()));
            }
        }
    }
    if matches!(cfg.sizes.cells, Some(c) if c < MIN_CHAIN_CELLS) {
        out.push(Diagnostic::new(
            "sizes.cells",
            format!("the chain grid needs at least {MIN_CHAIN_CELLS} cells"),
        ));
    }
}
