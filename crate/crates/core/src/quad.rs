//! Gauss–Legendre rules mapped to `[0, 1]`, cached per order.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;

#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(order: usize) -> Self {
        let order = order.max(2);
        let gl = GaussLegendre::new(order).expect("order >= 2");
        let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    pub fn shared(order: usize) -> Arc<GaussRule> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard.entry(order).or_insert_with(|| Arc::new(GaussRule::new(order))).clone()
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights on `[0, 1]`.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = b - a;
        self.pairs().map(|(x, w)| w * f(a + h * x)).sum::<f64>() * h
    }

    /// Composite rule on `panels` equal subintervals of `[a, b]`.
    pub fn integrate_composite(&self, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + h * k as f64;
                self.integrate(lo, lo + h, &mut f)
            })
            .sum()
    }

    /// Doubles the panel count until two successive composite estimates agree
    /// to `rel_tol` (relative) or `max_panels` is reached.
    pub fn integrate_adaptive(&self, a: f64, b: f64, rel_tol: f64, max_panels: usize, mut f: impl FnMut(f64) -> f64) -> (f64, bool) {
        let mut panels = 1;
        let mut prev = self.integrate_composite(a, b, panels, &mut f);
        while panels < max_panels {
            panels *= 2;
            let next = self.integrate_composite(a, b, panels, &mut f);
            if (next - prev).abs() <= rel_tol * next.abs().max(f64::MIN_POSITIVE) {
                return (next, true);
            }
            prev = next;
        }
        (prev, false)
    }
}
