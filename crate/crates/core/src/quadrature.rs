//! Gauss–Legendre and Gauss–Hermite rules, composite panels, and node doubling.
//!
//! The integrands in this crate are smooth on each panel between the kinks of
//! the true regression function, so a composite Gauss–Legendre rule with the
//! kinks as panel boundaries converges spectrally. Expectations over a Gaussian
//! response use the probabilists' Hermite rule normalized to a standard normal.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order > 0, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            // Tricomi's initial guess, then Newton on P_n.
            let mut z = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() <= 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, z);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[order - 1 - i] = z;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[lo, hi]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(order: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=order {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = order as f64;
    let dp = n * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

const CACHED_LEVELS: usize = 12;

/// Cached Gauss–Legendre rule of order `2^level`.
fn legendre_level(level: usize) -> &'static GaussLegendre {
    static LEVELS: [OnceLock<GaussLegendre>; CACHED_LEVELS] = [const { OnceLock::new() }; CACHED_LEVELS];
    LEVELS[level].get_or_init(|| GaussLegendre::new(1 << level))
}

/// Expectation rule for a standard normal variable: `E[g(Z)] ≈ Σ w_k g(t_k)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        assert!(order > 0, "Gauss-Hermite order must be positive");
        // Physicists' rule by Newton on the orthonormal recurrence, then rescaled
        // to the standard normal weight.
        let n = order;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt2 = 2f64.sqrt();
        let sqrt_pi = PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|&v| v * sqrt2).collect();
        let mut weights: Vec<f64> = w.iter().map(|&v| v / sqrt_pi).collect();
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[g(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * g(t))
            .sum()
    }
}

/// Flattened composite Gauss–Legendre rule over consecutive panels.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl CompositeRule {
    /// `breaks` must be strictly increasing; each consecutive pair is a panel.
    pub fn new(breaks: &[f64], order: usize) -> Self {
        Self::from_legendre(breaks, &GaussLegendre::new(order))
    }

    pub fn from_legendre(breaks: &[f64], rule: &GaussLegendre) -> Self {
        let panels = breaks.len().saturating_sub(1);
        let mut nodes = Vec::with_capacity(panels * rule.order());
        let mut weights = Vec::with_capacity(panels * rule.order());
        for pair in breaks.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                nodes.push(mid + half * x);
                weights.push(w * half);
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Scales every weight, e.g. by a constant density.
    pub fn scaled(mut self, factor: f64) -> Self {
        for w in &mut self.weights {
            *w *= factor;
        }
        self
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Convergence criterion for node doubling: `|I_2k − I_k| ≤ rel·|I_2k| + abs`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-10,
            abs: 1e-13,
        }
    }
}

const FIRST_LEVEL: usize = 4;
const LAST_LEVEL: usize = CACHED_LEVELS - 1;

/// Composite Gauss–Legendre integration with node doubling per panel, starting
/// at 16 nodes and stopping once successive results agree.
pub fn integrate_adaptive<F>(breaks: &[f64], tol: Tolerance, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut previous = integrate_panels(breaks, legendre_level(FIRST_LEVEL), &mut f);
    let mut change = f64::INFINITY;
    for level in FIRST_LEVEL + 1..=LAST_LEVEL {
        let current = integrate_panels(breaks, legendre_level(level), &mut f);
        change = (current - previous).abs();
        if change <= tol.rel * current.abs() + tol.abs {
            return Ok(current);
        }
        previous = current;
    }
    Err(Error::Quadrature {
        nodes: 1 << LAST_LEVEL,
        last_change: change,
    })
}

/// Vector-valued variant of [`integrate_adaptive`]; every component must settle.
pub fn integrate_adaptive_vec<F>(breaks: &[f64], dim: usize, tol: Tolerance, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut previous = integrate_panels_vec(breaks, legendre_level(FIRST_LEVEL), dim, &mut f);
    let mut worst = f64::INFINITY;
    for level in FIRST_LEVEL + 1..=LAST_LEVEL {
        let current = integrate_panels_vec(breaks, legendre_level(level), dim, &mut f);
        let mut converged = true;
        worst = 0.0;
        for (c, p) in current.iter().zip(&previous) {
            let change = (c - p).abs();
            worst = f64::max(worst, change);
            if change > tol.rel * c.abs() + tol.abs {
                converged = false;
            }
        }
        if converged {
            return Ok(current);
        }
        previous = current;
    }
    Err(Error::Quadrature {
        nodes: 1 << LAST_LEVEL,
        last_change: worst,
    })
}

fn integrate_panels<F: FnMut(f64) -> f64>(breaks: &[f64], rule: &GaussLegendre, f: &mut F) -> f64 {
    breaks
        .windows(2)
        .map(|p| rule.integrate(p[0], p[1], &mut *f))
        .sum()
}

fn integrate_panels_vec<F: FnMut(f64, &mut [f64])>(
    breaks: &[f64],
    rule: &GaussLegendre,
    dim: usize,
    f: &mut F,
) -> Vec<f64> {
    let mut total = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for pair in breaks.windows(2) {
        let half = 0.5 * (pair[1] - pair[0]);
        let mid = 0.5 * (pair[1] + pair[0]);
        for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
            buf.iter_mut().for_each(|v| *v = 0.0);
            f(mid + half * x, &mut buf);
            for (t, v) in total.iter_mut().zip(&buf) {
                *t += w * half * v;
            }
        }
    }
    total
}
