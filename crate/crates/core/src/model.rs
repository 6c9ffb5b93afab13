//! True distribution, sigmoid regression model, uniform prior, and dataset sampling.
//!
//! The truth is `y = f(x) + σ ε` with `x` uniform on `[-2, 2]` and `f` the
//! even trapezoid
//!
//! ```text
//! f(x) = x + 2    (-2 ≤ x < -1)
//!        1        (-1 ≤ x <  1)
//!        2 - x    ( 1 ≤ x ≤  2)
//! ```
//!
//! The model is `y = sigmoid(a x + b) + σ ε` with the same noise scale. Since
//! `f` and the input density are even, `(a, b)` and `(-a, b)` fit equally well
//! yet define different conditional densities.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support of the trapezoid regression function.
pub const TRAPEZOID_SUPPORT: Interval = Interval(-2.0, 2.0);

/// Kinks of the trapezoid; quadrature panels break here.
pub const TRAPEZOID_KINKS: [f64; 2] = [-1.0, 1.0];

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    pub fn width(&self) -> f64 {
        self.1 - self.0
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.0 && x <= self.1
    }

    fn is_valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.0 < self.1
    }
}

/// Model parameter `w = (a, b)`: slope and offset of the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub a: f64,
    pub b: f64,
}

impl Parameter {
    pub const fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    /// The reflection `(a, b) -> (-a, b)` that maps one optimum onto the other.
    pub fn mirrored(&self) -> Self {
        Self::new(-self.a, self.b)
    }

    pub fn distance(&self, other: &Parameter) -> f64 {
        (self.a - other.a).hypot(self.b - other.b)
    }

    pub fn coordinate(&self, axis: Axis) -> f64 {
        match axis {
            Axis::A => self.a,
            Axis::B => self.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    A,
    B,
}

/// Truth/model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    /// Trapezoid truth, single-sigmoid model.
    #[default]
    SigmoidTrapezoid,
}

/// Log density of a conditional model `p(y | x, w)`.
///
/// Only the sigmoid family is wired into the experiment; other families can
/// implement this to reuse the data-level routines.
pub trait ConditionalDensity {
    fn log_density(&self, x: f64, y: f64, w: &Parameter) -> f64;
}

/// Statistical model, true distribution, and prior box.
///
/// Fields missing from JSON take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub noise_sigma: f64,
    pub x_support: Interval,
    pub prior_a: Interval,
    pub prior_b: Interval,
    pub regression_kind: RegressionKind,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            noise_sigma: 0.2,
            x_support: TRAPEZOID_SUPPORT,
            prior_a: Interval(-20.0, 20.0),
            prior_b: Interval(-20.0, 20.0),
            regression_kind: RegressionKind::SigmoidTrapezoid,
        }
    }
}

impl ModelSpec {
    pub fn with_noise(mut self, noise_sigma: f64) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn with_prior_a(mut self, prior_a: Interval) -> Self {
        self.prior_a = prior_a;
        self
    }

    pub fn with_prior_b(mut self, prior_b: Interval) -> Self {
        self.prior_b = prior_b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::Configuration(format!(
                "noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        for (name, iv) in [
            ("x_support", self.x_support),
            ("prior_a", self.prior_a),
            ("prior_b", self.prior_b),
        ] {
            if !iv.is_valid() {
                return Err(Error::Configuration(format!(
                    "{name} must be a finite interval with lo < hi, got [{}, {}]",
                    iv.0, iv.1
                )));
            }
        }
        if self.x_support.lo() < TRAPEZOID_SUPPORT.lo() || self.x_support.hi() > TRAPEZOID_SUPPORT.hi() {
            return Err(Error::Configuration(format!(
                "x_support [{}, {}] exceeds the domain [-2, 2] of the true regression",
                self.x_support.0, self.x_support.1
            )));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// `log(√(2π) σ)`, the negated log normalizer of the Gaussian noise.
    pub fn log_normalizer(&self) -> f64 {
        ((2.0 * PI).sqrt() * self.noise_sigma).ln()
    }

    /// Input density `q(x)`.
    pub fn input_density(&self, x: f64) -> f64 {
        if self.x_support.contains(x) {
            1.0 / self.x_support.width()
        } else {
            0.0
        }
    }

    /// Prior density on the box; uniform, so constant inside.
    pub fn prior_density(&self, w: &Parameter) -> f64 {
        if self.in_prior_box(w) {
            1.0 / (self.prior_a.width() * self.prior_b.width())
        } else {
            0.0
        }
    }

    pub fn in_prior_box(&self, w: &Parameter) -> bool {
        self.prior_a.contains(w.a) && self.prior_b.contains(w.b)
    }

    /// Regression mean of the model at `x`.
    #[inline]
    pub fn model_mean(&self, x: f64, w: &Parameter) -> f64 {
        sigmoid(w.a * x + w.b)
    }

    /// Panel boundaries for integrating over `x`: the support plus any kinks inside it.
    pub fn x_breaks(&self) -> Vec<f64> {
        let mut breaks = vec![self.x_support.lo()];
        breaks.extend(
            TRAPEZOID_KINKS
                .iter()
                .copied()
                .filter(|&k| k > self.x_support.lo() && k < self.x_support.hi()),
        );
        breaks.push(self.x_support.hi());
        breaks
    }
}

impl ConditionalDensity for ModelSpec {
    fn log_density(&self, x: f64, y: f64, w: &Parameter) -> f64 {
        log_model_density(x, y, w, self)
    }
}

/// The trapezoid `f(x)`; errors outside `[-2, 2]`.
pub fn true_regression(x: f64) -> Result<f64> {
    if !TRAPEZOID_SUPPORT.contains(x) {
        return Err(Error::Domain(format!("x = {x} lies outside [-2, 2]")));
    }
    Ok(trapezoid(x))
}

#[inline]
pub(crate) fn trapezoid(x: f64) -> f64 {
    if x < -1.0 {
        x + 2.0
    } else if x < 1.0 {
        1.0
    } else {
        2.0 - x
    }
}

/// Logistic function, evaluated without overflow for large `|t|`.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log p(y | x, w)` for the Gaussian sigmoid regression model.
#[inline]
pub fn log_model_density(x: f64, y: f64, w: &Parameter, spec: &ModelSpec) -> f64 {
    let r = y - spec.model_mean(x, w);
    -spec.log_normalizer() - r * r / (2.0 * spec.noise_sigma * spec.noise_sigma)
}

/// Observed `(x, y)` pairs and the seed that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    /// The first `n` pairs; datasets from one seed are nested in `n`.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            pairs: self.pairs[..n.min(self.pairs.len())].to_vec(),
            seed: self.seed,
        }
    }
}

/// Draws `n` pairs from the true distribution.
///
/// Each pair consumes the generator in a fixed order, so a dataset of size
/// `n + 1` extends the dataset of size `n` drawn from the same seed.
pub fn sample_dataset(n: usize, seed: u64, spec: &ModelSpec) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, width) = (spec.x_support.lo(), spec.x_support.width());
    let pairs = (0..n)
        .map(|_| {
            let x = lo + width * rng.random::<f64>();
            let eps: f64 = rng.sample(StandardNormal);
            (x, trapezoid(x) + spec.noise_sigma * eps)
        })
        .collect();
    Ok(Dataset { pairs, seed })
}

/// Seed of the replication stream `(master_seed, n, r)`.
///
/// SplitMix64 finalizers over the three coordinates, so neighbouring
/// replications and sample sizes get unrelated seeds.
pub fn stream_seed(master_seed: u64, n: usize, replication: usize) -> u64 {
    let mut h = splitmix(master_seed ^ 0x6a09_e667_f3bc_c908);
    h = splitmix(h ^ n as u64);
    splitmix(h ^ (replication as u64).rotate_left(32))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn trapezoid_values() {
        assert_eq!(true_regression(0.0).unwrap(), 1.0);
        assert_eq!(true_regression(-2.0).unwrap(), 0.0);
        assert_eq!(true_regression(1.5).unwrap(), 0.5);
        assert_eq!(true_regression(2.0).unwrap(), 0.0);
        assert!(matches!(true_regression(2.5), Err(Error::Domain(_))));
        assert!(matches!(true_regression(-2.0001), Err(Error::Domain(_))));
    }

    #[test]
    fn trapezoid_is_continuous_at_kinks() {
        for k in TRAPEZOID_KINKS {
            let l = true_regression(k - 1e-12).unwrap();
            let r = true_regression(k + 1e-12).unwrap();
            assert_abs_diff_eq!(l, r, epsilon = 1e-11);
        }
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e6), 1.0);
        assert_eq!(sigmoid(-1e6), 0.0);
        assert!(sigmoid(800.0).is_finite() && sigmoid(-800.0).is_finite());
        assert_abs_diff_eq!(sigmoid(3.0) + sigmoid(-3.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_residual_density_is_the_normalizer() {
        let spec = ModelSpec::default();
        let w = Parameter::new(1.3, -0.4);
        let x = 0.7;
        let y = sigmoid(1.3 * 0.7 - 0.4);
        let expected = -((2.0 * PI).sqrt() * 0.2).ln();
        assert_abs_diff_eq!(log_model_density(x, y, &w, &spec), expected, epsilon = 1e-14);
    }

    #[test]
    fn density_falls_with_residual() {
        let spec = ModelSpec::default();
        let w = Parameter::new(2.0, 1.0);
        let m = sigmoid(2.0 * 0.3 + 1.0);
        let mut last = f64::INFINITY;
        for r in [0.0, 0.1, 0.2, 0.5, 1.0, 3.0] {
            let v = log_model_density(0.3, m + r, &w, &spec);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn log_density_matches_direct_gaussian_pdf() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sigma in [0.2, 1.0, 0.05] {
            let spec = ModelSpec::default().with_noise(sigma);
            for _ in 0..500 {
                let x = rng.random_range(-2.0..2.0);
                let y = rng.random_range(-1.0..2.0);
                let w = Parameter::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
                // independent route: pdf of N(mean, sigma^2) written out, then log
                let mean = 1.0 / (1.0 + (-(w.a * x + w.b)).exp());
                let pdf = (-(y - mean).powi(2) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma).sqrt();
                if pdf < 1e-300 {
                    continue;
                }
                assert_relative_eq!(log_model_density(x, y, &w, &spec), pdf.ln(), epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_nested() {
        let spec = ModelSpec::default();
        let a = sample_dataset(50, 7, &spec).unwrap();
        let b = sample_dataset(50, 7, &spec).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(51, 7, &spec).unwrap();
        assert_eq!(c.prefix(50), a);
        assert_ne!(sample_dataset(50, 8, &spec).unwrap(), a);
        assert!(matches!(sample_dataset(0, 7, &spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sample_moments_match_the_generative_model() {
        let spec = ModelSpec::default();
        let n = 100_000;
        let d = sample_dataset(n, 2024, &spec).unwrap();
        assert!(d.pairs.iter().all(|&(x, _)| spec.x_support.contains(x)));
        let nf = n as f64;
        // uniform(-2, 2): mean 0, variance 4/3
        let mean_x = d.pairs.iter().map(|p| p.0).sum::<f64>() / nf;
        assert!(mean_x.abs() < 3.0 * (4.0f64 / 3.0 / nf).sqrt(), "mean_x = {mean_x}");
        let resid: Vec<f64> = d.pairs.iter().map(|&(x, y)| y - trapezoid(x)).collect();
        let mean_r = resid.iter().sum::<f64>() / nf;
        assert!(mean_r.abs() < 3.0 * 0.2 / nf.sqrt(), "mean_r = {mean_r}");
        let sd = (resid.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        assert!((sd / 0.2 - 1.0).abs() < 0.02, "sd = {sd}");
    }

    #[test]
    fn stream_seeds_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for n in (100..=600).step_by(100) {
            for r in 0..2000 {
                assert!(seen.insert(stream_seed(42, n, r)));
            }
        }
        assert_ne!(stream_seed(1, 100, 0), stream_seed(2, 100, 0));
    }

    #[test]
    fn spec_validation_and_json() {
        let spec = ModelSpec::from_json_str(
            r#"{"noise_sigma": 1.0, "x_support": [-2, 2], "prior_a": [-20, 20], "prior_b": [-20, 20],
                "regression_kind": "sigmoid_trapezoid"}"#,
        )
        .unwrap();
        assert_eq!(spec, ModelSpec::default().with_noise(1.0));
        let partial = ModelSpec::from_json_str(r#"{"prior_a": [0.5, 20]}"#).unwrap();
        assert_eq!(partial, ModelSpec::default().with_prior_a(Interval(0.5, 20.0)));
        assert!(ModelSpec::default().with_noise(0.0).validate().is_err());
        assert!(ModelSpec::default().with_prior_a(Interval(1.0, 1.0)).validate().is_err());
        let wide = ModelSpec {
            x_support: Interval(-3.0, 3.0),
            ..ModelSpec::default()
        };
        assert!(wide.validate().is_err());
        let p = ModelSpec::default();
        assert_abs_diff_eq!(p.prior_density(&Parameter::new(0.0, 0.0)), 1.0 / 1600.0);
        assert_eq!(p.prior_density(&Parameter::new(21.0, 0.0)), 0.0);
        assert_abs_diff_eq!(p.input_density(0.3), 0.25);
        assert_eq!(p.input_density(2.1), 0.0);
        assert_eq!(p.x_breaks(), vec![-2.0, -1.0, 1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn trapezoid_is_even(x in -2.0f64..=2.0) {
            prop_assert_eq!(true_regression(x).unwrap(), true_regression(-x).unwrap());
        }

        #[test]
        fn reflection_symmetry_of_the_model(x in -2.0f64..2.0, y in -2.0f64..3.0,
                                            a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let spec = ModelSpec::default();
            let w = Parameter::new(a, b);
            let lhs = log_model_density(x, y, &w, &spec);
            let rhs = log_model_density(-x, y, &w.mirrored(), &spec);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }

        #[test]
        fn sigmoid_is_monotone_and_bounded(t in -20.0f64..20.0, dt in 1e-3f64..5.0) {
            let s = sigmoid(t);
            prop_assert!(s > 0.0 && s < 1.0);
            prop_assert!(sigmoid(t + dt) > s);
        }
    }
}
