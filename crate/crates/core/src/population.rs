//! Population-level functionals of the model: log loss `L(w)`, average error
//! `K(w) = L(w) − L(w₀)`, the optimal parameter set, the covariance of the log
//! likelihood at the optima, and the relative-finite-variance check.
//!
//! The expectation over `y | x` of the negative log density is available in
//! closed form,
//!
//! ```text
//! E_y|x[−log p(y|x,w)] = log(√(2π) σ) + ((f(x) − s(x))² + σ²) / (2σ²),   s(x) = sigmoid(a x + b),
//! ```
//!
//! so `L(w)` reduces to a one-dimensional integral over `x`. Second moments
//! (covariance, ratio moments) use Gauss–Hermite in the response.

use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{trapezoid, Axis, ModelSpec, Parameter};
use crate::quadrature::{integrate_adaptive, integrate_adaptive_vec, CompositeRule, GaussHermite, Tolerance};

/// Hermite nodes for response expectations; the integrands are polynomials
/// of degree ≤ 4 in the noise, so anything beyond 3 nodes is exact.
const HERMITE_NODES: usize = 48;

/// `L(w) = −E[log p(Y | X, w)]` by composite Gauss–Legendre with node doubling.
pub fn log_loss(w: &Parameter, spec: &ModelSpec) -> Result<f64> {
    let c = spec.log_normalizer();
    let two_var = 2.0 * spec.noise_sigma * spec.noise_sigma;
    let var = spec.noise_sigma * spec.noise_sigma;
    let density = 1.0 / spec.x_support.width();
    integrate_adaptive(&spec.x_breaks(), Tolerance::default(), |x| {
        let d = trapezoid(x) - spec.model_mean(x, w);
        density * (c + (d * d + var) / two_var)
    })
}

/// `K(w) = L(w) − L(w₀)`; independent of which optimum is referenced.
pub fn avg_error(w: &Parameter, opt: &OptimumSet, spec: &ModelSpec) -> Result<f64> {
    Ok(log_loss(w, spec)? - opt.l0)
}

/// Fixed-order loss evaluator.
///
/// The node set does not depend on `w`, so the loss is a smooth function of
/// the parameter down to rounding. The optimizer and grid builder rely on
/// this; [`log_loss`] is the convergence-checked reference.
#[derive(Debug, Clone)]
pub struct LossRule {
    xs: Vec<f64>,
    weights: Vec<f64>,
    truth: Vec<f64>,
    log_normalizer: f64,
    var: f64,
}

impl LossRule {
    pub const DEFAULT_ORDER: usize = 64;

    pub fn new(spec: &ModelSpec, order_per_panel: usize) -> Self {
        let rule = CompositeRule::new(&spec.x_breaks(), order_per_panel).scaled(1.0 / spec.x_support.width());
        let truth = rule.nodes().iter().map(|&x| trapezoid(x)).collect();
        Self {
            xs: rule.nodes().to_vec(),
            weights: rule.weights().to_vec(),
            truth,
            log_normalizer: spec.log_normalizer(),
            var: spec.noise_sigma * spec.noise_sigma,
        }
    }

    pub fn loss(&self, w: &Parameter) -> f64 {
        let mse: f64 = self
            .xs
            .iter()
            .zip(&self.weights)
            .zip(&self.truth)
            .map(|((&x, &q), &f)| {
                let d = f - crate::model::sigmoid(w.a * x + w.b);
                q * d * d
            })
            .sum();
        self.log_normalizer + (mse + self.var) / (2.0 * self.var)
    }

    /// Gradient and Hessian of `L` in `(a, b)`.
    pub fn gradient_hessian(&self, w: &Parameter) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for ((&x, &q), &f) in self.xs.iter().zip(&self.weights).zip(&self.truth) {
            let s = crate::model::sigmoid(w.a * x + w.b);
            let d = f - s;
            let s1 = s * (1.0 - s);
            let s2 = s1 * (1.0 - 2.0 * s);
            let ds = [s1 * x, s1];
            let dds = [[s2 * x * x, s2 * x], [s2 * x, s2]];
            for i in 0..2 {
                g[i] -= q * d * ds[i];
                for j in 0..2 {
                    h[i][j] += q * (ds[i] * ds[j] - d * dds[i][j]);
                }
            }
        }
        for i in 0..2 {
            g[i] /= self.var;
            for j in 0..2 {
                h[i][j] /= self.var;
            }
        }
        (g, h)
    }
}

/// Which side of a coordinate threshold a half-plane keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `coordinate ≥ threshold`
    Upper,
    /// `coordinate < threshold`
    Lower,
}

/// Parameter-space region `W_i` holding one optimal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    All,
    HalfPlane { axis: Axis, threshold: f64, side: Side },
}

impl Region {
    pub fn contains(&self, w: &Parameter) -> bool {
        match *self {
            Region::All => true,
            Region::HalfPlane { axis, threshold, side } => {
                let v = w.coordinate(axis);
                match side {
                    Side::Upper => v >= threshold,
                    Side::Lower => v < threshold,
                }
            }
        }
    }
}

/// The optimal parameters, their branch regions, and per-branch RLCT and multiplicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumSet {
    pub optima: Vec<Parameter>,
    pub branches: Vec<Region>,
    pub rlct: Vec<f64>,
    pub multiplicity: Vec<u32>,
    #[serde(rename = "L0")]
    pub l0: f64,
}

impl OptimumSet {
    pub fn len(&self) -> usize {
        self.optima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.optima.is_empty()
    }

    /// Index of the unique branch containing `w`, if exactly one does.
    pub fn branch_of(&self, w: &Parameter) -> Option<usize> {
        let mut found = None;
        for (i, region) in self.branches.iter().enumerate() {
            if region.contains(w) {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.optima.len();
        if m == 0 {
            return Err(Error::Configuration("optimum set is empty".into()));
        }
        if self.branches.len() != m || self.rlct.len() != m || self.multiplicity.len() != m {
            return Err(Error::Configuration(format!(
                "optimum set has {m} optima but {} branches, {} RLCTs, {} multiplicities",
                self.branches.len(),
                self.rlct.len(),
                self.multiplicity.len()
            )));
        }
        if self.rlct.iter().any(|&l| !(l > 0.0)) || self.multiplicity.contains(&0) {
            return Err(Error::Configuration("RLCTs must be positive and multiplicities ≥ 1".into()));
        }
        for (i, w) in self.optima.iter().enumerate() {
            if self.branch_of(w) != Some(i) {
                return Err(Error::Configuration(format!(
                    "optimum {i} at ({}, {}) is not contained in exactly its own branch",
                    w.a, w.b
                )));
            }
        }
        if !self.l0.is_finite() {
            return Err(Error::Configuration("L0 is not finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let opt: Self = serde_json::from_str(s)?;
        opt.validate()?;
        Ok(opt)
    }
}

/// Settings for [`find_optima`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Scan points per axis, boundaries included.
    pub grid_points: usize,
    /// Lowest grid basins refined locally.
    pub max_starts: usize,
    pub merge_radius: f64,
    /// Minimizers with `L ≤ min L + accept_band` count as optimal.
    pub accept_band: f64,
    pub rlct: f64,
    pub multiplicity: u32,
    pub rule_order: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_points: 81,
            max_starts: 8,
            merge_radius: 1e-3,
            accept_band: 1e-8,
            rlct: 1.0,
            multiplicity: 1,
            rule_order: LossRule::DEFAULT_ORDER,
        }
    }
}

/// Locates every global minimizer of `K` in the prior box.
///
/// A grid scan picks the lowest local basins, Nelder–Mead refines each
/// start, and a few Newton steps on the quadrature gradient polish the
/// result. Branches are assigned by the sign of a coordinate.
pub fn find_optima(spec: &ModelSpec, config: &SearchConfig) -> Result<OptimumSet> {
    spec.validate()?;
    if config.grid_points < 3 {
        return Err(Error::InvalidArgument("grid_points must be at least 3".into()));
    }
    let rule = LossRule::new(spec, config.rule_order);
    let g = config.grid_points;
    let (alo, ahi) = (spec.prior_a.lo(), spec.prior_a.hi());
    let (blo, bhi) = (spec.prior_b.lo(), spec.prior_b.hi());
    let da = (ahi - alo) / (g - 1) as f64;
    let db = (bhi - blo) / (g - 1) as f64;
    let at = |i: usize, j: usize| Parameter::new(alo + da * i as f64, blo + db * j as f64);

    let values: Vec<f64> = (0..g * g).map(|k| rule.loss(&at(k / g, k % g))).collect();
    let value = |i: usize, j: usize| values[i * g + j];

    let mut basins = Vec::new();
    for i in 0..g {
        for j in 0..g {
            let v = value(i, j);
            let mut is_min = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= g as i64 || nj >= g as i64 {
                        continue;
                    }
                    if value(ni as usize, nj as usize) < v {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min {
                basins.push((v, i, j));
            }
        }
    }
    basins.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    basins.truncate(config.max_starts.max(1));

    let in_box = |w: &Parameter| clamp_to_box(w, spec);
    let mut candidates: Vec<(Parameter, f64)> = basins
        .iter()
        .map(|&(_, i, j)| {
            let start = at(i, j);
            let w = nelder_mead(|w| rule.loss(w), start, [0.5 * da, 0.5 * db], &in_box);
            let w = newton_polish(&rule, w, spec);
            (w, rule.loss(&w))
        })
        .collect();

    let best = candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Configuration("no finite loss value found in the prior box".into()));
    }
    candidates.retain(|c| c.1 <= best + config.accept_band);
    candidates.sort_by(|x, y| x.1.total_cmp(&y.1));

    let mut optima: Vec<Parameter> = Vec::new();
    for (w, _) in candidates {
        if let Some(kept) = optima.iter().find(|o| o.distance(&w) < config.merge_radius) {
            if kept.distance(&w) > 0.0 {
                debug!(
                    "merging minimizers ({}, {}) and ({}, {}) closer than {}",
                    kept.a, kept.b, w.a, w.b, config.merge_radius
                );
            }
            continue;
        }
        optima.push(w);
    }
    let interior: Vec<Parameter> = optima.iter().copied().filter(|w| is_interior(w, spec)).collect();
    if interior.is_empty() {
        return Err(Error::Configuration(
            "no minimizer of the average error lies inside the prior box interior".into(),
        ));
    }
    if interior.len() < optima.len() {
        return Err(Error::Configuration(format!(
            "{} global minimizer(s) lie on the prior box boundary",
            optima.len() - interior.len()
        )));
    }
    let mut optima = interior;
    optima.sort_by(|x, y| y.a.total_cmp(&x.a).then(y.b.total_cmp(&x.b)));

    let branches = assign_branches(&optima)?;
    let l0 = optima
        .iter()
        .map(|w| log_loss(w, spec))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / optima.len() as f64;
    let m = optima.len();
    let set = OptimumSet {
        optima,
        branches,
        rlct: vec![config.rlct; m],
        multiplicity: vec![config.multiplicity; m],
        l0,
    };
    set.validate()?;
    Ok(set)
}

fn assign_branches(optima: &[Parameter]) -> Result<Vec<Region>> {
    match optima {
        [_] => Ok(vec![Region::All]),
        [first, second] => {
            for axis in [Axis::A, Axis::B] {
                let (u, v) = (first.coordinate(axis), second.coordinate(axis));
                if u >= 0.0 && v < 0.0 {
                    return Ok(vec![
                        Region::HalfPlane { axis, threshold: 0.0, side: Side::Upper },
                        Region::HalfPlane { axis, threshold: 0.0, side: Side::Lower },
                    ]);
                }
                if v >= 0.0 && u < 0.0 {
                    return Ok(vec![
                        Region::HalfPlane { axis, threshold: 0.0, side: Side::Lower },
                        Region::HalfPlane { axis, threshold: 0.0, side: Side::Upper },
                    ]);
                }
            }
            Err(Error::Configuration(
                "the two optima are not separated by the sign of either coordinate".into(),
            ))
        }
        _ => Err(Error::Unsupported(format!(
            "automatic branch partition for {} optima; supply regions explicitly",
            optima.len()
        ))),
    }
}

fn is_interior(w: &Parameter, spec: &ModelSpec) -> bool {
    let ea = 1e-6 * spec.prior_a.width();
    let eb = 1e-6 * spec.prior_b.width();
    w.a > spec.prior_a.lo() + ea && w.a < spec.prior_a.hi() - ea && w.b > spec.prior_b.lo() + eb && w.b < spec.prior_b.hi() - eb
}

fn clamp_to_box(w: &Parameter, spec: &ModelSpec) -> Parameter {
    Parameter::new(
        w.a.clamp(spec.prior_a.lo(), spec.prior_a.hi()),
        w.b.clamp(spec.prior_b.lo(), spec.prior_b.hi()),
    )
}

/// Two-dimensional Nelder–Mead with box projection.
fn nelder_mead<F, P>(f: F, start: Parameter, step: [f64; 2], project: &P) -> Parameter
where
    F: Fn(&Parameter) -> f64,
    P: Fn(&Parameter) -> Parameter,
{
    let add = |p: &Parameter, q: &Parameter, t: f64| Parameter::new(p.a + t * (q.a - p.a), p.b + t * (q.b - p.b));
    let mut simplex: Vec<(Parameter, f64)> = [
        start,
        Parameter::new(start.a + step[0], start.b),
        Parameter::new(start.a, start.b + step[1]),
    ]
    .iter()
    .map(|p| {
        let p = project(p);
        (p, f(&p))
    })
    .collect();

    for _ in 0..4000 {
        simplex.sort_by(|x, y| x.1.total_cmp(&y.1));
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.0.distance(&simplex[0].0))
            .fold(0.0, f64::max);
        if diameter < 1e-10 || (simplex[2].1 - simplex[0].1).abs() < 1e-16 {
            break;
        }
        let centroid = Parameter::new(
            0.5 * (simplex[0].0.a + simplex[1].0.a),
            0.5 * (simplex[0].0.b + simplex[1].0.b),
        );
        let worst = simplex[2];
        let reflected = project(&add(&centroid, &worst.0, -1.0));
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = project(&add(&centroid, &worst.0, -2.0));
            let fe = f(&expanded);
            simplex[2] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (reflected, fr);
        } else {
            let (toward, ft) = if fr < worst.1 { (reflected, fr) } else { (worst.0, worst.1) };
            let contracted = project(&add(&centroid, &toward, 0.5));
            let fc = f(&contracted);
            if fc < ft {
                simplex[2] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let p = project(&add(&best, &v.0, 0.5));
                    *v = (p, f(&p));
                }
            }
        }
    }
    simplex.sort_by(|x, y| x.1.total_cmp(&y.1));
    simplex[0].0
}

/// Newton steps on the quadrature gradient; keeps the input when the Hessian
/// is not positive definite or a step would leave the box.
fn newton_polish(rule: &LossRule, mut w: Parameter, spec: &ModelSpec) -> Parameter {
    for _ in 0..30 {
        let (g, h) = rule.gradient_hessian(&w);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if !(h[0][0] > 0.0 && det > 0.0) {
            break;
        }
        let da = -(h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let db = -(-h[1][0] * g[0] + h[0][0] * g[1]) / det;
        let next = Parameter::new(w.a + da, w.b + db);
        if !spec.in_prior_box(&next) || rule.loss(&next) > rule.loss(&w) + 1e-14 {
            break;
        }
        w = next;
        if da.hypot(db) < 1e-13 {
            break;
        }
    }
    w
}

/// Symmetric positive semidefinite matrix of log-likelihood covariances at the optima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CovarianceMatrix(DMatrix<f64>);

impl CovarianceMatrix {
    /// Checks squareness, symmetry, and positive semidefiniteness (eigenvalues ≥ −1e−10·scale).
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::InvalidCovariance(format!(
                "expected a non-empty square matrix, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        let scale = matrix.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
        for i in 0..matrix.nrows() {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidCovariance(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        let cov = Self(matrix);
        let min = cov.eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * scale {
            return Err(Error::InvalidCovariance(format!("smallest eigenvalue {min:e} is negative")));
        }
        Ok(cov)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidCovariance("rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for CovarianceMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<CovarianceMatrix> for Vec<Vec<f64>> {
    fn from(c: CovarianceMatrix) -> Self {
        c.rows()
    }
}

/// `V_ij = E[(log p(X|w_0i) + L0)(log p(X|w_0j) + L0)]`, with `X = (x, y)`.
pub fn covariance(opt: &OptimumSet, spec: &ModelSpec) -> Result<CovarianceMatrix> {
    let m = opt.len();
    if m == 0 {
        return Err(Error::Configuration("no optima to build a covariance from".into()));
    }
    let gh = GaussHermite::new(HERMITE_NODES);
    let c = spec.log_normalizer();
    let sigma = spec.noise_sigma;
    let two_var = 2.0 * sigma * sigma;
    let density = 1.0 / spec.x_support.width();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let mut centered = vec![0.0; m];
    let entries = integrate_adaptive_vec(&spec.x_breaks(), pairs.len(), Tolerance::default(), |x, out| {
        let f = trapezoid(x);
        let means: Vec<f64> = opt.optima.iter().map(|w| spec.model_mean(x, w)).collect();
        for (&t, &wt) in gh.nodes().iter().zip(gh.weights()) {
            let y = f + sigma * t;
            for (k, &s) in means.iter().enumerate() {
                centered[k] = -c - (y - s) * (y - s) / two_var + opt.l0;
            }
            for (slot, &(i, j)) in out.iter_mut().zip(&pairs) {
                *slot += density * wt * centered[i] * centered[j];
            }
        }
    })?;
    let mut v = DMatrix::zeros(m, m);
    for (&(i, j), &e) in pairs.iter().zip(&entries) {
        v[(i, j)] = e;
        v[(j, i)] = e;
    }
    CovarianceMatrix::new(v)
}

/// First and second moments of the log density ratio and the verdict on
/// relatively finite variance for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    /// `E[f(X, w01, w02)] = L(w02) − L(w01)`
    pub mean: f64,
    /// `E[f(X, w01, w02)²]`
    pub second_moment: f64,
    /// `Some(true)` when `f ≡ 0`; `Some(false)` when the mean vanishes but the
    /// second moment does not, so no `c0 > 0` can bound the second moment by
    /// the mean; `None` for a non-zero mean, where one pair says nothing.
    pub holds: Option<bool>,
}

impl VarianceCheck {
    /// `V[log p(X|w01) − log p(X|w02)]`
    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }
}

const ZERO_MEAN: f64 = 1e-9;
const ZERO_SECOND_MOMENT: f64 = 1e-12;

/// Moments of `f(X, w01, w02) = log p(X|w01) − log p(X|w02)` by quadrature.
pub fn variance_condition_check(w01: &Parameter, w02: &Parameter, spec: &ModelSpec) -> Result<VarianceCheck> {
    let gh = GaussHermite::new(HERMITE_NODES);
    let sigma = spec.noise_sigma;
    let two_var = 2.0 * sigma * sigma;
    let density = 1.0 / spec.x_support.width();
    let moments = integrate_adaptive_vec(&spec.x_breaks(), 2, Tolerance::default(), |x, out| {
        let f = trapezoid(x);
        let s1 = spec.model_mean(x, w01);
        let s2 = spec.model_mean(x, w02);
        for (&t, &wt) in gh.nodes().iter().zip(gh.weights()) {
            let y = f + sigma * t;
            let ratio = ((y - s2) * (y - s2) - (y - s1) * (y - s1)) / two_var;
            out[0] += density * wt * ratio;
            out[1] += density * wt * ratio * ratio;
        }
    })?;
    let (mean, second_moment) = (moments[0], moments[1]);
    let holds = if second_moment <= ZERO_SECOND_MOMENT {
        Some(true)
    } else if mean.abs() <= ZERO_MEAN {
        Some(false)
    } else {
        None
    };
    Ok(VarianceCheck {
        mean,
        second_moment,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interval;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::OnceLock;

    fn default_optima() -> &'static OptimumSet {
        static OPT: OnceLock<OptimumSet> = OnceLock::new();
        OPT.get_or_init(|| find_optima(&ModelSpec::default(), &SearchConfig::default()).unwrap())
    }

    #[test]
    fn zero_gap_loss_is_the_noise_entropy() {
        // With the model mean replaced by f itself, only the σ² term survives.
        let spec = ModelSpec::default();
        let got = integrate_adaptive(&spec.x_breaks(), Tolerance::default(), |x| {
            let d = trapezoid(x) - trapezoid(x);
            0.25 * (spec.log_normalizer() + (d * d + 0.04) / 0.08)
        })
        .unwrap();
        assert_abs_diff_eq!(got, spec.log_normalizer() + 0.5, epsilon = 1e-14);
    }

    #[test]
    fn loss_is_even_in_the_slope() {
        let spec = ModelSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let w = Parameter::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let l = log_loss(&w, &spec).unwrap();
            let r = log_loss(&w.mirrored(), &spec).unwrap();
            assert_abs_diff_eq!(l, r, epsilon = 1e-10);
        }
    }

    #[test]
    fn fixed_rule_matches_adaptive_near_the_optima() {
        let spec = ModelSpec::default();
        let rule = LossRule::new(&spec, LossRule::DEFAULT_ORDER);
        for w in [Parameter::new(5.1, 7.7), Parameter::new(-3.0, 2.0), Parameter::new(0.0, 0.0)] {
            assert_abs_diff_eq!(rule.loss(&w), log_loss(&w, &spec).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let spec = ModelSpec::default();
        let rule = LossRule::new(&spec, LossRule::DEFAULT_ORDER);
        let w = Parameter::new(3.0, 4.0);
        let (g, h) = rule.gradient_hessian(&w);
        let e = 1e-5;
        let fd_a = (rule.loss(&Parameter::new(w.a + e, w.b)) - rule.loss(&Parameter::new(w.a - e, w.b))) / (2.0 * e);
        let fd_b = (rule.loss(&Parameter::new(w.a, w.b + e)) - rule.loss(&Parameter::new(w.a, w.b - e))) / (2.0 * e);
        assert_abs_diff_eq!(g[0], fd_a, epsilon = 1e-7);
        assert_abs_diff_eq!(g[1], fd_b, epsilon = 1e-7);
        let ga = rule.gradient_hessian(&Parameter::new(w.a + e, w.b)).0;
        let gb = rule.gradient_hessian(&Parameter::new(w.a - e, w.b)).0;
        assert_abs_diff_eq!(h[0][0], (ga[0] - gb[0]) / (2.0 * e), epsilon = 1e-6);
        assert_abs_diff_eq!(h[1][0], (ga[1] - gb[1]) / (2.0 * e), epsilon = 1e-6);
        assert_abs_diff_eq!(h[0][1], h[1][0], epsilon = 1e-14);
    }

    #[test]
    fn finds_the_two_mirrored_optima() {
        let opt = default_optima();
        assert_eq!(opt.len(), 2);
        let (w1, w2) = (opt.optima[0], opt.optima[1]);
        assert!((w1.a - 5.13).abs() < 0.02 && (w1.b - 7.71).abs() < 0.02, "{w1:?}");
        assert!((w2.a + 5.13).abs() < 0.02 && (w2.b - 7.71).abs() < 0.02, "{w2:?}");
        assert_abs_diff_eq!(w1.a, -w2.a, epsilon = 1e-6);
        assert_abs_diff_eq!(w1.b, w2.b, epsilon = 1e-6);
        assert_eq!(opt.rlct, vec![1.0, 1.0]);
        assert_eq!(opt.multiplicity, vec![1, 1]);
        assert_eq!(opt.branch_of(&w1), Some(0));
        assert_eq!(opt.branch_of(&w2), Some(1));
        // half-open convention: a = 0 belongs to the a ≥ 0 branch
        assert_eq!(opt.branch_of(&Parameter::new(0.0, 3.0)), Some(0));
    }

    #[test]
    fn average_error_vanishes_at_optima_and_is_symmetric() {
        let spec = ModelSpec::default();
        let opt = default_optima();
        for w in &opt.optima {
            assert_abs_diff_eq!(avg_error(w, opt, &spec).unwrap(), 0.0, epsilon = 1e-8);
        }
        let w = Parameter::new(2.5, -1.0);
        assert_abs_diff_eq!(
            avg_error(&w, opt, &spec).unwrap(),
            avg_error(&w.mirrored(), opt, &spec).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn average_error_far_from_optimum_matches_monte_carlo() {
        let spec = ModelSpec::default();
        let opt = default_optima();
        let w0 = opt.optima[0];
        let w = Parameter::new(0.0, -20.0);
        let k = avg_error(&w, opt, &spec).unwrap();
        assert!(k > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.random_range(-2.0..2.0);
            let y = trapezoid(x) + 0.2 * rng.sample::<f64, _>(StandardNormal);
            let f = crate::model::log_model_density(x, y, &w0, &spec) - crate::model::log_model_density(x, y, &w, &spec);
            sum += f;
            sq += f * f;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - k).abs() < 3.0 * se, "quadrature {k}, monte carlo {mean} ± {se}");
    }

    #[test]
    fn restricted_box_has_one_optimum() {
        let spec = ModelSpec::default().with_prior_a(Interval(0.5, 20.0));
        let opt = find_optima(&spec, &SearchConfig::default()).unwrap();
        assert_eq!(opt.len(), 1);
        assert_eq!(opt.branches, vec![Region::All]);
        assert!((opt.optima[0].a - 5.13).abs() < 0.02);
    }

    #[test]
    fn search_is_stable_under_grid_doubling() {
        let spec = ModelSpec::default();
        let coarse = default_optima();
        let fine = find_optima(&spec, &SearchConfig { grid_points: 161, ..SearchConfig::default() }).unwrap();
        assert_eq!(coarse.len(), fine.len());
        for (a, b) in coarse.optima.iter().zip(&fine.optima) {
            assert!(a.distance(b) < 1e-6, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn optimum_on_the_boundary_is_a_configuration_error() {
        // the true optimum is outside this box, so the best point sits on its edge
        let spec = ModelSpec::default().with_prior_a(Interval(8.0, 20.0));
        assert!(matches!(
            find_optima(&spec, &SearchConfig::default()),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn covariance_is_symmetric_and_mirrored() {
        let spec = ModelSpec::default();
        let opt = default_optima();
        let v = covariance(opt, &spec).unwrap();
        assert_eq!(v.dim(), 2);
        assert_abs_diff_eq!(v.get(0, 0), v.get(1, 1), epsilon = 1e-8);
        assert_eq!(v.get(0, 1), v.get(1, 0));
        assert!(v.eigenvalues().iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn covariance_matches_monte_carlo() {
        let spec = ModelSpec::default();
        let opt = default_optima();
        let v = covariance(opt, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000usize;
        let mut sums = [0.0; 3];
        let mut sqs = [0.0; 3];
        for _ in 0..n {
            let x = rng.random_range(-2.0..2.0);
            let y = trapezoid(x) + 0.2 * rng.sample::<f64, _>(StandardNormal);
            let l1 = crate::model::log_model_density(x, y, &opt.optima[0], &spec) + opt.l0;
            let l2 = crate::model::log_model_density(x, y, &opt.optima[1], &spec) + opt.l0;
            for (k, p) in [l1 * l1, l1 * l2, l2 * l2].into_iter().enumerate() {
                sums[k] += p;
                sqs[k] += p * p;
            }
        }
        let nf = n as f64;
        for (k, (i, j)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let mean = sums[k] / nf;
            let se = ((sqs[k] / nf - mean * mean) / nf).sqrt();
            assert!(
                (mean - v.get(i, j)).abs() < 3.0 * se,
                "V[{i}{j}] quadrature {} vs monte carlo {mean} ± {se}",
                v.get(i, j)
            );
        }
    }

    #[test]
    fn duplicated_optimum_gives_a_rank_one_covariance() {
        let spec = ModelSpec::default();
        let w = default_optima().optima[0];
        let dup = OptimumSet {
            optima: vec![w, w],
            branches: vec![Region::All, Region::All],
            rlct: vec![1.0; 2],
            multiplicity: vec![1; 2],
            l0: default_optima().l0,
        };
        let v = covariance(&dup, &spec).unwrap();
        assert_abs_diff_eq!(v.get(0, 0), v.get(0, 1), epsilon = 1e-12);
        assert_abs_diff_eq!(v.get(1, 1), v.get(0, 1), epsilon = 1e-12);
    }

    #[test]
    fn ratio_variance_equals_covariance_combination() {
        let spec = ModelSpec::default();
        let opt = default_optima();
        let v = covariance(opt, &spec).unwrap();
        let check = variance_condition_check(&opt.optima[0], &opt.optima[1], &spec).unwrap();
        let combo = v.get(0, 0) + v.get(1, 1) - v.get(0, 1) - v.get(1, 0);
        assert_abs_diff_eq!(check.variance(), combo, epsilon = 1e-8);
    }

    #[test]
    fn variance_condition_on_identical_and_generic_pairs() {
        let spec = ModelSpec::default();
        let w = Parameter::new(1.0, 2.0);
        let same = variance_condition_check(&w, &w, &spec).unwrap();
        assert_eq!((same.mean, same.second_moment, same.holds), (0.0, 0.0, Some(true)));

        let opt = default_optima();
        let generic = variance_condition_check(&opt.optima[0], &Parameter::new(1.0, 0.0), &spec).unwrap();
        assert!(generic.mean.abs() > 1e-3);
        assert_eq!(generic.holds, None);
    }

    #[test]
    fn mirrored_optima_violate_relative_finite_variance() {
        let spec = ModelSpec::default();
        let opt = default_optima();
        let check = variance_condition_check(&opt.optima[0], &opt.optima[1], &spec).unwrap();
        assert!(check.mean.abs() < 1e-6);
        assert!(check.second_moment > 0.1);
        assert_eq!(check.holds, Some(false));
    }

    #[test]
    fn optimum_set_round_trips_through_json() {
        let opt = default_optima();
        let back = OptimumSet::from_json(&opt.to_json().unwrap()).unwrap();
        assert_eq!(&back, opt);
        let json = opt.to_json().unwrap();
        assert!(json.contains("\"L0\"") && json.contains("\"half_plane\""));
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        assert!(CovarianceMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(CovarianceMatrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
        assert!(CovarianceMatrix::from_rows(&[vec![1.0, 0.5]]).is_err());
        assert!(CovarianceMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_ok());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn average_error_is_nonnegative(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let spec = ModelSpec::default();
            let opt = default_optima();
            let w = Parameter::new(a, b);
            let k = avg_error(&w, opt, &spec).unwrap();
            proptest::prop_assert!(k >= -1e-10);
            proptest::prop_assert!((log_loss(&w, &spec).unwrap() - (k + opt.l0)).abs() < 1e-14);
        }
    }
}
