//! Finite-sample Bayesian quantities for one dataset.
//!
//! With `ℓ(w) = Σ_j log p(y_j | x_j, w) = −n L_n(w)` evaluated on a
//! [`QuadratureGrid`], the marginal likelihood is
//! `log Z_n(β) = log Σ_k exp(β ℓ(w_k)) · mass_k` and `F_n(β) = −log Z_n(β) / β`.
//!
//! Restricting the sum to branch `i` and shifting by the value at its optimum
//! gives `log Z0_i = log Σ_{k ∈ i} exp(−nβ K_ni(w_k)) mass_k` with
//! `K_ni(w) = L_n(w) − L_n(w_0i)`, so that `Z_n = Σ_i exp(−nβ L_ni) Z0_i`.
//! `Z0_i` is further split into nodes with population `K < ε(n)` (`Z1_i`)
//! and the rest (`Z2_i`). `β` multiplies `K_ni` in all three.

mod grid;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use grid::{build_grid, epsilon, GridSettings, QuadratureGrid};

use crate::asymptotics::argmax_with_tie_break;
use crate::error::{Error, Result};
use crate::model::{log_model_density, sigmoid, trapezoid, Dataset, ModelSpec, Parameter};
use crate::population::OptimumSet;
use crate::quadrature::{CompositeRule, GaussHermite};

/// `log Σ exp(v)` with the maximum factored out; `−∞` for an empty input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `L_n(w) = −(1/n) Σ_j log p(y_j | x_j, w)`.
///
/// # Panics
/// If the dataset is empty.
pub fn empirical_log_loss(data: &Dataset, w: &Parameter, spec: &ModelSpec) -> f64 {
    assert!(data.n() > 0, "empirical log loss of an empty dataset");
    -data.pairs.iter().map(|&(x, y)| log_model_density(x, y, w, spec)).sum::<f64>() / data.n() as f64
}

/// `ℓ(w_k) = Σ_j log p(y_j | x_j, w_k)` at every grid node.
pub fn node_log_likelihood(data: &Dataset, grid: &QuadratureGrid, spec: &ModelSpec) -> Vec<f64> {
    let xs: Vec<f64> = data.pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = data.pairs.iter().map(|p| p.1).collect();
    let half_precision = 0.5 / (spec.noise_sigma * spec.noise_sigma);
    let constant = data.n() as f64 * spec.log_normalizer();
    grid.nodes()
        .par_iter()
        .with_min_len(64)
        .map(|w| {
            let mut sq = 0.0;
            for (&x, &y) in xs.iter().zip(&ys) {
                // exp overflow for very negative arguments still yields the right limit 0
                let r = y - 1.0 / (1.0 + (-(w.a * x + w.b)).exp());
                sq += r * r;
            }
            -sq * half_precision - constant
        })
        .collect()
}

/// Per-branch part of a [`FreeEnergyEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    /// `L_n(w_0i)`.
    pub l_n: f64,
    pub log_z0: f64,
    pub log_z1: f64,
    pub log_z2: f64,
    /// Branch weight `a_i`.
    pub a: f64,
}

/// Free energy of one dataset together with its branch decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub n: usize,
    pub seed: u64,
    pub beta: f64,
    /// `F_n(β)` in nats.
    #[serde(rename = "F")]
    pub f: f64,
    /// `log Z_n(β)` summed directly over all nodes.
    pub log_z: f64,
    pub branches: Vec<BranchRecord>,
    /// Zero-based index of the branch with the smallest `L_ni`.
    pub i_max: usize,
    pub epsilon: f64,
}

impl FreeEnergyEstimate {
    /// `log Σ_i exp(−nβ L_ni + log Z0_i)`.
    pub fn recombined_log_z(&self) -> f64 {
        let nb = self.n as f64 * self.beta;
        log_sum_exp(self.branches.iter().map(|b| -nb * b.l_n + b.log_z0))
    }

    /// `Y = −nβ L_{n,i_max}`.
    pub fn y_statistic(&self) -> f64 {
        -(self.n as f64) * self.beta * self.branches[self.i_max].l_n
    }

    pub fn l_n(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.l_n).collect()
    }
}

/// Normalized `a_i ∝ exp(−nβ L_ni − λ_i log n + (m_i − 1) log log n)`.
///
/// The largest weight is set to one minus the others so that the weights sum
/// to one without a rounding residue for two branches.
pub fn weights_from_losses(n: usize, beta: f64, l_n: &[f64], opt: &OptimumSet) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::Domain(format!("branch weights need n ≥ 3 for log log n, got {n}")));
    }
    if l_n.len() != opt.len() {
        return Err(Error::InvalidArgument(format!("{} losses for {} branches", l_n.len(), opt.len())));
    }
    let (ln_n, lnln_n) = ((n as f64).ln(), (n as f64).ln().ln());
    let logits: Vec<f64> = l_n
        .iter()
        .zip(opt.rlct.iter().zip(&opt.multiplicity))
        .map(|(&l, (&lambda, &m))| -(n as f64) * beta * l - lambda * ln_n + (m as f64 - 1.0) * lnln_n)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    let mut a: Vec<f64> = shifted.iter().map(|&e| e / total).collect();
    let top = (0..a.len()).fold(0, |best, i| if a[i] > a[best] { i } else { best });
    a[top] = 1.0 - a.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, v)| v).sum::<f64>();
    Ok(a)
}

/// Branch weights of a completed estimate.
pub fn branch_weights(est: &FreeEnergyEstimate, opt: &OptimumSet) -> Result<Vec<f64>> {
    weights_from_losses(est.n, est.beta, &est.l_n(), opt)
}

/// `argmax_i(−L_ni)`, ties going to the smaller RLCT and then the larger multiplicity.
pub fn i_max(l_n: &[f64], opt: &OptimumSet) -> usize {
    let neg: Vec<f64> = l_n.iter().map(|l| -l).collect();
    argmax_with_tie_break(&neg, &opt.rlct, &opt.multiplicity)
}

/// Free energy from precomputed node log likelihoods and branch losses.
///
/// Several `β` values can share one `loglik` vector.
pub fn free_energy_from_parts(
    n: usize,
    seed: u64,
    loglik: &[f64],
    l_n: &[f64],
    grid: &QuadratureGrid,
    opt: &OptimumSet,
    beta: f64,
) -> Result<FreeEnergyEstimate> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if loglik.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} node log likelihoods for {} nodes",
            loglik.len(),
            grid.len()
        )));
    }
    if grid.branch_count() != opt.len() {
        return Err(Error::InvalidArgument(format!(
            "grid built for {} branches, optimum set has {}",
            grid.branch_count(),
            opt.len()
        )));
    }
    let a = weights_from_losses(n, beta, l_n, opt)?;
    let eps = epsilon(n, grid.settings().epsilon_exponent);
    let m = opt.len();
    let terms: Vec<f64> = loglik.iter().zip(grid.log_mass()).map(|(&l, &lm)| beta * l + lm).collect();
    let inner = |k: usize| grid.avg_error()[k] < eps;

    // sequential maxima and sums keep the result bit-stable
    let mut max_all = f64::NEG_INFINITY;
    let mut max_branch = vec![f64::NEG_INFINITY; m];
    let mut max_part = vec![[f64::NEG_INFINITY; 2]; m];
    for (k, &t) in terms.iter().enumerate() {
        let i = grid.branches()[k];
        let part = usize::from(!inner(k));
        max_all = max_all.max(t);
        max_branch[i] = max_branch[i].max(t);
        max_part[i][part] = max_part[i][part].max(t);
    }
    let mut sum_all = 0.0;
    let mut sum_branch = vec![0.0; m];
    let mut sum_part = vec![[0.0; 2]; m];
    for (k, &t) in terms.iter().enumerate() {
        let i = grid.branches()[k];
        let part = usize::from(!inner(k));
        sum_all += (t - max_all).exp();
        sum_branch[i] += (t - max_branch[i]).exp();
        sum_part[i][part] += (t - max_part[i][part]).exp();
    }
    let finish = |max: f64, sum: f64| if sum > 0.0 { max + sum.ln() } else { f64::NEG_INFINITY };
    let log_z = finish(max_all, sum_all);
    if !log_z.is_finite() {
        return Err(Error::Domain(format!("log Z_n is not finite ({log_z}) for dataset seed {seed}")));
    }
    let nb = n as f64 * beta;
    let branches = (0..m)
        .map(|i| BranchRecord {
            l_n: l_n[i],
            log_z0: finish(max_branch[i], sum_branch[i]) + nb * l_n[i],
            log_z1: finish(max_part[i][0], sum_part[i][0]) + nb * l_n[i],
            log_z2: finish(max_part[i][1], sum_part[i][1]) + nb * l_n[i],
            a: a[i],
        })
        .collect();
    Ok(FreeEnergyEstimate {
        n,
        seed,
        beta,
        f: -log_z / beta,
        log_z,
        branches,
        i_max: i_max(l_n, opt),
        epsilon: eps,
    })
}

/// `L_n(w_0i)` for every optimum.
pub fn branch_losses(data: &Dataset, opt: &OptimumSet, spec: &ModelSpec) -> Vec<f64> {
    opt.optima.iter().map(|w| empirical_log_loss(data, w, spec)).collect()
}

/// `F_n(β)` and its branch decomposition for one dataset.
pub fn free_energy(
    data: &Dataset,
    grid: &QuadratureGrid,
    opt: &OptimumSet,
    spec: &ModelSpec,
    beta: f64,
) -> Result<FreeEnergyEstimate> {
    let loglik = node_log_likelihood(data, grid, spec);
    free_energy_from_parts(data.n(), data.seed, &loglik, &branch_losses(data, opt, spec), grid, opt, beta)
}

/// Quadrature used for the predictive generalization loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictiveRule {
    /// Gauss–Legendre nodes per `x` panel.
    pub x_order: usize,
    /// Gauss–Hermite nodes in the response.
    pub y_nodes: usize,
    /// Posterior mass allowed to be dropped from the smallest nodes.
    pub prune: f64,
}

impl Default for PredictiveRule {
    fn default() -> Self {
        Self {
            x_order: 20,
            y_nodes: 40,
            prune: 1e-12,
        }
    }
}

/// Normalized posterior weights `∝ exp(β ℓ(w_k)) · mass_k`.
pub fn posterior_weights(loglik: &[f64], grid: &QuadratureGrid, beta: f64) -> Vec<f64> {
    let terms: Vec<f64> = loglik.iter().zip(grid.log_mass()).map(|(&l, &m)| beta * l + m).collect();
    let total = log_sum_exp(terms.iter().copied());
    terms.iter().map(|t| (t - total).exp()).collect()
}

/// `G_n = −E_{x,y}[log p(y | x, D)]` for a posterior over parameter nodes.
///
/// Nodes are taken in decreasing weight until all but `rule.prune` of the
/// mass is covered; the kept weights are renormalized.
pub fn gen_loss_from_posterior(nodes: &[Parameter], weights: &[f64], spec: &ModelSpec, rule: &PredictiveRule) -> Result<f64> {
    if nodes.len() != weights.len() || nodes.is_empty() {
        return Err(Error::InvalidArgument("posterior needs matching, non-empty nodes and weights".into()));
    }
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&i, &j| weights[j].total_cmp(&weights[i]).then(i.cmp(&j)));
    let total: f64 = weights.iter().sum();
    let mut kept = Vec::new();
    let mut covered = 0.0;
    for &i in &order {
        if covered >= (1.0 - rule.prune) * total {
            break;
        }
        covered += weights[i];
        kept.push(i);
    }
    let log_w: Vec<f64> = kept.iter().map(|&i| (weights[i] / covered).ln()).collect();
    let params: Vec<Parameter> = kept.iter().map(|&i| nodes[i]).collect();

    let xs = CompositeRule::new(&spec.x_breaks(), rule.x_order).scaled(1.0 / spec.x_support.width());
    let gh = GaussHermite::new(rule.y_nodes);
    let sigma = spec.noise_sigma;
    let half_precision = 0.5 / (sigma * sigma);
    let per_x: Vec<f64> = xs
        .nodes()
        .par_iter()
        .map(|&x| {
            let f = trapezoid(x);
            let means: Vec<f64> = params.iter().map(|w| sigmoid(w.a * x + w.b)).collect();
            let mut acc = 0.0;
            let mut logs = vec![0.0; means.len()];
            for (&t, &g) in gh.nodes().iter().zip(gh.weights()) {
                let y = f + sigma * t;
                let mut max = f64::NEG_INFINITY;
                for ((l, &s), &lw) in logs.iter_mut().zip(&means).zip(&log_w) {
                    let r = y - s;
                    *l = lw - r * r * half_precision;
                    max = max.max(*l);
                }
                let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
                acc += g * (max + sum.ln());
            }
            acc
        })
        .collect();
    let expected_log: f64 = per_x.iter().zip(xs.weights()).map(|(v, q)| v * q).sum();
    Ok(spec.log_normalizer() - expected_log)
}

/// `G_n(1)` from precomputed node log likelihoods.
pub fn gen_loss_from_log_likelihood(loglik: &[f64], grid: &QuadratureGrid, spec: &ModelSpec, rule: &PredictiveRule) -> Result<f64> {
    if loglik.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} node log likelihoods for {} nodes",
            loglik.len(),
            grid.len()
        )));
    }
    gen_loss_from_posterior(grid.nodes(), &posterior_weights(loglik, grid, 1.0), spec, rule)
}

/// `G_n(1)` of the Bayes predictive distribution for one dataset.
pub fn gen_loss_direct(data: &Dataset, grid: &QuadratureGrid, opt: &OptimumSet, spec: &ModelSpec) -> Result<f64> {
    if grid.branch_count() != opt.len() {
        return Err(Error::InvalidArgument("grid and optimum set disagree on the branch count".into()));
    }
    gen_loss_from_log_likelihood(&node_log_likelihood(data, grid, spec), grid, spec, &PredictiveRule::default())
}

/// `Y/β = −n L_{n,i_max}` and the centred, scaled statistics `√n (L0 − L_ni)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxStatistic {
    pub y_over_beta: f64,
    pub scripts: Vec<f64>,
}

pub fn max_statistic(data: &Dataset, opt: &OptimumSet, spec: &ModelSpec) -> MaxStatistic {
    let l_n = branch_losses(data, opt, spec);
    let n = data.n() as f64;
    MaxStatistic {
        y_over_beta: -n * l_n[i_max(&l_n, opt)],
        scripts: l_n.iter().map(|l| n.sqrt() * (opt.l0 - l)).collect(),
    }
}

/// Gradient and Hessian of `L_n` in `(a, b)`.
fn empirical_gradient_hessian(data: &Dataset, w: &Parameter, spec: &ModelSpec) -> ([f64; 2], [[f64; 2]; 2]) {
    let var = spec.noise_sigma * spec.noise_sigma;
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for &(x, y) in &data.pairs {
        let s = sigmoid(w.a * x + w.b);
        let r = y - s;
        let s1 = s * (1.0 - s);
        let s2 = s1 * (1.0 - 2.0 * s);
        let dt = [x, 1.0];
        for i in 0..2 {
            g[i] -= r * s1 * dt[i];
            for j in 0..2 {
                h[i][j] += (s1 * s1 - r * s2) * dt[i] * dt[j];
            }
        }
    }
    let scale = 1.0 / (var * data.n() as f64);
    for i in 0..2 {
        g[i] *= scale;
        for j in 0..2 {
            h[i][j] *= scale;
        }
    }
    (g, h)
}

/// Laplace approximation of `log Z_n(β)` around the empirical minimizer in each branch.
///
/// A sanity check for the grid at large `n`; it ignores the prior boundary
/// and any non-Gaussian shape of the posterior.
pub fn laplace_log_evidence(data: &Dataset, opt: &OptimumSet, spec: &ModelSpec, beta: f64) -> Result<f64> {
    let n = data.n() as f64;
    let mut parts = Vec::with_capacity(opt.len());
    for (i, start) in opt.optima.iter().enumerate() {
        let mut w = *start;
        let mut value = empirical_log_loss(data, &w, spec);
        for _ in 0..100 {
            let (g, h) = empirical_gradient_hessian(data, &w, spec);
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if !(det > 0.0 && h[0][0] > 0.0) {
                return Err(Error::Domain(format!("empirical Hessian in branch {} is not positive definite", i + 1)));
            }
            let step = [
                (h[1][1] * g[0] - h[0][1] * g[1]) / det,
                (h[0][0] * g[1] - h[1][0] * g[0]) / det,
            ];
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-8 {
                let trial = Parameter::new(w.a - t * step[0], w.b - t * step[1]);
                let v = empirical_log_loss(data, &trial, spec);
                if v <= value {
                    moved = (trial.a - w.a).abs() + (trial.b - w.b).abs() > 1e-13;
                    w = trial;
                    value = v;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if opt.branch_of(&w) != Some(i) || !spec.in_prior_box(&w) {
            return Err(Error::Domain(format!(
                "empirical minimizer of branch {} left its branch or the prior box",
                i + 1
            )));
        }
        let (_, h) = empirical_gradient_hessian(data, &w, spec);
        let det = (n * beta).powi(2) * (h[0][0] * h[1][1] - h[0][1] * h[1][0]);
        parts.push(-n * beta * value + spec.prior_density(&w).ln() + (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln());
    }
    Ok(log_sum_exp(parts))
}

/// One row of the per-run CSV; columns for a second branch stay empty with one optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub n: usize,
    pub seed: u64,
    pub beta: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "L_n1")]
    pub l_n1: f64,
    #[serde(rename = "L_n2")]
    pub l_n2: Option<f64>,
    #[serde(rename = "logZ01")]
    pub log_z01: f64,
    #[serde(rename = "logZ02")]
    pub log_z02: Option<f64>,
    #[serde(rename = "logZ11")]
    pub log_z11: f64,
    #[serde(rename = "logZ12")]
    pub log_z12: Option<f64>,
    #[serde(rename = "logZ21")]
    pub log_z21: f64,
    #[serde(rename = "logZ22")]
    pub log_z22: Option<f64>,
    pub a_1: f64,
    pub a_2: Option<f64>,
    /// One-based.
    pub i_max: usize,
    pub epsilon: f64,
}

pub const RUN_HEADER: [&str; 16] = [
    "n", "seed", "beta", "F", "L_n1", "L_n2", "logZ01", "logZ02", "logZ11", "logZ12", "logZ21", "logZ22", "a_1", "a_2",
    "i_max", "epsilon",
];

impl RunRecord {
    pub fn from_estimate(est: &FreeEnergyEstimate) -> Result<Self> {
        let b = &est.branches;
        if b.is_empty() || b.len() > 2 {
            return Err(Error::Unsupported(format!("run CSV holds one or two branches, got {}", b.len())));
        }
        let second = b.get(1);
        Ok(Self {
            n: est.n,
            seed: est.seed,
            beta: est.beta,
            f: est.f,
            l_n1: b[0].l_n,
            l_n2: second.map(|s| s.l_n),
            log_z01: b[0].log_z0,
            log_z02: second.map(|s| s.log_z0),
            log_z11: b[0].log_z1,
            log_z12: second.map(|s| s.log_z1),
            log_z21: b[0].log_z2,
            log_z22: second.map(|s| s.log_z2),
            a_1: b[0].a,
            a_2: second.map(|s| s.a),
            i_max: est.i_max + 1,
            epsilon: est.epsilon,
        })
    }
}

/// Writes per-run rows with the standard header.
pub fn write_runs(path: impl AsRef<Path>, rows: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    if rows.is_empty() {
        w.write_record(RUN_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_runs(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != RUN_HEADER {
        return Err(Error::InvalidArgument(format!("{}: unexpected header {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
