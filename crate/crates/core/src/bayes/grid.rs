//! Deterministic quadrature over the prior box.
//!
//! The box is split into uniform coarse cells. A cell is subdivided when the
//! population error `K` at its centre or any corner falls below
//! `refine_nats / n`; elsewhere the posterior weight is below `exp(−refine_nats)`
//! relative to the peak and the coarse midpoint suffices. Fine cells have
//! side about `fine_spacing / √n`, a fixed fraction of the posterior width in
//! the stiff direction, so the node count stays roughly flat in `n`.
//!
//! Every node carries its cell area, prior mass, `K`, and the branch of its
//! centre, so the branches partition the nodes exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Parameter};
use crate::population::{LossRule, OptimumSet};

/// Resolution of a [`QuadratureGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSettings {
    /// Sample size the refinement is tuned for.
    pub sample_size: usize,
    /// Coarse cells per axis.
    pub coarse_cells: usize,
    /// Cells with `n K` below this many nats are subdivided.
    pub refine_nats: f64,
    /// Fine cell side times `√n`.
    pub fine_spacing: f64,
    /// Cap on subdivisions per axis of one coarse cell.
    pub max_subdivision: usize,
    /// `ε(n) = n^(−epsilon_exponent)` separates the inner and outer parts of each branch.
    pub epsilon_exponent: f64,
    /// Order of the fixed `x` rule used to evaluate `K` at the nodes.
    pub loss_order: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            sample_size: 100,
            coarse_cells: 100,
            refine_nats: 40.0,
            fine_spacing: 1.0,
            max_subdivision: 64,
            epsilon_exponent: 0.25,
            loss_order: LossRule::DEFAULT_ORDER,
        }
    }
}

impl GridSettings {
    pub fn for_sample_size(n: usize) -> Self {
        Self {
            sample_size: n,
            ..Self::default()
        }
    }

    pub fn with_sample_size(self, n: usize) -> Self {
        Self { sample_size: n, ..self }
    }

    /// Twice the resolution in both the coarse and the fine layer.
    pub fn doubled(self) -> Self {
        Self {
            coarse_cells: 2 * self.coarse_cells,
            fine_spacing: 0.5 * self.fine_spacing,
            max_subdivision: 2 * self.max_subdivision,
            ..self
        }
    }

    pub fn epsilon(&self) -> f64 {
        epsilon(self.sample_size, self.epsilon_exponent)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("grid settings: {what}")));
        if self.sample_size == 0 {
            return bad("sample_size must be positive");
        }
        if self.coarse_cells == 0 || self.max_subdivision == 0 || self.loss_order == 0 {
            return bad("cell counts and rule order must be positive");
        }
        if !(self.refine_nats >= 0.0 && self.refine_nats.is_finite()) {
            return bad("refine_nats must be finite and non-negative");
        }
        if !(self.fine_spacing > 0.0 && self.fine_spacing.is_finite()) {
            return bad("fine_spacing must be positive");
        }
        if !(self.epsilon_exponent > 0.0 && self.epsilon_exponent < 0.5) {
            // ε → 0 needs a positive exponent and √n ε → ∞ needs one below ½
            return bad("epsilon_exponent must lie in (0, 1/2)");
        }
        Ok(())
    }
}

/// `ε(n) = n^(−exponent)`.
pub fn epsilon(n: usize, exponent: f64) -> f64 {
    (n as f64).powf(-exponent)
}

/// Nodes, cell areas, and per-node metadata for integrating over the prior.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    nodes: Vec<Parameter>,
    weights: Vec<f64>,
    log_mass: Vec<f64>,
    k: Vec<f64>,
    branch: Vec<usize>,
    branch_count: usize,
    settings: GridSettings,
    refined_cells: usize,
}

impl QuadratureGrid {
    /// Builds a grid from explicit nodes and cell areas.
    ///
    /// `K` is evaluated at each node and each node is assigned to the branch
    /// containing it.
    pub fn from_nodes(
        nodes: Vec<Parameter>,
        weights: Vec<f64>,
        opt: &OptimumSet,
        spec: &ModelSpec,
        settings: GridSettings,
    ) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("grid weights must be positive".into()));
        }
        let rule = LossRule::new(spec, settings.loss_order);
        let k = nodes.par_iter().map(|w| rule.loss(w) - opt.l0).collect();
        Self::assemble(nodes, weights, k, opt, spec, settings, 0)
    }

    fn assemble(
        nodes: Vec<Parameter>,
        weights: Vec<f64>,
        k: Vec<f64>,
        opt: &OptimumSet,
        spec: &ModelSpec,
        settings: GridSettings,
        refined_cells: usize,
    ) -> Result<Self> {
        let mut branch = Vec::with_capacity(nodes.len());
        let mut counts = vec![0usize; opt.len()];
        for w in &nodes {
            let i = opt.branch_of(w).ok_or_else(|| {
                Error::Configuration(format!("grid node ({}, {}) lies in no single branch", w.a, w.b))
            })?;
            counts[i] += 1;
            branch.push(i);
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Configuration(format!("branch {} has no grid nodes", i + 1)));
        }
        let log_mass = nodes
            .iter()
            .zip(&weights)
            .map(|(w, &area)| (area * spec.prior_density(w)).ln())
            .collect();
        Ok(Self {
            nodes,
            weights,
            log_mass,
            k,
            branch,
            branch_count: opt.len(),
            settings,
            refined_cells,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Parameter] {
        &self.nodes
    }

    /// Cell areas.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `log(area · prior density)` per node.
    pub fn log_mass(&self) -> &[f64] {
        &self.log_mass
    }

    /// Population `K` per node.
    pub fn avg_error(&self) -> &[f64] {
        &self.k
    }

    /// Branch index per node.
    pub fn branches(&self) -> &[usize] {
        &self.branch
    }

    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    pub fn settings(&self) -> &GridSettings {
        &self.settings
    }

    /// Number of coarse cells that were subdivided.
    pub fn refined_cells(&self) -> usize {
        self.refined_cells
    }

    /// `Σ weight · prior(node)`; one up to rounding for a grid covering the box.
    pub fn prior_mass(&self) -> f64 {
        self.log_mass.iter().map(|l| l.exp()).sum()
    }
}

/// Builds the two-level grid described in the module docs.
pub fn build_grid(opt: &OptimumSet, spec: &ModelSpec, settings: &GridSettings) -> Result<QuadratureGrid> {
    spec.validate()?;
    opt.validate()?;
    settings.validate()?;
    let rule = LossRule::new(spec, settings.loss_order);
    let cells = settings.coarse_cells;
    let (a0, b0) = (spec.prior_a.lo(), spec.prior_b.lo());
    let (da, db) = (spec.prior_a.width() / cells as f64, spec.prior_b.width() / cells as f64);
    let n = settings.sample_size as f64;
    let threshold = settings.refine_nats / n;
    let fine = settings.fine_spacing / n.sqrt();
    let sub_a = ((da / fine).ceil() as usize).clamp(1, settings.max_subdivision);
    let sub_b = ((db / fine).ceil() as usize).clamp(1, settings.max_subdivision);

    // K at the corners and centres of the coarse cells
    let corner_k: Vec<f64> = (0..(cells + 1) * (cells + 1))
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / (cells + 1), idx % (cells + 1));
            rule.loss(&Parameter::new(a0 + i as f64 * da, b0 + j as f64 * db)) - opt.l0
        })
        .collect();
    let centre = |i: usize, j: usize| Parameter::new(a0 + (i as f64 + 0.5) * da, b0 + (j as f64 + 0.5) * db);
    let centre_k: Vec<f64> = (0..cells * cells)
        .into_par_iter()
        .map(|idx| rule.loss(&centre(idx / cells, idx % cells)) - opt.l0)
        .collect();

    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut k = Vec::new();
    let mut pending = Vec::new();
    let mut refined = 0;
    for i in 0..cells {
        for j in 0..cells {
            let c = centre_k[i * cells + j];
            let corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)].map(|(p, q)| corner_k[p * (cells + 1) + q]);
            let lowest = corners.iter().copied().fold(c, f64::min);
            if lowest < threshold && (sub_a > 1 || sub_b > 1) {
                refined += 1;
                let (ha, hb) = (da / sub_a as f64, db / sub_b as f64);
                for p in 0..sub_a {
                    for q in 0..sub_b {
                        let w = Parameter::new(
                            a0 + i as f64 * da + (p as f64 + 0.5) * ha,
                            b0 + j as f64 * db + (q as f64 + 0.5) * hb,
                        );
                        pending.push(nodes.len());
                        nodes.push(w);
                        weights.push(ha * hb);
                        k.push(f64::NAN);
                    }
                }
            } else {
                nodes.push(centre(i, j));
                weights.push(da * db);
                k.push(c);
            }
        }
    }
    let fine_k: Vec<f64> = pending.par_iter().map(|&idx| rule.loss(&nodes[idx]) - opt.l0).collect();
    for (&idx, v) in pending.iter().zip(fine_k) {
        k[idx] = v;
    }
    log::debug!(
        "grid for n = {}: {} nodes, {refined} of {} cells refined {sub_a}×{sub_b}",
        settings.sample_size,
        nodes.len(),
        cells * cells
    );
    QuadratureGrid::assemble(nodes, weights, k, opt, spec, *settings, refined)
}
