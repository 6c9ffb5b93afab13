//! Replicated experiments over many datasets.
//!
//! Every replication `(n, r)` draws its dataset from its own seed
//! [`stream_seed`]`(master_seed, n, r)`, so replications run in any order
//! and on any number of threads. Results are collected in replication order
//! before reduction, which makes serial and parallel runs bit-identical.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{expected_max_mc, mu_closed_form_two, AsymptoticCoefficients, GaussianMaxProblem, McSettings};
use crate::bayes::{
    branch_losses, build_grid, free_energy_from_parts, gen_loss_from_log_likelihood, max_statistic,
    node_log_likelihood, write_runs, FreeEnergyEstimate, GridSettings, PredictiveRule, RunRecord,
};
use crate::error::{Error, Result};
use crate::model::{sample_dataset, stream_seed, ModelSpec};
use crate::population::{CovarianceMatrix, OptimumSet};

/// Hex SHA-256 of the JSON form of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// What to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub beta: f64,
    /// Grid resolution; `sample_size` is replaced by each `n` of the sweep.
    pub grid: GridSettings,
    /// Where `runs.csv`, `summary.csv` and `fit.json` go; nothing is written when unset.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            sample_sizes: (1..=6).map(|k| 100 * k).collect(),
            replications: 200,
            master_seed: 20_240_601,
            beta: 1.0,
            grid: GridSettings::default(),
            output_dir: None,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() {
            return Err(Error::InvalidArgument("no sample sizes".into()));
        }
        if self.sample_sizes[0] < 3 {
            return Err(Error::InvalidArgument(format!(
                "sample sizes must be at least 3, got {}",
                self.sample_sizes[0]
            )));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("sample sizes must be strictly increasing".into()));
        }
        if self.replications < 2 {
            return Err(Error::InvalidArgument(format!(
                "at least 2 replications are needed for a standard error, got {}",
                self.replications
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        self.grid.validate()
    }
}

/// Model, optima and coefficients shared by every replication.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub spec: ModelSpec,
    pub optima: OptimumSet,
    /// Coefficients at `β = 1`; rescaled per run.
    pub coefficients: AsymptoticCoefficients,
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub reps: usize,
    #[serde(rename = "mean_F")]
    pub mean_f: f64,
    #[serde(rename = "se_F")]
    pub se_f: f64,
    #[serde(rename = "L0_times_n")]
    pub l0_times_n: f64,
    #[serde(rename = "theory_minus_nL0")]
    pub theory_minus_nl0: f64,
    pub residual: f64,
}

pub const SUMMARY_HEADER: [&str; 7] = ["n", "reps", "mean_F", "se_F", "L0_times_n", "theory_minus_nL0", "residual"];

impl SummaryRow {
    /// Aggregates the free energies of one sample size.
    pub fn from_free_energies(n: usize, values: &[f64], coeff: &AsymptoticCoefficients) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument("a summary row needs at least 2 replications".into()));
        }
        let s = MeanSe::of(values);
        let l0_times_n = n as f64 * coeff.l0;
        let theory = coeff.with_offset(0.0).free_energy_excess(n)?;
        Ok(Self {
            n,
            reps: values.len(),
            mean_f: s.mean,
            se_f: s.se,
            l0_times_n,
            theory_minus_nl0: theory,
            residual: s.mean - l0_times_n - theory,
        })
    }
}

pub fn write_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    write_csv(path.as_ref(), &SUMMARY_HEADER, rows)
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    read_csv(path.as_ref(), &SUMMARY_HEADER)
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::InvalidArgument(format!("{}: unexpected header {found:?}", path.display())));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Least-squares coefficients of `mean_F − n L0` on `√n`, `log n`, optionally `log log n`, and `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub c_sqrt: f64,
    pub c_log: f64,
    /// Present only when the `log log n` column was used.
    pub c_loglog: Option<f64>,
    pub c_const: f64,
    pub se_sqrt: f64,
    pub se_log: f64,
    pub se_loglog: Option<f64>,
    pub se_const: f64,
}

/// Slope of the residuals against `√n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub se: f64,
    pub intercept: f64,
}

/// Ordinary least squares with standard errors propagated from known
/// per-observation errors: `Cov = X⁺ diag(se²) X⁺ᵀ`.
fn ols(design: &DMatrix<f64>, y: &[f64], se: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = design.nrows();
    let cols = design.ncols();
    if rows < cols {
        return Err(Error::Fit(format!("{rows} observations for {cols} coefficients")));
    }
    // unit-norm columns before the decomposition
    let scale: Vec<f64> = (0..cols).map(|j| design.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let mut x = design.clone();
    for (j, s) in scale.iter().enumerate() {
        x.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Fit(format!("rank-deficient design (singular values {smin:e} / {smax:e})")));
    }
    // pseudo-inverse from the SVD avoids squaring the condition number
    let u = svd.u.as_ref().ok_or_else(|| Error::Fit("SVD failed".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Fit("SVD failed".into()))?;
    let inv_s = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
    let pinv = v_t.transpose() * inv_s * u.transpose();
    let beta = &pinv * DVector::from_column_slice(y);
    let weights = DMatrix::from_diagonal(&DVector::from_iterator(rows, se.iter().map(|s| s * s)));
    let cov = &pinv * weights * pinv.transpose();
    let coef = (0..cols).map(|j| beta[j] / scale[j]).collect();
    let ses = (0..cols).map(|j| cov[(j, j)].max(0.0).sqrt() / scale[j]).collect();
    Ok((coef, ses))
}

/// Fits the expansion to summary rows.
///
/// The `log log n` column enters only when `m̂ ≠ 1`, since its coefficient
/// `−(m̂ − 1)/β` vanishes otherwise. Standard errors follow from `se_F`.
pub fn fit_expansion(rows: &[SummaryRow], m_hat: f64) -> Result<ExpansionFit> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 distinct sample sizes, got {}", ns.len())));
    }
    if rows.iter().any(|r| r.n < 3) {
        return Err(Error::Fit("sample sizes below 3 have no log log n".into()));
    }
    let with_loglog = (m_hat - 1.0).abs() > 1e-12;
    let cols = if with_loglog { 4 } else { 3 };
    let mut design = DMatrix::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        let n = r.n as f64;
        design[(i, 0)] = n.sqrt();
        design[(i, 1)] = n.ln();
        if with_loglog {
            design[(i, 2)] = n.ln().ln();
        }
        design[(i, cols - 1)] = 1.0;
    }
    let y: Vec<f64> = rows.iter().map(|r| r.mean_f - r.l0_times_n).collect();
    let se: Vec<f64> = rows.iter().map(|r| r.se_f).collect();
    let (c, s) = ols(&design, &y, &se)?;
    Ok(ExpansionFit {
        c_sqrt: c[0],
        c_log: c[1],
        c_loglog: with_loglog.then(|| c[2]),
        c_const: c[cols - 1],
        se_sqrt: s[0],
        se_log: s[1],
        se_loglog: with_loglog.then(|| s[2]),
        se_const: s[cols - 1],
    })
}

/// Regresses the residual column on `√n` and a constant.
pub fn residual_trend(rows: &[SummaryRow]) -> Result<Trend> {
    let mut design = DMatrix::zeros(rows.len(), 2);
    for (i, r) in rows.iter().enumerate() {
        design[(i, 0)] = (r.n as f64).sqrt();
        design[(i, 1)] = 1.0;
    }
    let y: Vec<f64> = rows.iter().map(|r| r.residual).collect();
    let se: Vec<f64> = rows.iter().map(|r| r.se_f).collect();
    let (c, s) = ols(&design, &y, &se)?;
    Ok(Trend {
        slope: c[0],
        se: s[0],
        intercept: c[1],
    })
}

/// Outcome of one experiment at one `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub beta: f64,
    pub rows: Vec<SummaryRow>,
    pub fit: ExpansionFit,
    pub trend: Trend,
    /// Coefficients at this `β`, without offset.
    pub coefficients: AsymptoticCoefficients,
    /// Every replication, ordered by `n` and then replication index.
    pub runs: Vec<FreeEnergyEstimate>,
}

impl ExperimentReport {
    /// Free energies of the first `reps` replications at each `n`, for refits on a sub-ensemble.
    pub fn sub_ensemble(&self, reps: usize) -> Result<Vec<SummaryRow>> {
        self.rows
            .iter()
            .map(|row| {
                let values: Vec<f64> = self.runs.iter().filter(|e| e.n == row.n).take(reps).map(|e| e.f).collect();
                SummaryRow::from_free_energies(row.n, &values, &self.coefficients)
            })
            .collect()
    }
}

/// Coefficients actually used, for the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsUsed {
    #[serde(rename = "L0")]
    pub l0: f64,
    pub mu: f64,
    pub lambda_hat: f64,
    pub m_hat: f64,
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSidecar {
    pub beta: f64,
    pub fit: ExpansionFit,
    pub residual_trend: Trend,
    pub coefficients: CoefficientsUsed,
    pub config_hash: String,
    pub master_seed: u64,
}

/// Runs the sweep at several inverse temperatures, sharing datasets and node likelihoods.
pub fn run_experiment_betas(plan: &ExperimentPlan, ctx: &ExperimentContext, betas: &[f64]) -> Result<Vec<ExperimentReport>> {
    plan.validate()?;
    if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidArgument(format!("betas must be positive, got {betas:?}")));
    }
    let mut runs: Vec<Vec<FreeEnergyEstimate>> = vec![Vec::new(); betas.len()];
    for &n in &plan.sample_sizes {
        let grid = build_grid(&ctx.optima, &ctx.spec, &plan.grid.with_sample_size(n))?;
        log::info!("n = {n}: {} grid nodes, {} replications", grid.len(), plan.replications);
        let per_rep: Vec<Vec<FreeEnergyEstimate>> = (0..plan.replications)
            .into_par_iter()
            .map(|r| {
                let seed = stream_seed(plan.master_seed, n, r);
                let attempt = || -> Result<Vec<FreeEnergyEstimate>> {
                    let data = sample_dataset(n, seed, &ctx.spec)?;
                    let loglik = node_log_likelihood(&data, &grid, &ctx.spec);
                    let l_n = branch_losses(&data, &ctx.optima, &ctx.spec);
                    betas
                        .iter()
                        .map(|&beta| free_energy_from_parts(n, seed, &loglik, &l_n, &grid, &ctx.optima, beta))
                        .collect()
                };
                attempt().map_err(|e| Error::Replication {
                    n,
                    replication: r,
                    seed,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        for rep in per_rep {
            for (slot, est) in runs.iter_mut().zip(rep) {
                slot.push(est);
            }
        }
    }
    betas
        .iter()
        .zip(runs)
        .map(|(&beta, runs)| {
            let coefficients = ctx.coefficients.with_beta(beta).with_offset(0.0);
            let rows = plan
                .sample_sizes
                .iter()
                .map(|&n| {
                    let values: Vec<f64> = runs.iter().filter(|e| e.n == n).map(|e| e.f).collect();
                    SummaryRow::from_free_energies(n, &values, &coefficients)
                })
                .collect::<Result<Vec<_>>>()?;
            let (fit, trend) = if plan.sample_sizes.len() >= 4 {
                (fit_expansion(&rows, coefficients.m_hat)?, residual_trend(&rows)?)
            } else {
                log::warn!("fewer than 4 sample sizes; expansion fit skipped");
                (
                    ExpansionFit {
                        c_sqrt: f64::NAN,
                        c_log: f64::NAN,
                        c_loglog: None,
                        c_const: f64::NAN,
                        se_sqrt: f64::NAN,
                        se_log: f64::NAN,
                        se_loglog: None,
                        se_const: f64::NAN,
                    },
                    Trend {
                        slope: f64::NAN,
                        se: f64::NAN,
                        intercept: f64::NAN,
                    },
                )
            };
            Ok(ExperimentReport {
                beta,
                rows,
                fit,
                trend,
                coefficients,
                runs,
            })
        })
        .collect()
}

/// Runs the sweep at `plan.beta` and writes its files when `plan.output_dir` is set.
pub fn run_experiment(plan: &ExperimentPlan, ctx: &ExperimentContext) -> Result<ExperimentReport> {
    let report = run_experiment_betas(plan, ctx, &[plan.beta])?.remove(0);
    if let Some(dir) = &plan.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows: Vec<RunRecord> = report.runs.iter().map(RunRecord::from_estimate).collect::<Result<_>>()?;
        write_runs(dir.join("runs.csv"), &rows)?;
        write_summary(dir.join("summary.csv"), &report.rows)?;
        let sidecar = FitSidecar {
            beta: report.beta,
            fit: report.fit.clone(),
            residual_trend: report.trend,
            coefficients: CoefficientsUsed {
                l0: report.coefficients.l0,
                mu: report.coefficients.mu,
                lambda_hat: report.coefficients.lambda_hat,
                m_hat: report.coefficients.m_hat,
            },
            config_hash: config_hash(&(&ctx.spec, plan))?,
            master_seed: plan.master_seed,
        };
        let path = dir.join("fit.json");
        std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

/// Ensemble statistics of `√n (L0 − L_n(w_0i))` against their Gaussian limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltSummary {
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub covariance_se: Vec<Vec<f64>>,
    /// Limit covariance from quadrature.
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub max_mean: f64,
    pub max_se: f64,
    pub mu: f64,
}

impl CltSummary {
    /// Every `|C_ij − V_ij| ≤ rel |V_ij| + k · SE_ij`.
    pub fn covariance_within(&self, rel: f64, k: f64) -> bool {
        self.covariance.iter().enumerate().all(|(i, row)| {
            row.iter()
                .enumerate()
                .all(|(j, &c)| (c - self.v[i][j]).abs() <= rel * self.v[i][j].abs() + k * self.covariance_se[i][j])
        })
    }

    pub fn mean_within(&self, k: f64) -> bool {
        self.mean.iter().zip(&self.mean_se).all(|(m, s)| m.abs() <= k * s)
    }

    pub fn max_within(&self, k: f64) -> bool {
        (self.max_mean - self.mu).abs() <= k * self.max_se
    }
}

/// `E[max Z]` for the limit covariance: zero, the closed form, or Monte Carlo.
fn limit_mu(v: &CovarianceMatrix, opt: &OptimumSet) -> Result<f64> {
    match v.dim() {
        1 => Ok(0.0),
        2 => mu_closed_form_two(v),
        _ => {
            let mc = McSettings::default();
            Ok(expected_max_mc(&GaussianMaxProblem::from_optima(v.clone(), opt)?, mc.draws, mc.seed)?.estimate)
        }
    }
}

/// Compares the replicated `√n (L0 − L_ni)` with `N(0, V)`.
pub fn clt_diagnostic(
    n: usize,
    replications: usize,
    seed: u64,
    opt: &OptimumSet,
    spec: &ModelSpec,
    v: &CovarianceMatrix,
) -> Result<CltSummary> {
    if replications < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 replications required, got {replications}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if v.dim() != opt.len() {
        return Err(Error::InvalidArgument("covariance and optimum set differ in dimension".into()));
    }
    let m = opt.len();
    let scripts: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let s = stream_seed(seed, n, r);
            let data = sample_dataset(n, s, spec).map_err(|e| Error::Replication {
                n,
                replication: r,
                seed: s,
                source: Box::new(e),
            })?;
            Ok(max_statistic(&data, opt, spec).scripts)
        })
        .collect::<Result<_>>()?;
    let reps = replications as f64;
    let column = |i: usize| scripts.iter().map(|s| s[i]).collect::<Vec<f64>>();
    let stats: Vec<MeanSe> = (0..m).map(|i| MeanSe::of(&column(i))).collect();
    let mut covariance = vec![vec![0.0; m]; m];
    let mut covariance_se = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let products: Vec<f64> = scripts
                .iter()
                .map(|s| (s[i] - stats[i].mean) * (s[j] - stats[j].mean))
                .collect();
            let p = MeanSe::of(&products);
            covariance[i][j] = p.mean * reps / (reps - 1.0);
            covariance_se[i][j] = p.se;
        }
    }
    let maxima: Vec<f64> = scripts.iter().map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let max = MeanSe::of(&maxima);
    Ok(CltSummary {
        n,
        replications,
        seed,
        mean: stats.iter().map(|s| s.mean).collect(),
        mean_se: stats.iter().map(|s| s.se).collect(),
        covariance,
        covariance_se,
        v: v.rows(),
        max_mean: max.mean,
        max_se: max.se,
        mu: limit_mu(v, opt)?,
    })
}

/// Paired ensemble for `E[G_n] = E[F_{n+1}] − E[F_n]` at `β = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenLossComparison {
    pub n: usize,
    pub replications: usize,
    /// `F_{n+1} − F_n` over replications.
    pub free_energy_increment: MeanSe,
    /// Direct `G_n` over replications.
    pub gen_loss: MeanSe,
    /// Paired `(F_{n+1} − F_n) − G_n`.
    pub difference: MeanSe,
    #[serde(rename = "L0")]
    pub l0: f64,
    pub predicted: Option<f64>,
}

/// For each replication, draws `n + 1` pairs, computes `F_n` on the first `n`,
/// `F_{n+1}` on all of them, and `G_n` from the first `n`.
pub fn gen_loss_comparison(
    n: usize,
    replications: usize,
    seed: u64,
    ctx: &ExperimentContext,
    grid: &GridSettings,
    rule: &PredictiveRule,
) -> Result<GenLossComparison> {
    if replications < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 replications required, got {replications}")));
    }
    let grid = build_grid(&ctx.optima, &ctx.spec, &grid.with_sample_size(n))?;
    let pairs: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let s = stream_seed(seed, n, r);
            let attempt = || -> Result<(f64, f64)> {
                let full = sample_dataset(n + 1, s, &ctx.spec)?;
                let data = full.prefix(n);
                let ll_n = node_log_likelihood(&data, &grid, &ctx.spec);
                let ll_full = node_log_likelihood(&full, &grid, &ctx.spec);
                let f_n = free_energy_from_parts(n, s, &ll_n, &branch_losses(&data, &ctx.optima, &ctx.spec), &grid, &ctx.optima, 1.0)?;
                let f_next = free_energy_from_parts(
                    n + 1,
                    s,
                    &ll_full,
                    &branch_losses(&full, &ctx.optima, &ctx.spec),
                    &grid,
                    &ctx.optima,
                    1.0,
                )?;
                let g = gen_loss_from_log_likelihood(&ll_n, &grid, &ctx.spec, rule)?;
                Ok((f_next.f - f_n.f, g))
            };
            attempt().map_err(|e| Error::Replication {
                n,
                replication: r,
                seed: s,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let inc: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let g: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let coeff = ctx.coefficients.with_beta(1.0);
    Ok(GenLossComparison {
        n,
        replications,
        free_energy_increment: MeanSe::of(&inc),
        gen_loss: MeanSe::of(&g),
        difference: MeanSe::of(&diff),
        l0: coeff.l0,
        predicted: crate::asymptotics::predicted_gen_loss(n, &coeff).ok(),
    })
}

/// One line of the theory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub n: usize,
    #[serde(rename = "theory_F_minus_nL0")]
    pub theory_f_minus_nl0: f64,
    /// Empty unless `β = 1`.
    #[serde(rename = "theory_G")]
    pub theory_g: Option<f64>,
}

pub const THEORY_HEADER: [&str; 3] = ["n", "theory_F_minus_nL0", "theory_G"];

/// Predicted curves over the given sample sizes.
pub fn theory_curve(coeff: &AsymptoticCoefficients, sample_sizes: &[usize]) -> Result<Vec<TheoryRow>> {
    sample_sizes
        .iter()
        .map(|&n| {
            Ok(TheoryRow {
                n,
                theory_f_minus_nl0: coeff.free_energy_excess(n)?,
                theory_g: (coeff.beta == 1.0)
                    .then(|| crate::asymptotics::predicted_gen_loss(n, coeff))
                    .transpose()?,
            })
        })
        .collect()
}

pub fn write_theory(path: impl AsRef<Path>, rows: &[TheoryRow]) -> Result<()> {
    write_csv(path.as_ref(), &THEORY_HEADER, rows)
}

pub fn read_theory(path: impl AsRef<Path>) -> Result<Vec<TheoryRow>> {
    read_csv(path.as_ref(), &THEORY_HEADER)
}
