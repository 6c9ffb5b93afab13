use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use nonunique::harness::{clt_diagnostic, run_experiment, theory_curve, write_theory, CltSummary, ExperimentContext};
use nonunique::population::{covariance, find_optima};
use nonunique::{AsymptoticCoefficients, OptimumSet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Any output document plus the provenance fields.
#[derive(Debug, Serialize, Deserialize)]
struct Stamped<T> {
    #[serde(flatten)]
    body: T,
    config_hash: String,
    master_seed: u64,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn stamp<T: Serialize>(rc: &RunConfig, body: T) -> anyhow::Result<Stamped<T>> {
    Ok(Stamped {
        body,
        config_hash: rc.hash()?,
        master_seed: rc.file.plan.master_seed,
    })
}

fn prepare_dirs(rc: &RunConfig) -> anyhow::Result<()> {
    for dir in [&rc.out, &rc.cache] {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Reads `name-key.json` from the cache or computes and stores it.
fn cached<T, F>(rc: &RunConfig, name: &str, key: &str, compute: F) -> anyhow::Result<T>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> anyhow::Result<T>,
{
    let path: PathBuf = rc.cache.join(format!("{name}-{}.json", &key[..16]));
    if path.exists() {
        info!("using cached {name} from {}", path.display());
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    let value = compute()?;
    write_json(&path, &value)?;
    info!("cached {name} in {}", path.display());
    Ok(value)
}

fn load_optima(rc: &RunConfig) -> anyhow::Result<OptimumSet> {
    let opt: OptimumSet = cached(rc, "optima", &rc.optima_key()?, || {
        info!("searching for optimal parameters");
        find_optima(&rc.file.model, &rc.file.search).context("optimum search failed")
    })?;
    opt.validate().context("cached optimum set is invalid")?;
    Ok(opt)
}

fn load_coefficients(rc: &RunConfig, opt: &OptimumSet) -> anyhow::Result<AsymptoticCoefficients> {
    cached(rc, "coefficients", &rc.coefficients_key()?, || {
        info!("integrating the covariance of the log likelihood at the optima");
        let v = covariance(opt, &rc.file.model).context("covariance quadrature failed")?;
        AsymptoticCoefficients::compute(opt, &v, 1.0, rc.file.monte_carlo).context("coefficients")
    })
}

pub fn optima(rc: &RunConfig) -> anyhow::Result<()> {
    prepare_dirs(rc)?;
    let opt = load_optima(rc)?;
    for (i, w) in opt.optima.iter().enumerate() {
        println!("optimum {}: a = {:.6}, b = {:.6}", i + 1, w.a, w.b);
    }
    println!("L0 = {:.10}", opt.l0);
    let path = rc.out.join("optima.json");
    write_json(&path, &stamp(rc, &opt)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn theory(rc: &RunConfig) -> anyhow::Result<()> {
    prepare_dirs(rc)?;
    let opt = load_optima(rc)?;
    let coeff = load_coefficients(rc, &opt)?.with_beta(rc.file.plan.beta);
    println!(
        "mu = {:.8}, lambda_hat = {}, m_hat = {}, beta = {}",
        coeff.mu, coeff.lambda_hat, coeff.m_hat, coeff.beta
    );
    let path = rc.out.join("coefficients.json");
    write_json(&path, &stamp(rc, &coeff)?)?;
    println!("wrote {}", path.display());
    let curve = theory_curve(&coeff, &rc.file.plan.sample_sizes)?;
    let path = rc.out.join("theory.csv");
    write_theory(&path, &curve)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn experiment(rc: &RunConfig) -> anyhow::Result<()> {
    prepare_dirs(rc)?;
    let optima = load_optima(rc)?;
    let coefficients = load_coefficients(rc, &optima)?;
    let ctx = ExperimentContext {
        spec: rc.file.model.clone(),
        optima,
        coefficients,
    };
    let plan = nonunique::ExperimentPlan {
        output_dir: Some(rc.out.clone()),
        ..rc.file.plan.clone()
    };
    let report = run_experiment(&plan, &ctx)?;
    println!("{:>6} {:>6} {:>14} {:>10} {:>12}", "n", "reps", "mean_F", "se_F", "residual");
    for r in &report.rows {
        println!("{:>6} {:>6} {:>14.6} {:>10.6} {:>12.6}", r.n, r.reps, r.mean_f, r.se_f, r.residual);
    }
    if report.fit.c_sqrt.is_finite() {
        println!(
            "fit: c_sqrt = {:.4} ± {:.4} (theory {:.4}), c_log = {:.4} ± {:.4} (theory {:.4})",
            report.fit.c_sqrt,
            report.fit.se_sqrt,
            -report.coefficients.mu,
            report.fit.c_log,
            report.fit.se_log,
            report.coefficients.lambda_hat / report.beta
        );
    }
    println!("wrote runs.csv, summary.csv and fit.json in {}", rc.out.display());
    Ok(())
}

/// `clt.json`: the summary and the tolerance checks applied to it.
#[derive(Debug, Serialize, Deserialize)]
struct CltReport {
    #[serde(flatten)]
    summary: CltSummary,
    mean_within_3se: bool,
    covariance_within_5pct_3se: bool,
    max_within_3se: bool,
}

pub fn clt(rc: &RunConfig) -> anyhow::Result<()> {
    prepare_dirs(rc)?;
    let opt = load_optima(rc)?;
    let coeff = load_coefficients(rc, &opt)?;
    let s = &rc.file.clt;
    let summary = clt_diagnostic(s.n, s.replications, rc.file.plan.master_seed, &opt, &rc.file.model, &coeff.v)?;
    println!(
        "n = {}, {} replications: E[max] = {:.4} ± {:.4}, mu = {:.4}",
        summary.n, summary.replications, summary.max_mean, summary.max_se, summary.mu
    );
    let report = CltReport {
        mean_within_3se: summary.mean_within(3.0),
        covariance_within_5pct_3se: summary.covariance_within(0.05, 3.0),
        max_within_3se: summary.max_within(3.0),
        summary,
    };
    let path = rc.out.join("clt.json");
    write_json(&path, &stamp(rc, &report)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
