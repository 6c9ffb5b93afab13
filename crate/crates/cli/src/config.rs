//! Run configuration: defaults, then the JSON file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nonunique::asymptotics::McSettings;
use nonunique::harness::{config_hash, ExperimentPlan};
use nonunique::model::Interval;
use nonunique::{ModelSpec, SearchConfig};
use serde::{Deserialize, Serialize};

/// Settings of the `clt` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CltSettings {
    pub n: usize,
    pub replications: usize,
}

impl Default for CltSettings {
    fn default() -> Self {
        Self {
            n: 500,
            replications: 5000,
        }
    }
}

/// Layout of the `--config` file. Model fields sit at the top level.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub model: ModelSpec,
    pub plan: ExperimentPlan,
    pub search: SearchConfig,
    pub clt: CltSettings,
    pub monte_carlo: McSettings,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Values given on the command line; each one overrides the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub replications: Option<usize>,
    pub sample_sizes: Option<Vec<usize>>,
    pub prior_a: Option<Interval>,
    pub prior_b: Option<Interval>,
    pub clt_n: Option<usize>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub out: PathBuf,
    pub cache: PathBuf,
}

impl RunConfig {
    pub fn resolve(config: Option<&Path>, out: PathBuf, cache: Option<PathBuf>, o: Overrides) -> anyhow::Result<Self> {
        let mut file = match config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        if let Some(seed) = o.seed {
            file.plan.master_seed = seed;
        }
        if let Some(beta) = o.beta {
            file.plan.beta = beta;
        }
        if let Some(reps) = o.replications {
            file.plan.replications = reps;
            file.clt.replications = reps;
        }
        if let Some(sizes) = o.sample_sizes {
            file.plan.sample_sizes = sizes;
        }
        if let Some(a) = o.prior_a {
            file.model.prior_a = a;
        }
        if let Some(b) = o.prior_b {
            file.model.prior_b = b;
        }
        if let Some(n) = o.clt_n {
            file.clt.n = n;
        }
        file.model.validate().context("model configuration")?;
        file.plan.validate().context("experiment plan")?;
        if file.clt.replications < 2 {
            bail!("replications must be at least 2, got {}", file.clt.replications);
        }
        if file.clt.n == 0 {
            bail!("the CLT sample size must be positive");
        }
        let cache = cache.unwrap_or_else(|| out.join("cache"));
        Ok(Self { file, out, cache })
    }

    /// Hash of everything that affects the numbers.
    pub fn hash(&self) -> anyhow::Result<String> {
        Ok(config_hash(&self.file)?)
    }

    /// Key of the optimum search; coefficient caches add the Monte Carlo settings.
    pub fn optima_key(&self) -> anyhow::Result<String> {
        Ok(config_hash(&(&self.file.model, &self.file.search))?)
    }

    pub fn coefficients_key(&self) -> anyhow::Result<String> {
        Ok(config_hash(&(&self.file.model, &self.file.search, &self.file.monte_carlo))?)
    }
}

/// Parses `lo,hi`.
pub fn parse_interval(s: &str) -> Result<Interval, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected LO,HI, got {s:?}"));
    }
    let lo: f64 = parts[0].parse().map_err(|e| format!("{}: {e}", parts[0]))?;
    let hi: f64 = parts[1].parse().map_err(|e| format!("{}: {e}", parts[1]))?;
    if !(lo < hi) {
        return Err(format!("interval {lo},{hi} is empty"));
    }
    Ok(Interval(lo, hi))
}
