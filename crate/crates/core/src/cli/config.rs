use std::path::PathBuf;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evo::{InitMode, Target};
use crate::masks::Metric;

/// Parses `"N:M"` with `N` pruned of every `M`.
pub fn parse_target(spec: &str) -> Result<Target> {
    let bad = || Error::Target(spec.to_string());
    let (n, m) = spec.trim().split_once(':').ok_or_else(bad)?;
    let n: u32 = n.trim().parse().map_err(|_| bad())?;
    let m: u32 = m.trim().parse().map_err(|_| bad())?;
    if m < 2 || n > m {
        return Err(bad());
    }
    Ok(Target { n, m })
}

/// Parses `"0.8,0.1,0.1"`.
pub fn parse_splits(spec: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::input(format!("bad split fractions {spec:?}")))?;
    let fractions: [f64; 3] = parts
        .try_into()
        .map_err(|_| Error::input(format!("expected three split fractions, got {spec:?}")))?;
    crate::corpus::check_fractions(fractions)?;
    Ok(fractions)
}

/// Run settings loadable from `--config`; explicit flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model_config: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub splits: Option<[f64; 3]>,
    pub split_seed: Option<u64>,
    pub target: Option<String>,
    pub metric: Option<Metric>,
    pub population_size: Option<usize>,
    pub generations: Option<usize>,
    pub mutation_rate: Option<f64>,
    pub seed: Option<u64>,
    pub init_mode: Option<InitMode>,
    pub max_retries: Option<usize>,
    pub mutation_retries: Option<usize>,
    pub calib_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub fitness_bytes: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = crate::io::read(path)?;
        let cfg: RunConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.splits {
            crate::corpus::check_fractions(s)?;
        }
        if let Some(t) = &self.target {
            parse_target(t)?;
        }
        Ok(())
    }
}
