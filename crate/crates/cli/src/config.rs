//! Experiment configuration: TOML file sections merged with command-line
//! flags. Flags win over file values, file values win over defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use latentctl::classifier::TrainConfig;
use latentctl::control::StepPolicy;
use serde::Deserialize;

/// On-disk experiment configuration. Every field is optional; commands
/// pull the sections they need.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub world: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub clf_dir: Option<PathBuf>,
    /// Attribute subset for train/eval; defaults to every world attribute.
    pub attributes: Option<Vec<String>>,
    pub bank_size: Option<usize>,
    pub train: Option<TrainConfig>,
    pub policy: Option<StepPolicy>,
    pub edit: Option<EditSection>,
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSection {
    pub target: Option<String>,
    pub target_class: Option<usize>,
    /// Exclusion rules as "attr:count" strings.
    pub exclude: Option<Vec<String>>,
    pub bank_index: Option<usize>,
    pub boundary_count: Option<usize>,
    pub margin: Option<f64>,
    pub grid: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub bin_edges: Option<Vec<f64>>,
    pub scatter_x: Option<String>,
    pub scatter_y: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))
            }
        }
    }
}

/// First Some wins: flag, then config value, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Parses "attr:count" exclusion syntax, comma-separated.
pub fn parse_exclusions(specs: &[String]) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for spec in specs {
        for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
            let (attr, count) = part
                .rsplit_once(':')
                .with_context(|| format!("exclusion {part:?} is not attr:count"))?;
            let count: usize = count
                .trim()
                .parse()
                .with_context(|| format!("exclusion count in {part:?}"))?;
            out.push((attr.trim().to_string(), count));
        }
    }
    Ok(out)
}

/// Parses dimension masks like "0-63,128,200-201" into sorted indices.
pub fn parse_dim_mask(spec: &str) -> Result<std::collections::BTreeSet<usize>> {
    let mut out = std::collections::BTreeSet::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let part = part.trim();
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().context("dim mask range start")?;
                let hi: usize = hi.trim().parse().context("dim mask range end")?;
                anyhow::ensure!(lo <= hi, "dim mask range {part:?} is reversed");
                out.extend(lo..=hi);
            }
            None => {
                out.insert(part.parse().context("dim mask index")?);
            }
        }
    }
    Ok(out)
}
