//! Optional JSON run configuration. Every field is optional; command-line
//! flags take precedence. Relative paths are resolved against the directory
//! holding the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Option<String>,
    pub train: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub format: Option<String>,
    pub skip_header: Option<bool>,
    pub num_classes: Option<usize>,
    pub cache: Option<PathBuf>,
    pub bandwidth: Option<String>,
    pub variance_threshold: Option<f64>,
    pub standardize: Option<bool>,
    pub threads: Option<usize>,
    pub batch_size: Option<usize>,
    pub sampling: Option<String>,
    pub selection: Option<PathBuf>,
    pub seed: Option<u64>,
    pub shuffle: Option<bool>,
    pub force: Option<bool>,
    pub queries: Option<PathBuf>,
    pub query_labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub output_format: Option<String>,
    pub synth: Option<PathBuf>,
    pub nominal: Option<PathBuf>,
    pub nominal_labels: Option<PathBuf>,
    pub outliers: Option<PathBuf>,
    pub outlier_labels: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub ratios: Option<Vec<f64>>,
    pub strategy: Option<String>,
    pub bandwidths: Option<Vec<f64>>,
    pub replicas: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train,
            &mut cfg.labels,
            &mut cfg.cache,
            &mut cfg.selection,
            &mut cfg.queries,
            &mut cfg.query_labels,
            &mut cfg.out,
            &mut cfg.synth,
            &mut cfg.nominal,
            &mut cfg.nominal_labels,
            &mut cfg.outliers,
            &mut cfg.outlier_labels,
        ] {
            if let Some(rel) = p.as_mut().filter(|p| p.is_relative()) {
                *rel = base.join(&*rel);
            }
        }
        Ok(cfg)
    }
}
