use std::path::{Path, PathBuf};

use serde::Deserialize;

use cace_core::metrics::OutputFormat;
use cace_core::policy::{P1Mode, Variant};
use cace_core::workload::{PatternName, TokenParams};

/// Experiment manifest read from `--config`. Every key mirrors a flag of the
/// same name (dashes become underscores); flags win over file values.
#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub catalog: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub seeds: Option<Vec<u64>>,

    pub policy: Option<Variant>,
    pub p1_mode: Option<P1Mode>,
    pub w1: Option<f64>,
    pub window: Option<usize>,

    pub pattern: Option<PatternName>,
    pub patterns: Option<Vec<PatternName>>,
    pub policies: Option<Vec<Variant>>,
    pub baseline: Option<Variant>,
    pub rate: Option<f64>,
    pub duration: Option<f64>,
    pub windows: Option<u32>,
    pub accelerators: Option<usize>,
    pub unload_time: Option<f64>,
    pub tokens: Option<TokenParams>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
