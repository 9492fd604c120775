//! Pattern × variant × seed experiment grids.
//!
//! Each (pattern, seed) pair yields one trace that every variant replays, so
//! variants within a pattern always see the same request stream.

use serde::{Deserialize, Serialize};

use crate::catalog::ModelCatalog;
use crate::engine::{run, ClusterConfig, EngineConfig, SimulationReport};
use crate::error::{Error, Result};
use crate::metrics::{average, compare, compute_run_metrics, ComparisonTable, RowKey, RunMetrics};
use crate::policy::{make_policy, P1Mode, PolicyConfig, Variant, DEFAULT_W1, DEFAULT_WINDOW_LENGTH};
use crate::workload::{build_trace, PatternName, TokenParams, Trace, WorkloadPattern, DEFAULT_WINDOW_S};

pub const DEFAULT_RATE_PER_S: f64 = 2.0;
pub const DEFAULT_WINDOWS: u32 = 4;
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub patterns: Vec<PatternName>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub rate: f64,
    pub duration: f64,
    pub windows: u32,
    pub cluster: ClusterConfig,
    pub w1: f64,
    pub window_length: usize,
    pub p1_mode: P1Mode,
    pub tokens: TokenParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            patterns: PatternName::ALL.to_vec(),
            variants: vec![Variant::Lru, Variant::CaceMinusP4, Variant::CaceFull],
            seeds: DEFAULT_SEEDS.to_vec(),
            rate: DEFAULT_RATE_PER_S,
            duration: DEFAULT_WINDOW_S,
            windows: DEFAULT_WINDOWS,
            cluster: ClusterConfig::default(),
            w1: DEFAULT_W1,
            window_length: DEFAULT_WINDOW_LENGTH,
            p1_mode: P1Mode::Prose,
            tokens: TokenParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidInput(
                "patterns, variants and seeds must all be non-empty".into(),
            ));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::InvalidInput(format!("rate must be positive, got {}", self.rate)));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "duration must be non-negative, got {}",
                self.duration
            )));
        }
        if self.windows == 0 {
            return Err(Error::InvalidInput("windows must be at least 1".into()));
        }
        self.cluster.validate()?;
        self.policy_config(Variant::CaceFull).validate()
    }

    pub fn policy_config(&self, variant: Variant) -> PolicyConfig {
        PolicyConfig {
            variant,
            w1: self.w1,
            window_length: self.window_length,
            output_token_normalizer: None,
            p1_mode: self.p1_mode,
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            window_length: self.window_length,
        }
    }

    pub fn trace(&self, pattern: PatternName, seed: u64, catalog: &ModelCatalog) -> Result<Trace> {
        build_trace(
            &WorkloadPattern::preset(pattern),
            self.rate,
            self.duration,
            self.windows,
            seed,
            catalog,
            &self.tokens,
        )
    }
}

/// One simulated cell of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub pattern: PatternName,
    pub variant: Variant,
    pub seed: u64,
    pub report: SimulationReport,
}

pub fn simulate_variant(
    trace: &Trace,
    catalog: &ModelCatalog,
    cfg: &ExperimentConfig,
    variant: Variant,
) -> Result<SimulationReport> {
    let policy = make_policy(cfg.policy_config(variant), catalog)?;
    run(trace, catalog, &cfg.cluster, &policy, &cfg.engine_config())
}

#[cfg(feature = "parallel")]
fn run_cells<T, F>(jobs: Vec<T>, f: F) -> Vec<Result<CellRun>>
where
    T: Send,
    F: Fn(T) -> Result<CellRun> + Sync + Send,
{
    use rayon::prelude::*;
    jobs.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_cells<T, F>(jobs: Vec<T>, f: F) -> Vec<Result<CellRun>>
where
    F: Fn(T) -> Result<CellRun>,
{
    jobs.into_iter().map(f).collect()
}

/// Runs every (pattern, variant, seed) cell. Output order is pattern-major,
/// then variant, then seed, independent of scheduling.
pub fn run_grid(cfg: &ExperimentConfig, catalog: &ModelCatalog) -> Result<Vec<CellRun>> {
    cfg.validate()?;
    let mut traces = Vec::new();
    for &pattern in &cfg.patterns {
        for &seed in &cfg.seeds {
            traces.push(((pattern, seed), cfg.trace(pattern, seed, catalog)?));
        }
    }
    let mut jobs = Vec::new();
    for &pattern in &cfg.patterns {
        for &variant in &cfg.variants {
            for &seed in &cfg.seeds {
                let trace = &traces
                    .iter()
                    .find(|(k, _)| *k == (pattern, seed))
                    .expect("trace built for every pattern and seed")
                    .1;
                jobs.push((pattern, variant, seed, trace));
            }
        }
    }
    run_cells(jobs, |(pattern, variant, seed, trace)| {
        Ok(CellRun {
            pattern,
            variant,
            seed,
            report: simulate_variant(trace, catalog, cfg, variant)?,
        })
    })
    .into_iter()
    .collect()
}

/// Seed-averaged metrics per (pattern, variant), in grid order.
pub fn aggregate(cfg: &ExperimentConfig, cells: &[CellRun]) -> Result<Vec<(RowKey, RunMetrics)>> {
    let mut rows = Vec::new();
    for &pattern in &cfg.patterns {
        for &variant in &cfg.variants {
            let per_seed = cells
                .iter()
                .filter(|c| c.pattern == pattern && c.variant == variant)
                .map(|c| compute_run_metrics(&c.report))
                .collect::<Result<Vec<_>>>()?;
            rows.push((RowKey::new(pattern.as_str(), variant.as_str()), average(&per_seed)?));
        }
    }
    Ok(rows)
}

/// Full grid run plus the comparison table against `baseline`.
pub fn compare_grid(
    cfg: &ExperimentConfig,
    catalog: &ModelCatalog,
    baseline: Variant,
) -> Result<(Vec<CellRun>, ComparisonTable)> {
    let cells = run_grid(cfg, catalog)?;
    let rows = aggregate(cfg, &cells)?;
    let table = compare(&rows, baseline.as_str())?;
    Ok((cells, table))
}

/// Every ablation variant on one pattern, baselined against the full score.
pub fn ablation_config(base: &ExperimentConfig, pattern: PatternName) -> ExperimentConfig {
    ExperimentConfig {
        patterns: vec![pattern],
        variants: Variant::ABLATION.to_vec(),
        ..base.clone()
    }
}
