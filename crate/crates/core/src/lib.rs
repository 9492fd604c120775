//! Trace-driven simulation of multi-model CodeLLM serving on a fixed pool of
//! accelerators, with pluggable model eviction policies.
//!
//! ```text
//!  catalog ──► workload ──► engine ◄── policy
//!                             │
//!                             ▼
//!                          metrics ──► experiment grids
//! ```
//!
//! * [`catalog`]: model registry and synthetic load-time profiler.
//! * [`workload`]: Poisson traces with exact-quota task/language labels.
//! * [`policy`]: the context-aware eviction score, its ablations, and LRU.
//! * [`engine`]: FIFO discrete-event simulator of load/evict/serve.
//! * [`metrics`]: hit rate, load overhead, latency percentiles, comparisons.
//! * [`experiment`]: pattern × variant × seed grids.

pub mod catalog;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod policy;
pub mod workload;

pub use catalog::{build_default_catalog, Language, ModelCatalog, ModelDescriptor, ProfileParams, TaskClass};
pub use engine::{run, ClusterConfig, EngineConfig, RequestOutcome, SimulationReport};
pub use error::{Error, Result};
pub use experiment::{compare_grid, run_grid, CellRun, ExperimentConfig};
pub use metrics::{compare, compute_run_metrics, summarize, ComparisonTable, LatencySummary, RunMetrics};
pub use policy::{
    make_policy, select_victim, EvictionPolicy, LookaheadWindow, P1Mode, Policy, PolicyConfig, ResidencySet, Variant,
};
pub use workload::{build_trace, PatternName, Request, TokenParams, Trace, WorkloadPattern};
