//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export takes and returns JSON strings. The `*_json` functions hold
//! the logic and are plain Rust so they can be tested natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use cace_core::catalog::{build_default_catalog, ModelCatalog, ProfileParams, TaskClass};
use cace_core::engine::{run, ClusterConfig, EngineConfig};
use cace_core::experiment::{compare_grid, ExperimentConfig};
use cace_core::metrics::{compute_run_metrics, ComparisonTable, RunMetrics};
use cace_core::policy::{
    criticality_term, future_term, make_policy, recency_term, reload_term, P1Mode, PolicyConfig, Variant,
};
use cace_core::workload::{build_trace, PatternName, TokenParams, WorkloadPattern};

fn catalog() -> ModelCatalog {
    build_default_catalog(&ProfileParams::default()).expect("default catalog is valid")
}

fn parse<'a, T: Deserialize<'a>>(json: &'a str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

fn emit<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("response serializes")
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveRequest {
    pub p1_mode: P1Mode,
    pub w1: f64,
    pub window: usize,
    /// Idle seconds sampled for the recency curve.
    pub max_idle_s: f64,
    pub points: usize,
}

impl Default for CurveRequest {
    fn default() -> Self {
        CurveRequest {
            p1_mode: P1Mode::Prose,
            w1: 1.0,
            window: 10,
            max_idle_s: 300.0,
            points: 121,
        }
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ModelCurve {
    pub model_id: String,
    pub load_time_s: f64,
    pub reload: f64,
    pub criticality: f64,
    /// Total score when absent from the window, per idle time in `idle_s`.
    pub total_absent: Vec<f64>,
    /// Total score when first in the window.
    pub total_next: Vec<f64>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Curves {
    pub idle_s: Vec<f64>,
    pub recency: Vec<f64>,
    pub future: Vec<f64>,
    pub models: Vec<ModelCurve>,
}

/// Score terms over idle time and window position, plus the full score of
/// one completion and one reasoning model.
pub fn score_curves_json(request: &str) -> Result<String, String> {
    let req: CurveRequest = parse(request)?;
    if req.points < 2
        || req.window == 0
        || !req.max_idle_s.is_finite()
        || req.max_idle_s <= 0.0
        || !req.w1.is_finite()
        || req.w1 < 0.0
    {
        return Err("need points >= 2, window >= 1, max_idle_s > 0 and w1 >= 0".into());
    }
    let cat = catalog();
    let normalizer = cat.max_expected_output_tokens();
    let idle_s: Vec<f64> = (0..req.points)
        .map(|k| req.max_idle_s * k as f64 / (req.points - 1) as f64)
        .collect();
    let recency: Vec<f64> = idle_s.iter().map(|&t| recency_term(t, req.p1_mode)).collect();
    let models = [TaskClass::Completion, TaskClass::Reasoning]
        .into_iter()
        .map(|task| {
            let m = cat
                .models()
                .iter()
                .find(|m| m.task_class == task)
                .expect("both classes present");
            let reload = reload_term(m.load_time_s);
            let criticality = criticality_term(m.expected_output_tokens, normalizer, req.w1);
            let with = |future: f64| recency.iter().map(|p1| p1 + reload + future + criticality).collect();
            ModelCurve {
                model_id: m.model_id.clone(),
                load_time_s: m.load_time_s,
                reload,
                criticality,
                total_absent: with(future_term(None, req.window)),
                total_next: with(future_term(Some(0), req.window)),
            }
        })
        .collect();
    Ok(emit(&Curves {
        future: (0..req.window).map(|i| future_term(Some(i), req.window)).collect(),
        idle_s,
        recency,
        models,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateRequest {
    pub pattern: PatternName,
    pub policy: Variant,
    pub rate: f64,
    pub windows: u32,
    pub seed: u64,
    pub accelerators: usize,
    pub p1_mode: P1Mode,
    pub w1: f64,
    pub window: usize,
}

impl Default for SimulateRequest {
    fn default() -> Self {
        SimulateRequest {
            pattern: PatternName::PopularitySkewed,
            policy: Variant::CaceFull,
            rate: 2.0,
            windows: 4,
            seed: 1,
            accelerators: 4,
            p1_mode: P1Mode::Prose,
            w1: 1.0,
            window: 10,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Point {
    pub arrival_s: f64,
    pub latency_s: f64,
    pub completion: bool,
    pub cold: bool,
}

#[derive(Debug, Serialize)]
pub struct SimulateResponse {
    pub metrics: RunMetrics,
    pub evictions: u64,
    pub loads: u64,
    /// TTFT for completion requests, E2E for reasoning requests.
    pub points: Vec<Point>,
}

/// One seeded run: aggregate metrics and a per-request latency scatter.
pub fn simulate_json(request: &str) -> Result<String, String> {
    let req: SimulateRequest = parse(request)?;
    let cat = catalog();
    let trace = build_trace(
        &WorkloadPattern::preset(req.pattern),
        req.rate,
        cace_core::workload::DEFAULT_WINDOW_S,
        req.windows,
        req.seed,
        &cat,
        &TokenParams::default(),
    )
    .map_err(|e| e.to_string())?;
    let cfg = PolicyConfig {
        variant: req.policy,
        w1: req.w1,
        window_length: req.window,
        output_token_normalizer: None,
        p1_mode: req.p1_mode,
    };
    let policy = make_policy(cfg, &cat).map_err(|e| e.to_string())?;
    let report = run(
        &trace,
        &cat,
        &ClusterConfig::with_accelerators(req.accelerators),
        &policy,
        &EngineConfig {
            window_length: req.window,
        },
    )
    .map_err(|e| e.to_string())?;
    let points = report
        .outcomes
        .iter()
        .zip(&trace.requests)
        .map(|(o, r)| {
            let completion = o.task_class == TaskClass::Completion;
            Point {
                arrival_s: r.arrival_time_s,
                latency_s: if completion { o.ttft_s } else { o.e2e_s },
                completion,
                cold: o.cold_start,
            }
        })
        .collect();
    Ok(emit(&SimulateResponse {
        metrics: compute_run_metrics(&report).map_err(|e| e.to_string())?,
        evictions: report.counters.evictions,
        loads: report.counters.loads,
        points,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareRequest {
    pub patterns: Vec<PatternName>,
    pub policies: Vec<Variant>,
    pub baseline: Variant,
    pub seeds: Vec<u64>,
    pub rate: f64,
    pub windows: u32,
    pub accelerators: usize,
}

impl Default for CompareRequest {
    fn default() -> Self {
        CompareRequest {
            patterns: PatternName::ALL.to_vec(),
            policies: vec![Variant::Lru, Variant::CaceMinusP4, Variant::CaceFull],
            baseline: Variant::Lru,
            seeds: vec![1, 2, 3],
            rate: 2.0,
            windows: 4,
            accelerators: 4,
        }
    }
}

/// Seed-averaged comparison table over patterns and policies.
pub fn compare_json(request: &str) -> Result<String, String> {
    let req: CompareRequest = parse(request)?;
    if !req.policies.contains(&req.baseline) {
        return Err(format!("baseline `{}` is not among the policies", req.baseline));
    }
    let cfg = ExperimentConfig {
        patterns: req.patterns,
        variants: req.policies,
        seeds: req.seeds,
        rate: req.rate,
        windows: req.windows,
        cluster: ClusterConfig::with_accelerators(req.accelerators),
        ..ExperimentConfig::default()
    };
    let (_, table): (_, ComparisonTable) = compare_grid(&cfg, &catalog(), req.baseline).map_err(|e| e.to_string())?;
    Ok(emit(&table))
}

#[wasm_bindgen]
pub fn score_curves(request: &str) -> Result<String, JsError> {
    score_curves_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(request: &str) -> Result<String, JsError> {
    simulate_json(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(request: &str) -> Result<String, JsError> {
    compare_json(request).map_err(|e| JsError::new(&e))
}
