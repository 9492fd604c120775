//! Run-level metrics (hit rate, load overhead, latency percentiles) and
//! relative comparison tables.
//!
//! Reductions in a [`ComparisonTable`] are `(baseline − candidate) / baseline`
//! for cost metrics, so a positive value means the candidate is cheaper.
//! Hit rate is compared as the absolute difference `candidate − baseline`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::TaskClass;
use crate::engine::SimulationReport;
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 11] = [
    "pattern",
    "variant",
    "cache_hit_rate",
    "load_overhead_s",
    "evictions",
    "ttft_mean_s",
    "ttft_p95_s",
    "ttft_p99_s",
    "e2e_mean_s",
    "e2e_p95_s",
    "e2e_p99_s",
];

pub const SIGN_CONVENTION: &str = "reductions are (baseline - candidate) / baseline, positive = better than baseline; \
hit_rate_diff is candidate - baseline";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub p99_s: f64,
    pub max_s: f64,
}

/// Nearest-rank percentile: the `ceil(q·n)`-th smallest value.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn summarize(samples: &[f64]) -> Result<LatencySummary> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean_s = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(LatencySummary {
        count: sorted.len(),
        mean_s,
        p50_s: nearest_rank(&sorted, 0.50),
        p95_s: nearest_rank(&sorted, 0.95),
        p99_s: nearest_rank(&sorted, 0.99),
        max_s: sorted[sorted.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub total_requests: u64,
    pub cache_hit_rate: f64,
    pub load_overhead_s: f64,
    pub evictions: f64,
    /// TTFT over completion requests.
    pub ttft_completion: Option<LatencySummary>,
    /// End-to-end latency over reasoning requests.
    pub e2e_reasoning: Option<LatencySummary>,
}

impl RunMetrics {
    pub fn ttft(&self) -> Result<&LatencySummary> {
        self.ttft_completion
            .as_ref()
            .ok_or_else(|| Error::MissingTaskClass(TaskClass::Completion.to_string()))
    }

    pub fn e2e(&self) -> Result<&LatencySummary> {
        self.e2e_reasoning
            .as_ref()
            .ok_or_else(|| Error::MissingTaskClass(TaskClass::Reasoning.to_string()))
    }
}

pub fn compute_run_metrics(report: &SimulationReport) -> Result<RunMetrics> {
    let c = &report.counters;
    if c.hits + c.misses != report.outcomes.len() as u64 {
        return Err(Error::Validation(format!(
            "hits + misses = {} but report has {} outcomes",
            c.hits + c.misses,
            report.outcomes.len()
        )));
    }
    let sample = |class: TaskClass, pick: fn(&crate::engine::RequestOutcome) -> f64| {
        report
            .outcomes
            .iter()
            .filter(|o| o.task_class == class)
            .map(pick)
            .collect::<Vec<f64>>()
    };
    let ttft = sample(TaskClass::Completion, |o| o.ttft_s);
    let e2e = sample(TaskClass::Reasoning, |o| o.e2e_s);
    Ok(RunMetrics {
        total_requests: c.total_requests,
        cache_hit_rate: report.hit_rate(),
        load_overhead_s: c.load_overhead_s,
        evictions: c.evictions as f64,
        ttft_completion: summarize(&ttft).ok(),
        e2e_reasoning: summarize(&e2e).ok(),
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn average_summaries(summaries: &[Option<LatencySummary>]) -> Option<LatencySummary> {
    let present: Vec<&LatencySummary> = summaries.iter().flatten().collect();
    if present.is_empty() {
        return None;
    }
    let avg = |f: fn(&LatencySummary) -> f64| mean_of(present.iter().map(|s| f(s)));
    Some(LatencySummary {
        count: present.iter().map(|s| s.count).sum(),
        mean_s: avg(|s| s.mean_s),
        p50_s: avg(|s| s.p50_s),
        p95_s: avg(|s| s.p95_s),
        p99_s: avg(|s| s.p99_s),
        max_s: avg(|s| s.max_s),
    })
}

/// Cell average across seeds: each field is the arithmetic mean over runs,
/// except sample counts which are summed.
pub fn average(runs: &[RunMetrics]) -> Result<RunMetrics> {
    if runs.is_empty() {
        return Err(Error::EmptySample);
    }
    let ttft: Vec<_> = runs.iter().map(|r| r.ttft_completion).collect();
    let e2e: Vec<_> = runs.iter().map(|r| r.e2e_reasoning).collect();
    Ok(RunMetrics {
        total_requests: runs.iter().map(|r| r.total_requests).sum(),
        cache_hit_rate: mean_of(runs.iter().map(|r| r.cache_hit_rate)),
        load_overhead_s: mean_of(runs.iter().map(|r| r.load_overhead_s)),
        evictions: mean_of(runs.iter().map(|r| r.evictions)),
        ttft_completion: average_summaries(&ttft),
        e2e_reasoning: average_summaries(&e2e),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub pattern: String,
    pub variant: String,
}

impl RowKey {
    pub fn new(pattern: impl Into<String>, variant: impl Into<String>) -> Self {
        RowKey {
            pattern: pattern.into(),
            variant: variant.into(),
        }
    }
}

/// Relative changes of one row against its pattern's baseline row. `None`
/// where the baseline value is zero and the candidate is not.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deltas {
    pub hit_rate_diff: f64,
    pub load_overhead_reduction: Option<f64>,
    pub evictions_reduction: Option<f64>,
    pub ttft_mean_reduction: Option<f64>,
    pub ttft_p95_reduction: Option<f64>,
    pub ttft_p99_reduction: Option<f64>,
    pub e2e_mean_reduction: Option<f64>,
    pub e2e_p95_reduction: Option<f64>,
    pub e2e_p99_reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub pattern: String,
    pub variant: String,
    pub metrics: RunMetrics,
    pub deltas: Deltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub sign_convention: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, pattern: &str, variant: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.pattern == pattern && r.variant == variant)
    }
}

pub fn reduction(baseline: f64, candidate: f64) -> Option<f64> {
    if baseline == 0.0 {
        (candidate == 0.0).then_some(0.0)
    } else {
        Some((baseline - candidate) / baseline)
    }
}

fn summary_reduction(
    base: Option<&LatencySummary>,
    cand: Option<&LatencySummary>,
    pick: fn(&LatencySummary) -> f64,
) -> Option<f64> {
    reduction(pick(base?), pick(cand?))
}

fn deltas(base: &RunMetrics, cand: &RunMetrics) -> Deltas {
    let (bt, ct) = (base.ttft_completion.as_ref(), cand.ttft_completion.as_ref());
    let (be, ce) = (base.e2e_reasoning.as_ref(), cand.e2e_reasoning.as_ref());
    Deltas {
        hit_rate_diff: cand.cache_hit_rate - base.cache_hit_rate,
        load_overhead_reduction: reduction(base.load_overhead_s, cand.load_overhead_s),
        evictions_reduction: reduction(base.evictions, cand.evictions),
        ttft_mean_reduction: summary_reduction(bt, ct, |s| s.mean_s),
        ttft_p95_reduction: summary_reduction(bt, ct, |s| s.p95_s),
        ttft_p99_reduction: summary_reduction(bt, ct, |s| s.p99_s),
        e2e_mean_reduction: summary_reduction(be, ce, |s| s.mean_s),
        e2e_p95_reduction: summary_reduction(be, ce, |s| s.p95_s),
        e2e_p99_reduction: summary_reduction(be, ce, |s| s.p99_s),
    }
}

/// Builds a table whose deltas compare each row with the row of the same
/// pattern whose variant is `baseline`.
pub fn compare(runs: &[(RowKey, RunMetrics)], baseline: &str) -> Result<ComparisonTable> {
    if !runs.iter().any(|(k, _)| k.variant == baseline) {
        return Err(Error::UnknownBaseline(baseline.to_string()));
    }
    let rows = runs
        .iter()
        .map(|(key, metrics)| {
            let base = runs
                .iter()
                .find(|(k, _)| k.pattern == key.pattern && k.variant == baseline)
                .map(|(_, m)| m)
                .ok_or_else(|| Error::UnknownBaseline(format!("{baseline} (for pattern {})", key.pattern)))?;
            Ok(ComparisonRow {
                pattern: key.pattern.clone(),
                variant: key.variant.clone(),
                metrics: metrics.clone(),
                deltas: deltas(base, metrics),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable {
        baseline: baseline.to_string(),
        sign_convention: SIGN_CONVENTION.to_string(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(Error::InvalidInput(format!(
                "unknown format `{s}` (expected json or csv)"
            ))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn table_to_csv(table: &ComparisonTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for row in &table.rows {
        let m = &row.metrics;
        let t = m.ttft_completion.as_ref();
        let e = m.e2e_reasoning.as_ref();
        w.write_record([
            row.pattern.clone(),
            row.variant.clone(),
            m.cache_hit_rate.to_string(),
            m.load_overhead_s.to_string(),
            m.evictions.to_string(),
            opt(t.map(|s| s.mean_s)),
            opt(t.map(|s| s.p95_s)),
            opt(t.map(|s| s.p99_s)),
            opt(e.map(|s| s.mean_s)),
            opt(e.map(|s| s.p95_s)),
            opt(e.map(|s| s.p99_s)),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn emit_table(table: &ComparisonTable, format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Json => Ok(to_json(table)),
        OutputFormat::Csv => table_to_csv(table),
    }
}

/// Reports have no tabular form; CSV emits the per-request outcomes.
pub fn emit_report(report: &SimulationReport, format: OutputFormat) -> Result<Vec<u8>> {
    match format {
        OutputFormat::Json => Ok(report.to_json()),
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for o in &report.outcomes {
                w.serialize(o)?;
            }
            w.into_inner()
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
        }
    }
}
