//! Exit criteria for the simulator. Each test prints one `criterion N: PASS|FAIL`
//! line; run with `--nocapture` to see them all.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cace_core::catalog::{build_default_catalog, Language, ModelCatalog, ModelDescriptor, ProfileParams, TaskClass};
use cace_core::engine::{run, ClusterConfig, EngineConfig, SimulationReport};
use cace_core::experiment::{ablation_config, compare_grid, CellRun, ExperimentConfig};
use cace_core::metrics::{emit_report, emit_table, ComparisonTable, OutputFormat};
use cace_core::policy::{
    future_term, make_policy, recency_term, reload_term, select_victim, LookaheadWindow, P1Mode, PolicyConfig,
    ResidencyEntry, ResidencySet, Variant,
};
use cace_core::workload::{assign_labels, generate_arrivals, PatternName, Request, Trace, WorkloadPattern};

const CAPACITY: usize = 4;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn report(n: u32, verdict: Verdict, elapsed: Duration) {
    let status = if verdict.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n}: {status} ({:.2}s) {}",
        elapsed.as_secs_f64(),
        verdict.detail
    );
    assert!(verdict.pass, "criterion {n} failed: {}", verdict.detail);
}

fn timed(f: impl FnOnce() -> Verdict) -> (Verdict, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn catalog() -> &'static ModelCatalog {
    static CAT: OnceLock<ModelCatalog> = OnceLock::new();
    CAT.get_or_init(|| build_default_catalog(&ProfileParams::default()).unwrap())
}

// ---------------------------------------------------------------------------
// 1-3: directional comparisons on the default grid

fn grid_config() -> ExperimentConfig {
    ExperimentConfig {
        variants: vec![Variant::Lru, Variant::CaceMinusP4, Variant::CaceFull],
        ..ExperimentConfig::default()
    }
}

fn hit(t: &ComparisonTable, p: PatternName, v: Variant) -> f64 {
    t.row(p.as_str(), v.as_str()).unwrap().metrics.cache_hit_rate
}

fn load(t: &ComparisonTable, p: PatternName, v: Variant) -> f64 {
    t.row(p.as_str(), v.as_str()).unwrap().metrics.load_overhead_s
}

/// Mean number of distinct models requested per arrival window.
fn distinct_per_window(trace: &Trace, catalog: &ModelCatalog) -> f64 {
    let mut per_window: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
    for r in &trace.requests {
        let w = ((r.arrival_time_s / trace.window_duration_s) as u64).min(trace.windows as u64 - 1);
        per_window
            .entry(w)
            .or_default()
            .insert(catalog.lookup_index(r.language, r.task_class).unwrap());
    }
    let total: usize = (0..trace.windows as u64)
        .map(|w| per_window.get(&w).map_or(0, BTreeSet::len))
        .sum();
    total as f64 / trace.windows as f64
}

fn criterion_1() -> Verdict {
    let cfg = grid_config();
    let cat = catalog();
    let (_, t) = compare_grid(&cfg, cat, Variant::Lru).unwrap();
    let mut ok = cfg.seeds.len() >= 5 && cfg.cluster.num_accelerators == CAPACITY;
    let mut notes = Vec::new();
    for &p in &cfg.patterns {
        let distinct: f64 = cfg
            .seeds
            .iter()
            .map(|&s| distinct_per_window(&cfg.trace(p, s, cat).unwrap(), cat))
            .sum::<f64>()
            / cfg.seeds.len() as f64;
        let (hl, hc) = (hit(&t, p, Variant::Lru), hit(&t, p, Variant::CaceMinusP4));
        let (ll, lc) = (load(&t, p, Variant::Lru), load(&t, p, Variant::CaceMinusP4));
        let red = (ll - lc) / ll;
        ok &= distinct >= 12.0 && hc > hl && lc < ll;
        if p != PatternName::Uniform {
            ok &= (0.10..=0.60).contains(&red);
        }
        notes.push(format!(
            "{p}: distinct/window {distinct:.1}, hit {hl:.3}->{hc:.3}, load reduction {:.1}%",
            red * 100.0
        ));
    }
    Verdict::new(ok, notes.join("; "))
}

fn criterion_2() -> Verdict {
    let cfg = grid_config();
    let (_, t) = compare_grid(&cfg, catalog(), Variant::Lru).unwrap();
    let mut ok = true;
    let mut eviction_ratio_met = false;
    let mut notes = Vec::new();
    for &p in &cfg.patterns {
        let row = |v: Variant| &t.row(p.as_str(), v.as_str()).unwrap().metrics;
        let (lru, p4, full) = (row(Variant::Lru), row(Variant::CaceMinusP4), row(Variant::CaceFull));
        let ordered = full.cache_hit_rate >= p4.cache_hit_rate && p4.cache_hit_rate >= lru.cache_hit_rate;
        let (tl, tf) = (lru.ttft().unwrap(), full.ttft().unwrap());
        let faster = tf.mean_s < tl.mean_s && tf.p95_s < tl.p95_s;
        let ratio = full.evictions / lru.evictions;
        eviction_ratio_met |= ratio <= 0.7;
        ok &= ordered && faster;
        notes.push(format!(
            "{p}: hit lru {:.3} / cace-p4 {:.3} / cace {:.3}{}, ttft mean {:.2}->{:.2} p95 {:.2}->{:.2}, evictions x{ratio:.2}",
            lru.cache_hit_rate,
            p4.cache_hit_rate,
            full.cache_hit_rate,
            if ordered { "" } else { " (out of order)" },
            tl.mean_s,
            tf.mean_s,
            tl.p95_s,
            tf.p95_s,
        ));
    }
    Verdict::new(ok && eviction_ratio_met, notes.join("; "))
}

fn criterion_3() -> Verdict {
    let cfg = ablation_config(&ExperimentConfig::default(), PatternName::PopularitySkewed);
    let (_, t) = compare_grid(&cfg, catalog(), Variant::CaceFull).unwrap();
    let p = PatternName::PopularitySkewed;
    let full = hit(&t, p, Variant::CaceFull);
    let drop = |v: Variant| full - hit(&t, p, v);
    let (d1, d2, d3, d4) = (
        drop(Variant::CaceMinusP1),
        drop(Variant::CaceMinusP2),
        drop(Variant::CaceMinusP3),
        drop(Variant::CaceMinusP4),
    );
    let ok = cfg.seeds.len() >= 5 && d4 >= d3 && d3 > d1.max(d2) && d4 >= 0.05;
    Verdict::new(
        ok,
        format!("hit {full:.3}; drops -P1 {d1:+.3}, -P2 {d2:+.3}, -P3 {d3:+.3}, -P4 {d4:+.3}"),
    )
}

// ---------------------------------------------------------------------------
// 4: victim selection against a brute-force argmax

/// Score recomputed from the closed-form terms, independent of the library.
#[allow(clippy::too_many_arguments)]
fn oracle_score(
    entry: &ResidencyEntry,
    d: &ModelDescriptor,
    window: &LookaheadWindow,
    clock: f64,
    variant: Variant,
    mode: P1Mode,
    w1: f64,
    normalizer: f64,
) -> f64 {
    let t = (clock - entry.last_used_s).max(1.0);
    let inv = 1.0 / (1.0 + t.ln());
    let p1 = match mode {
        P1Mode::Prose => 1.0 - inv,
        P1Mode::Verbatim => inv,
    };
    let p2 = 1.0 / (1.0 + d.load_time_s / 100.0);
    let p3 = match window.model_ids.iter().position(|m| *m == entry.model_id) {
        Some(i) => i as f64 / window.length as f64,
        None => 1.0,
    };
    let p4 = w1 * d.expected_output_tokens as f64 / normalizer;
    let keep = |k: u8| {
        !matches!(
            (variant, k),
            (Variant::CaceMinusP1, 1)
                | (Variant::CaceMinusP2, 2)
                | (Variant::CaceMinusP3, 3)
                | (Variant::CaceMinusP4, 4)
        )
    };
    let mut total = 0.0;
    for (k, v) in [(1, p1), (2, p2), (3, p3), (4, p4)] {
        total += if keep(k) { v } else { 0.0 };
    }
    total
}

fn oracle_victim(
    residency: &[ResidencyEntry],
    window: &LookaheadWindow,
    cat: &ModelCatalog,
    clock: f64,
    variant: Variant,
    mode: P1Mode,
    w1: f64,
) -> Option<String> {
    let normalizer = cat.models().iter().map(|m| m.expected_output_tokens).max().unwrap() as f64;
    let mut best: Option<(f64, &ResidencyEntry)> = None;
    for e in residency.iter().filter(|e| !e.busy) {
        let s = if variant == Variant::Lru {
            -e.last_used_s
        } else {
            let d = cat.models().iter().find(|m| m.model_id == e.model_id).unwrap();
            oracle_score(e, d, window, clock, variant, mode, w1, normalizer)
        };
        let better = match best {
            None => true,
            Some((bs, be)) => {
                s > bs
                    || (s == bs
                        && (e.last_used_s < be.last_used_s
                            || (e.last_used_s == be.last_used_s && e.model_id < be.model_id)))
            }
        };
        if better {
            best = Some((s, e));
        }
    }
    best.map(|(_, e)| e.model_id.clone())
}

fn random_instance(rng: &mut ChaCha8Rng, cat: &ModelCatalog) -> (Vec<ResidencyEntry>, LookaheadWindow, f64) {
    let ids: Vec<&str> = cat.models().iter().map(|m| m.model_id.as_str()).collect();
    let clock = rng.random_range(0.0..200.0_f64).round();
    let n = rng.random_range(1..=CAPACITY);
    let coarse = rng.random_bool(0.5);
    let mut entries: Vec<ResidencyEntry> = ids
        .choose_multiple(rng, n)
        .map(|id| {
            let mut last = rng.random_range(0.0..=clock);
            if coarse {
                last = (last / 20.0).floor() * 20.0;
            }
            ResidencyEntry {
                model_id: id.to_string(),
                last_used_s: last,
                busy: rng.random_bool(0.25),
            }
        })
        .collect();
    entries.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let length = rng.random_range(1..=12);
    let pending: Vec<&str> = (0..rng.random_range(0..20))
        .map(|_| *ids.choose(rng).unwrap())
        .collect();
    let mut model_ids: Vec<String> = Vec::new();
    for id in pending.iter().take(length) {
        if !model_ids.iter().any(|m| m == id) {
            model_ids.push(id.to_string());
        }
    }
    (entries, LookaheadWindow { length, model_ids }, clock)
}

fn criterion_4() -> Verdict {
    let cat = catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut ties = 0;
    for variant in Variant::ALL {
        for _ in 0..10_000 {
            let (entries, window, clock) = random_instance(&mut rng, cat);
            let mode = if rng.random_bool(0.5) {
                P1Mode::Prose
            } else {
                P1Mode::Verbatim
            };
            let w1 = *[1.0, 0.5, 2.0].choose(&mut rng).unwrap();
            let cfg = PolicyConfig {
                variant,
                w1,
                window_length: window.length,
                output_token_normalizer: None,
                p1_mode: mode,
            }
            .resolved(cat);
            let residency = ResidencySet::new(CAPACITY, entries.clone()).unwrap();
            let got = select_victim(&residency, &window, cat, clock, &cfg).unwrap();
            let want = oracle_victim(&entries, &window, cat, clock, variant, mode, w1);
            let idle: Vec<_> = entries.iter().filter(|e| !e.busy).collect();
            if idle.len() > 1
                && idle.iter().any(|a| {
                    idle.iter()
                        .any(|b| a.model_id != b.model_id && a.last_used_s == b.last_used_s)
                })
            {
                ties += 1;
            }
            if got != want {
                mismatches += 1;
            }
        }
    }
    Verdict::new(
        mismatches == 0,
        format!(
            "{} instances, {mismatches} mismatches, {ties} with equal last-use times",
            10_000 * Variant::ALL.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5: term spot checks

fn criterion_5() -> Verdict {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let checks = [
        ("p2(l=100)", close(reload_term(100.0), 0.5)),
        ("p3(absent)", close(future_term(None, 10), 1.0)),
        ("p3(i=0)", close(future_term(Some(0), 10), 0.0)),
        ("verbatim p1(t=0)", close(recency_term(0.0, P1Mode::Verbatim), 1.0)),
        ("verbatim p1(t=0.5)", close(recency_term(0.5, P1Mode::Verbatim), 1.0)),
        ("verbatim p1(t=1)", close(recency_term(1.0, P1Mode::Verbatim), 1.0)),
    ];
    let failed: Vec<_> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Verdict::new(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks exact to 1e-12", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

// ---------------------------------------------------------------------------
// 6-7: engine invariants on random traces

fn random_trace(rng: &mut ChaCha8Rng, models: &[&ModelDescriptor], max_len: usize) -> Trace {
    let n = rng.random_range(0..=max_len);
    let horizon = rng.random_range(1.0..120.0);
    let mut times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..horizon)).collect();
    if rng.random_bool(0.2) {
        // bursts of simultaneous arrivals
        for t in &mut times {
            *t = t.floor();
        }
    }
    times.sort_by(f64::total_cmp);
    let requests = times
        .into_iter()
        .enumerate()
        .map(|(i, arrival_time_s)| {
            let m = models.choose(rng).unwrap();
            Request {
                request_id: i as u64,
                arrival_time_s,
                language: m.language,
                task_class: m.task_class,
                prompt_tokens: rng.random_range(1..2048),
                output_tokens: rng.random_range(0..800),
            }
        })
        .collect();
    Trace {
        pattern: PatternName::Uniform,
        seed: 0,
        window_duration_s: horizon,
        windows: 1,
        arrival_rate_per_s: 1.0,
        requests,
    }
}

fn simulate(trace: &Trace, variant: Variant) -> SimulationReport {
    let cat = catalog();
    let policy = make_policy(PolicyConfig::for_variant(variant), cat).unwrap();
    run(
        trace,
        cat,
        &ClusterConfig::with_accelerators(CAPACITY),
        &policy,
        &EngineConfig::default(),
    )
    .unwrap()
}

fn conservation_violations(trace: &Trace, r: &SimulationReport) -> Vec<&'static str> {
    let cat = catalog();
    let mut bad = Vec::new();
    let mut served: Vec<u64> = r.outcomes.iter().map(|o| o.request_id).collect();
    served.sort_unstable();
    let expected: Vec<u64> = trace.requests.iter().map(|q| q.request_id).collect();
    if served != expected {
        bad.push("served exactly once");
    }
    let c = &r.counters;
    if c.hits + c.misses != c.total_requests || c.total_requests != trace.requests.len() as u64 {
        bad.push("hits + misses = total");
    }
    let loaded: f64 = r
        .outcomes
        .iter()
        .filter(|o| o.cold_start)
        .map(|o| cat.get(&o.model_id).unwrap().load_time_s)
        .sum();
    if c.loads != c.misses || (loaded - c.load_overhead_s).abs() > 1e-9 * loaded.max(1.0) {
        bad.push("load overhead = sum of load times");
    }
    if c.peak_resident_models > CAPACITY {
        bad.push("residency within capacity");
    }
    if r.outcomes
        .iter()
        .any(|o| o.e2e_s != o.ttft_s + o.decode_s || o.ttft_s < o.prefill_s)
    {
        bad.push("e2e = ttft + decode");
    }
    if c.evictions > c.misses {
        bad.push("evictions <= misses");
    }
    bad
}

fn criterion_6() -> Verdict {
    let cat = catalog();
    let models: Vec<&ModelDescriptor> = cat.models().iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = BTreeSet::new();
    let mut requests = 0;
    for i in 0..1_000 {
        let trace = random_trace(&mut rng, &models, 80);
        requests += trace.requests.len();
        let variant = Variant::ALL[i % Variant::ALL.len()];
        failures.extend(conservation_violations(&trace, &simulate(&trace, variant)));
    }
    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("1000 traces, {requests} requests, all invariants hold")
        } else {
            format!("violated: {}", failures.into_iter().collect::<Vec<_>>().join(", "))
        },
    )
}

fn criterion_7() -> Verdict {
    let cat = catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0;
    let mut runs = 0;
    for _ in 0..200 {
        let k = rng.random_range(1..=CAPACITY);
        let models: Vec<&ModelDescriptor> = cat
            .models()
            .iter()
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, k)
            .copied()
            .collect();
        let trace = random_trace(&mut rng, &models, 60);
        let distinct: BTreeSet<_> = trace.requests.iter().map(|r| (r.language, r.task_class)).collect();
        for variant in Variant::ALL {
            let r = simulate(&trace, variant);
            runs += 1;
            if r.counters.evictions != 0 || r.counters.hits != r.counters.total_requests - distinct.len() as u64 {
                bad += 1;
            }
        }
    }
    Verdict::new(bad == 0, format!("{runs} runs, {bad} deviating from the closed form"))
}

// ---------------------------------------------------------------------------
// 8: workload statistics

fn criterion_8() -> Verdict {
    let (rate, duration) = (2.0, 30.0);
    let lambda_t = rate * duration;
    let seeds = 1_000u64;
    let counts: Vec<f64> = (0..seeds)
        .map(|s| generate_arrivals(rate, duration, s).unwrap().len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / seeds as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
    let sigma = (lambda_t / seeds as f64).sqrt();
    let dispersion = var / mean;
    let poisson_ok = (mean - lambda_t).abs() <= 3.0 * sigma && (0.8..=1.2).contains(&dispersion);

    let ide = WorkloadPattern::preset(PatternName::IdeHeavy);
    let mut quota_misses = 0;
    for n in 0..=2_000usize {
        let completions = assign_labels(n, &ide, n as u64)
            .iter()
            .filter(|(_, t)| *t == TaskClass::Completion)
            .count();
        // nearest integer to 0.7n in exact integer arithmetic
        if completions != (7 * n + 5) / 10 {
            quota_misses += 1;
        }
    }
    let skewed = WorkloadPattern::preset(PatternName::PopularitySkewed);
    let labels = assign_labels(1_000, &skewed, 3);
    let java_completion = labels
        .iter()
        .filter(|l| **l == (Language::Java, TaskClass::Completion))
        .count();
    quota_misses += usize::from(java_completion != 140);

    Verdict::new(
        poisson_ok && quota_misses == 0,
        format!(
            "mean {mean:.3} vs {lambda_t} (3 sigma = {:.3}), dispersion {dispersion:.3}, {quota_misses} quota mismatches",
            3.0 * sigma
        ),
    )
}

// ---------------------------------------------------------------------------
// 9: determinism

fn grid_bytes(cells: &[CellRun], table: &ComparisonTable) -> Vec<Vec<u8>> {
    let mut out = vec![
        emit_table(table, OutputFormat::Json).unwrap(),
        emit_table(table, OutputFormat::Csv).unwrap(),
    ];
    for c in cells {
        out.push(c.report.to_json());
        out.push(emit_report(&c.report, OutputFormat::Csv).unwrap());
    }
    out
}

fn criterion_9() -> Verdict {
    let cfg = ExperimentConfig {
        variants: Variant::ALL.to_vec(),
        ..ExperimentConfig::default()
    };
    let (c1, t1) = compare_grid(&cfg, catalog(), Variant::Lru).unwrap();
    let (c2, t2) = compare_grid(&cfg, catalog(), Variant::Lru).unwrap();
    let (a, b) = (grid_bytes(&c1, &t1), grid_bytes(&c2, &t2));
    let same = a == b;
    Verdict::new(
        same,
        format!(
            "{} artifacts, {} bytes, identical: {same}",
            a.len(),
            a.iter().map(Vec::len).sum::<usize>()
        ),
    )
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_lookahead_beats_lru() {
    let (v, d) = timed(criterion_1);
    report(1, v, d);
}

#[test]
fn criterion_02_full_score_ordering() {
    let (v, d) = timed(criterion_2);
    report(2, v, d);
}

#[test]
fn criterion_03_ablation_ordering() {
    let (v, d) = timed(criterion_3);
    report(3, v, d);
}

#[test]
fn criterion_04_victim_matches_brute_force() {
    let (v, d) = timed(criterion_4);
    report(4, v, d);
}

#[test]
fn criterion_05_term_spot_checks() {
    let (v, d) = timed(criterion_5);
    report(5, v, d);
}

#[test]
fn criterion_06_engine_conservation() {
    let (v, d) = timed(criterion_6);
    report(6, v, d);
}

#[test]
fn criterion_07_capacity_sufficient_closed_form() {
    let (v, d) = timed(criterion_7);
    report(7, v, d);
}

#[test]
fn criterion_08_workload_statistics() {
    let (v, d) = timed(criterion_8);
    report(8, v, d);
}

#[test]
fn criterion_09_compare_is_deterministic() {
    let (v, d) = timed(criterion_9);
    report(9, v, d);
}

/// Runs 1-9 back to back regardless of their outcome and checks the wall time.
#[test]
fn criterion_10_suite_runtime() {
    let limit = Duration::from_secs(300);
    let start = Instant::now();
    let checks: [fn() -> Verdict; 9] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let passed = checks.iter().filter(|c| c().pass).count();
    let elapsed = start.elapsed();
    report(
        10,
        Verdict::new(
            elapsed < limit,
            format!(
                "criteria 1-9 took {:.1}s sequentially ({passed}/9 passing)",
                elapsed.as_secs_f64()
            ),
        ),
        elapsed,
    );
}
