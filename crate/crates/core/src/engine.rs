//! Discrete-event simulation of the serving orchestrator.
//!
//! Requests enter one global FIFO queue. Only the head of the queue is ever
//! dispatched: it is served when its model is resident and idle, waits when
//! its model is resident but busy or still loading, and otherwise triggers a
//! load into a free accelerator or, failing that, an eviction chosen by the
//! configured [`EvictionPolicy`]. Each accelerator holds exactly one model and
//! serves one request at a time.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{ModelCatalog, ModelDescriptor, TaskClass};
use crate::error::{Error, Result};
use crate::policy::{dedup_window, EvictionPolicy, LookaheadWindow, ResidencyEntry, ResidencySet};
use crate::workload::{PatternName, Request, Trace};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub num_accelerators: usize,
    pub models_per_accelerator: usize,
    pub unload_time_s: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            num_accelerators: 4,
            models_per_accelerator: 1,
            unload_time_s: 0.0,
        }
    }
}

impl ClusterConfig {
    pub fn with_accelerators(num_accelerators: usize) -> Self {
        ClusterConfig {
            num_accelerators,
            ..ClusterConfig::default()
        }
    }

    pub fn capacity(&self) -> usize {
        self.num_accelerators * self.models_per_accelerator
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_accelerators == 0 {
            return Err(Error::InvalidInput("need at least one accelerator".into()));
        }
        if self.models_per_accelerator != 1 {
            return Err(Error::InvalidInput(
                "only one model per accelerator is supported".into(),
            ));
        }
        if !(self.unload_time_s.is_finite() && self.unload_time_s >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "unload time must be non-negative, got {}",
                self.unload_time_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub window_length: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            window_length: crate::policy::DEFAULT_WINDOW_LENGTH,
        }
    }
}

/// Event kinds in tie-break order: at equal timestamps loads finish first,
/// then services, then arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    LoadComplete,
    ServiceComplete,
    Arrival,
}

#[derive(Debug, Clone, Copy)]
pub struct SimEvent {
    pub time_s: f64,
    pub kind: EventKind,
    pub seq: u64,
    /// Request index for arrivals, accelerator slot otherwise.
    pub payload: usize,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    // reversed so BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_s
            .total_cmp(&self.time_s)
            .then(other.kind.cmp(&self.kind))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: u64,
    pub model_id: String,
    pub task_class: TaskClass,
    pub cold_start: bool,
    pub queue_wait_s: f64,
    pub load_wait_s: f64,
    pub prefill_s: f64,
    pub decode_s: f64,
    pub ttft_s: f64,
    pub e2e_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub total_requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub loads: u64,
    pub load_overhead_s: f64,
    pub peak_resident_models: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub policy: String,
    pub pattern: PatternName,
    pub seed: u64,
    pub num_accelerators: usize,
    pub window_length: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub report_version: u32,
    pub run_meta: RunMeta,
    pub counters: Counters,
    pub outcomes: Vec<RequestOutcome>,
}

impl SimulationReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let report: SimulationReport = serde_json::from_slice(bytes)?;
        if report.report_version != REPORT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported report_version {}",
                report.report_version
            )));
        }
        Ok(report)
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.counters.hits + self.counters.misses;
        if total == 0 {
            0.0
        } else {
            self.counters.hits as f64 / total as f64
        }
    }
}

/// Prefill and decode durations of `request` on `descriptor`'s model.
pub fn service_times(request: &Request, descriptor: &ModelDescriptor) -> (f64, f64) {
    let prefill_s = request.prompt_tokens as f64 / descriptor.prefill_rate_tps;
    let decode_s = request.output_tokens.max(1) as f64 / descriptor.decode_rate_tps;
    (prefill_s, decode_s)
}

/// Lookahead window over the first `window_length` pending requests.
pub fn snapshot_window<'a>(
    pending: impl IntoIterator<Item = &'a Request>,
    window_length: usize,
    catalog: &ModelCatalog,
) -> Result<LookaheadWindow> {
    let ids = pending
        .into_iter()
        .take(window_length)
        .map(|r| catalog.lookup(r.language, r.task_class).map(|m| m.model_id.as_str()))
        .collect::<Result<Vec<_>>>()?;
    Ok(dedup_window(&ids, window_length))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotState {
    Loading,
    Idle,
    Busy,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    model: usize,
    state: SlotState,
    last_used_s: f64,
}

struct InFlight {
    request: usize,
    start_s: f64,
}

struct Simulation<'a> {
    requests: &'a [Request],
    request_model: Vec<usize>,
    catalog: &'a ModelCatalog,
    cluster: ClusterConfig,
    engine: EngineConfig,
    policy: &'a dyn EvictionPolicy,

    clock: f64,
    seq: u64,
    events: BinaryHeap<SimEvent>,
    pending: VecDeque<usize>,
    slots: Vec<Option<Slot>>,
    serving: Vec<Option<InFlight>>,

    attempted: Vec<bool>,
    hit: Vec<bool>,
    load_wait: Vec<f64>,
    outcomes: Vec<Option<RequestOutcome>>,
    counters: Counters,
}

impl<'a> Simulation<'a> {
    fn schedule(&mut self, time_s: f64, kind: EventKind, payload: usize) {
        self.seq += 1;
        self.events.push(SimEvent {
            time_s,
            kind,
            seq: self.seq,
            payload,
        });
    }

    fn slot_of(&self, model: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.is_some_and(|s| s.model == model))
    }

    fn residency(&self) -> Result<ResidencySet> {
        let entries = self
            .slots
            .iter()
            .flatten()
            .map(|s| ResidencyEntry {
                model_id: self.catalog.models()[s.model].model_id.clone(),
                last_used_s: s.last_used_s,
                busy: s.state != SlotState::Idle,
            })
            .collect();
        ResidencySet::new(self.cluster.capacity(), entries)
    }

    fn window(&self) -> Result<LookaheadWindow> {
        snapshot_window(
            self.pending.iter().map(|&i| &self.requests[i]),
            self.engine.window_length,
            self.catalog,
        )
    }

    fn start_load(&mut self, slot: usize, model: usize, request: usize, delay_s: f64) {
        let load_time_s = self.catalog.models()[model].load_time_s;
        self.slots[slot] = Some(Slot {
            model,
            state: SlotState::Loading,
            last_used_s: self.clock,
        });
        self.counters.loads += 1;
        self.counters.load_overhead_s += load_time_s;
        self.load_wait[request] = delay_s + load_time_s;
        self.schedule(self.clock + delay_s + load_time_s, EventKind::LoadComplete, slot);
    }

    fn start_service(&mut self, slot: usize, request: usize) {
        let req = &self.requests[request];
        let model = &self.catalog.models()[self.request_model[request]];
        let (prefill_s, decode_s) = service_times(req, model);
        let ttft_s = (self.clock - req.arrival_time_s) + prefill_s;
        let load_wait_s = self.load_wait[request];
        self.outcomes[request] = Some(RequestOutcome {
            request_id: req.request_id,
            model_id: model.model_id.clone(),
            task_class: req.task_class,
            cold_start: !self.hit[request],
            queue_wait_s: (self.clock - req.arrival_time_s - load_wait_s).max(0.0),
            load_wait_s,
            prefill_s,
            decode_s,
            ttft_s,
            e2e_s: ttft_s + decode_s,
        });
        if let Some(s) = self.slots[slot].as_mut() {
            s.state = SlotState::Busy;
        }
        self.serving[slot] = Some(InFlight {
            request,
            start_s: self.clock,
        });
        self.schedule(self.clock + prefill_s + decode_s, EventKind::ServiceComplete, slot);
    }

    fn dispatch(&mut self) -> Result<()> {
        while let Some(&head) = self.pending.front() {
            let model = self.request_model[head];
            let first_attempt = !self.attempted[head];
            self.attempted[head] = true;

            if let Some(slot) = self.slot_of(model) {
                if first_attempt {
                    self.hit[head] = true;
                    self.counters.hits += 1;
                }
                let state = self.slots[slot].map(|s| s.state);
                if state == Some(SlotState::Idle) {
                    self.pending.pop_front();
                    self.start_service(slot, head);
                    continue;
                }
                // model busy or still loading: head-of-line wait
                return Ok(());
            }

            if first_attempt {
                self.counters.misses += 1;
            }
            if let Some(free) = self.slots.iter().position(Option::is_none) {
                // the head stays queued until its model is ready
                self.start_load(free, model, head, 0.0);
                return Ok(());
            }

            let residency = self.residency()?;
            let window = self.window()?;
            let Some(victim) = self
                .policy
                .select_victim(&residency, &window, self.catalog, self.clock)?
            else {
                return Ok(());
            };
            let slot = self
                .slots
                .iter()
                .position(|s| {
                    s.is_some_and(|s| s.state == SlotState::Idle && self.catalog.models()[s.model].model_id == victim)
                })
                .ok_or_else(|| Error::Validation(format!("policy chose `{victim}`, which is not an idle resident")))?;
            self.counters.evictions += 1;
            self.start_load(slot, model, head, self.cluster.unload_time_s);
            return Ok(());
        }
        Ok(())
    }

    fn step(&mut self, event: SimEvent) -> Result<()> {
        debug_assert!(event.time_s >= self.clock);
        self.clock = event.time_s;
        match event.kind {
            EventKind::Arrival => self.pending.push_back(event.payload),
            EventKind::LoadComplete => {
                let slot = self.slots[event.payload].as_mut().expect("loading slot occupied");
                slot.state = SlotState::Idle;
                slot.last_used_s = self.clock;
            }
            EventKind::ServiceComplete => {
                let inflight = self.serving[event.payload].take().expect("slot was serving");
                debug_assert!(inflight.start_s <= self.clock);
                debug_assert!(self.outcomes[inflight.request].is_some());
                let slot = self.slots[event.payload].as_mut().expect("serving slot occupied");
                slot.state = SlotState::Idle;
                slot.last_used_s = self.clock;
            }
        }
        self.dispatch()?;

        let resident = self.slots.iter().flatten().count();
        assert!(resident <= self.cluster.capacity(), "residency bound violated");
        self.counters.peak_resident_models = self.counters.peak_resident_models.max(resident);
        Ok(())
    }
}

fn config_hash(
    trace: &Trace,
    catalog: &ModelCatalog,
    cluster: &ClusterConfig,
    engine: &EngineConfig,
    policy: &dyn EvictionPolicy,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(crate::workload::serialize_trace(trace));
    hasher.update(catalog.save());
    hasher.update(serde_json::to_vec(cluster).expect("cluster serializes"));
    hasher.update(serde_json::to_vec(engine).expect("engine config serializes"));
    hasher.update(policy.describe().as_bytes());
    hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Replays `trace` on the cluster and returns the per-request outcomes.
pub fn run(
    trace: &Trace,
    catalog: &ModelCatalog,
    cluster: &ClusterConfig,
    policy: &dyn EvictionPolicy,
    engine: &EngineConfig,
) -> Result<SimulationReport> {
    cluster.validate()?;
    if engine.window_length == 0 {
        return Err(Error::InvalidInput("window length must be at least 1".into()));
    }
    let requests = &trace.requests;
    let request_model = requests
        .iter()
        .map(|r| catalog.lookup_index(r.language, r.task_class))
        .collect::<Result<Vec<_>>>()?;

    let n = requests.len();
    let mut sim = Simulation {
        requests,
        request_model,
        catalog,
        cluster: *cluster,
        engine: *engine,
        policy,
        clock: 0.0,
        seq: 0,
        events: BinaryHeap::with_capacity(n + cluster.capacity() * 2),
        pending: VecDeque::new(),
        slots: vec![None; cluster.capacity()],
        serving: (0..cluster.capacity()).map(|_| None).collect(),
        attempted: vec![false; n],
        hit: vec![false; n],
        load_wait: vec![0.0; n],
        outcomes: vec![None; n],
        counters: Counters {
            total_requests: n as u64,
            hits: 0,
            misses: 0,
            evictions: 0,
            loads: 0,
            load_overhead_s: 0.0,
            peak_resident_models: 0,
        },
    };
    for (i, r) in requests.iter().enumerate() {
        sim.schedule(r.arrival_time_s, EventKind::Arrival, i);
    }

    while let Some(event) = sim.events.pop() {
        sim.step(event)?;
    }
    if !sim.pending.is_empty() {
        return Err(Error::Deadlock {
            time_s: sim.clock,
            pending: sim.pending.len(),
        });
    }

    let outcomes = sim
        .outcomes
        .into_iter()
        .map(|o| o.expect("every request is served once the queue drains"))
        .collect();
    Ok(SimulationReport {
        report_version: REPORT_VERSION,
        run_meta: RunMeta {
            policy: policy.name(),
            pattern: trace.pattern,
            seed: trace.seed,
            num_accelerators: cluster.num_accelerators,
            window_length: engine.window_length,
            config_hash: config_hash(trace, catalog, cluster, engine, policy),
        },
        counters: sim.counters,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{build_default_catalog, Language, ProfileParams};
    use crate::policy::{make_policy, PolicyConfig, Variant};

    fn catalog() -> ModelCatalog {
        build_default_catalog(&ProfileParams::default()).unwrap()
    }

    fn req(id: u64, t: f64, language: Language, task_class: TaskClass) -> Request {
        let (prompt_tokens, output_tokens) = match task_class {
            TaskClass::Completion => (256, 50),
            TaskClass::Reasoning => (512, 600),
        };
        Request {
            request_id: id,
            arrival_time_s: t,
            language,
            task_class,
            prompt_tokens,
            output_tokens,
        }
    }

    fn trace(requests: Vec<Request>) -> Trace {
        Trace {
            pattern: PatternName::Uniform,
            seed: 0,
            window_duration_s: 1000.0,
            windows: 1,
            arrival_rate_per_s: 1.0,
            requests,
        }
    }

    fn simulate(t: &Trace, accelerators: usize, variant: Variant) -> SimulationReport {
        let cat = catalog();
        let policy = make_policy(PolicyConfig::for_variant(variant), &cat).unwrap();
        run(
            t,
            &cat,
            &ClusterConfig::with_accelerators(accelerators),
            &policy,
            &EngineConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn service_time_examples() {
        let cat = catalog();
        let mut d = cat.lookup(Language::Go, TaskClass::Completion).unwrap().clone();
        d.prefill_rate_tps = 1024.0;
        let r = req(0, 0.0, Language::Go, TaskClass::Completion);
        assert_eq!(service_times(&r, &d).0, 0.25);

        let mut zero = r.clone();
        zero.output_tokens = 0;
        assert_eq!(service_times(&zero, &d).1, 1.0 / d.decode_rate_tps);

        let base = service_times(&r, &d).1;
        d.decode_rate_tps *= 2.0;
        assert_eq!(service_times(&r, &d).1, base / 2.0);
    }

    #[test]
    fn single_request_is_a_cold_start() {
        let t = trace(vec![req(0, 2.0, Language::Go, TaskClass::Completion)]);
        let report = simulate(&t, 4, Variant::Lru);
        let o = &report.outcomes[0];
        // load 1.5 s, prefill 256/2048 s, decode 50/1000 s
        assert!(o.cold_start);
        assert_eq!(o.ttft_s, 1.5 + 0.125);
        assert_eq!(o.e2e_s, 1.5 + 0.125 + 0.05);
        assert_eq!(o.load_wait_s, 1.5);
        assert_eq!(o.queue_wait_s, 0.0);
        assert_eq!(report.counters.hits, 0);
        assert_eq!(report.counters.misses, 1);
        assert_eq!(report.hit_rate(), 0.0);
    }

    #[test]
    fn back_to_back_same_model_hits() {
        let t = trace(vec![
            req(0, 0.0, Language::Go, TaskClass::Completion),
            req(1, 0.1, Language::Go, TaskClass::Completion),
        ]);
        let report = simulate(&t, 4, Variant::CaceFull);
        assert_eq!(report.counters.hits, 1);
        assert_eq!(report.counters.load_overhead_s, 1.5);
        let second = &report.outcomes[1];
        assert!(!second.cold_start);
        assert_eq!(second.load_wait_s, 0.0);
        // waits for the load (1.5) and the first service (0.175)
        assert!((second.ttft_s - (1.675 - 0.1 + 0.125)).abs() < 1e-12);
    }

    #[test]
    fn eviction_happens_when_full() {
        let t = trace(vec![
            req(0, 0.0, Language::Go, TaskClass::Completion),
            req(1, 10.0, Language::Rust, TaskClass::Completion),
            req(2, 20.0, Language::C, TaskClass::Completion),
        ]);
        let report = simulate(&t, 2, Variant::Lru);
        assert_eq!(report.counters.evictions, 1);
        assert_eq!(report.counters.loads, 3);
        assert_eq!(report.counters.peak_resident_models, 2);
    }

    #[test]
    fn window_snapshot_examples() {
        let cat = catalog();
        assert!(snapshot_window([], 10, &cat).unwrap().model_ids.is_empty());
        let q = [
            req(0, 0.0, Language::Java, TaskClass::Completion),
            req(1, 0.0, Language::Java, TaskClass::Completion),
            req(2, 0.0, Language::Python, TaskClass::Reasoning),
        ];
        assert_eq!(
            snapshot_window(&q, 10, &cat).unwrap().model_ids,
            ["java-completion-500m", "python-reasoning-7b"]
        );
        assert_eq!(
            snapshot_window(&q, 1, &cat).unwrap().model_ids,
            ["java-completion-500m"]
        );
    }

    #[test]
    fn event_order_breaks_ties_by_kind_then_seq() {
        let mut heap = BinaryHeap::new();
        let ev = |kind, seq| SimEvent {
            time_s: 1.0,
            kind,
            seq,
            payload: 0,
        };
        heap.push(ev(EventKind::Arrival, 1));
        heap.push(ev(EventKind::ServiceComplete, 2));
        heap.push(ev(EventKind::LoadComplete, 4));
        heap.push(ev(EventKind::LoadComplete, 3));
        heap.push(SimEvent {
            time_s: 0.5,
            ..ev(EventKind::Arrival, 9)
        });
        let order: Vec<_> = std::iter::from_fn(|| heap.pop()).map(|e| (e.kind, e.seq)).collect();
        assert_eq!(
            order,
            [
                (EventKind::Arrival, 9),
                (EventKind::LoadComplete, 3),
                (EventKind::LoadComplete, 4),
                (EventKind::ServiceComplete, 2),
                (EventKind::Arrival, 1),
            ]
        );
    }

    #[test]
    fn rejects_invalid_cluster() {
        let cat = catalog();
        let policy = make_policy(PolicyConfig::default(), &cat).unwrap();
        let t = trace(vec![]);
        assert!(run(
            &t,
            &cat,
            &ClusterConfig::with_accelerators(0),
            &policy,
            &EngineConfig::default()
        )
        .is_err());
        assert!(run(
            &t,
            &cat,
            &ClusterConfig::default(),
            &policy,
            &EngineConfig { window_length: 0 }
        )
        .is_err());
    }

    #[test]
    fn unload_time_delays_the_load() {
        let cat = catalog();
        let policy = make_policy(PolicyConfig::for_variant(Variant::Lru), &cat).unwrap();
        let t = trace(vec![
            req(0, 0.0, Language::Go, TaskClass::Completion),
            req(1, 10.0, Language::Rust, TaskClass::Completion),
        ]);
        let cluster = ClusterConfig {
            num_accelerators: 1,
            models_per_accelerator: 1,
            unload_time_s: 2.0,
        };
        let report = run(&t, &cat, &cluster, &policy, &EngineConfig::default()).unwrap();
        assert_eq!(report.outcomes[1].load_wait_s, 3.5);
        assert_eq!(report.counters.load_overhead_s, 3.0);
    }

    #[test]
    fn report_json_round_trip() {
        let t = trace(vec![
            req(0, 0.0, Language::Go, TaskClass::Completion),
            req(1, 0.3, Language::Java, TaskClass::Reasoning),
        ]);
        let report = simulate(&t, 4, Variant::CaceFull);
        assert_eq!(SimulationReport::from_json(&report.to_json()).unwrap(), report);
    }
}
