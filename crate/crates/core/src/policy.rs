//! Eviction policies: the context-aware eviction score, its single-factor
//! ablations, and the LRU baseline.
//!
//! The score for a resident model is the sum of four terms, and the idle
//! resident with the highest score is evicted:
//!
//! | term | input | value |
//! |------|-------|-------|
//! | recency | `t` = seconds since last use, clamped to ≥ 1 | `1 − 1/(1 + ln t)` (or `1/(1 + ln t)` in verbatim mode) |
//! | reload cost | `l` = load time in seconds | `1/(1 + l/100)` |
//! | future demand | `i` = 0-based position in the lookahead window of length `w` | `i/w`, or `1` if absent |
//! | task criticality | `o` = expected output tokens of the model | `w1 · o / normalizer` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{ModelCatalog, ModelDescriptor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "lru")]
    Lru,
    #[serde(rename = "cace")]
    CaceFull,
    #[serde(rename = "cace-p1")]
    CaceMinusP1,
    #[serde(rename = "cace-p2")]
    CaceMinusP2,
    #[serde(rename = "cace-p3")]
    CaceMinusP3,
    #[serde(rename = "cace-p4")]
    CaceMinusP4,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Lru,
        Variant::CaceFull,
        Variant::CaceMinusP1,
        Variant::CaceMinusP2,
        Variant::CaceMinusP3,
        Variant::CaceMinusP4,
    ];

    pub const ABLATION: [Variant; 5] = [
        Variant::CaceFull,
        Variant::CaceMinusP1,
        Variant::CaceMinusP2,
        Variant::CaceMinusP3,
        Variant::CaceMinusP4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lru => "lru",
            Variant::CaceFull => "cace",
            Variant::CaceMinusP1 => "cace-p1",
            Variant::CaceMinusP2 => "cace-p2",
            Variant::CaceMinusP3 => "cace-p3",
            Variant::CaceMinusP4 => "cace-p4",
        }
    }

    pub fn factors(self) -> FactorSet {
        let all = FactorSet {
            recency: true,
            reload: true,
            future: true,
            criticality: true,
        };
        match self {
            Variant::Lru => FactorSet {
                recency: false,
                reload: false,
                future: false,
                criticality: false,
            },
            Variant::CaceFull => all,
            Variant::CaceMinusP1 => FactorSet { recency: false, ..all },
            Variant::CaceMinusP2 => FactorSet { reload: false, ..all },
            Variant::CaceMinusP3 => FactorSet { future: false, ..all },
            Variant::CaceMinusP4 => FactorSet {
                criticality: false,
                ..all
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown policy `{s}` (expected lru, cace, cace-p1, cace-p2, cace-p3 or cace-p4)"
            ))
        })
    }
}

/// Which score terms a variant keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FactorSet {
    pub recency: bool,
    pub reload: bool,
    pub future: bool,
    pub criticality: bool,
}

/// Polarity of the recency term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum P1Mode {
    /// `1 − 1/(1 + ln t)`: staler models score higher and are evicted first.
    #[default]
    Prose,
    /// `1/(1 + ln t)` taken literally: fresher models score higher.
    Verbatim,
}

impl FromStr for P1Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prose" => Ok(P1Mode::Prose),
            "verbatim" => Ok(P1Mode::Verbatim),
            _ => Err(Error::InvalidInput(format!(
                "unknown p1 mode `{s}` (expected prose or verbatim)"
            ))),
        }
    }
}

impl fmt::Display for P1Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            P1Mode::Prose => "prose",
            P1Mode::Verbatim => "verbatim",
        })
    }
}

pub const DEFAULT_WINDOW_LENGTH: usize = 10;
pub const DEFAULT_W1: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub variant: Variant,
    pub w1: f64,
    pub window_length: usize,
    /// Divides expected output tokens in the criticality term. `None` means
    /// "largest expected output in the catalog", resolved by [`make_policy`].
    pub output_token_normalizer: Option<u32>,
    pub p1_mode: P1Mode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            variant: Variant::CaceFull,
            w1: DEFAULT_W1,
            window_length: DEFAULT_WINDOW_LENGTH,
            output_token_normalizer: None,
            p1_mode: P1Mode::Prose,
        }
    }
}

impl PolicyConfig {
    pub fn for_variant(variant: Variant) -> Self {
        PolicyConfig {
            variant,
            ..PolicyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 {
            return Err(Error::InvalidInput("window length must be at least 1".into()));
        }
        if !(self.w1.is_finite() && self.w1 >= 0.0) {
            return Err(Error::InvalidInput(format!("w1 must be non-negative, got {}", self.w1)));
        }
        if self.output_token_normalizer == Some(0) {
            return Err(Error::InvalidInput("output token normalizer must be positive".into()));
        }
        Ok(())
    }

    /// Fills the normalizer from the catalog when unset.
    pub fn resolved(mut self, catalog: &ModelCatalog) -> Self {
        if self.output_token_normalizer.is_none() {
            self.output_token_normalizer = Some(catalog.max_expected_output_tokens());
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidencyEntry {
    pub model_id: String,
    pub last_used_s: f64,
    pub busy: bool,
}

/// Snapshot of the models held by the accelerator pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidencySet {
    capacity: usize,
    entries: Vec<ResidencyEntry>,
}

impl ResidencySet {
    pub fn new(capacity: usize, entries: Vec<ResidencyEntry>) -> Result<Self> {
        if entries.len() > capacity {
            return Err(Error::Validation(format!(
                "{} resident models exceed capacity {capacity}",
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.model_id == e.model_id) {
                return Err(Error::Validation(format!("model `{}` resident twice", e.model_id)));
            }
        }
        Ok(ResidencySet { capacity, entries })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ResidencyEntry] {
        &self.entries
    }

    pub fn idle(&self) -> impl Iterator<Item = &ResidencyEntry> {
        self.entries.iter().filter(|e| !e.busy)
    }
}

/// Deduplicated prefix of the pending queue's models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookaheadWindow {
    pub length: usize,
    pub model_ids: Vec<String>,
}

impl LookaheadWindow {
    pub fn empty(length: usize) -> Self {
        LookaheadWindow {
            length,
            model_ids: Vec::new(),
        }
    }

    pub fn position(&self, model_id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == model_id)
    }
}

/// Takes the first `length` pending ids and drops repeats, keeping first occurrences.
pub fn dedup_window<S: AsRef<str>>(pending_model_ids: &[S], length: usize) -> LookaheadWindow {
    let mut model_ids: Vec<String> = Vec::new();
    for id in pending_model_ids.iter().take(length) {
        let id = id.as_ref();
        if !model_ids.iter().any(|m| m == id) {
            model_ids.push(id.to_string());
        }
    }
    LookaheadWindow { length, model_ids }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub model_id: String,
    pub p1_recency: f64,
    pub p2_reload: f64,
    pub p3_future: f64,
    pub p4_criticality: f64,
    pub total: f64,
}

pub fn recency_term(elapsed_s: f64, mode: P1Mode) -> f64 {
    let t = elapsed_s.max(1.0);
    let inverse = 1.0 / (1.0 + t.ln());
    match mode {
        P1Mode::Prose => 1.0 - inverse,
        P1Mode::Verbatim => inverse,
    }
}

pub fn reload_term(load_time_s: f64) -> f64 {
    1.0 / (1.0 + load_time_s / 100.0)
}

pub fn future_term(position: Option<usize>, window_length: usize) -> f64 {
    match position {
        Some(i) => i as f64 / window_length as f64,
        None => 1.0,
    }
}

pub fn criticality_term(expected_output_tokens: u32, normalizer: u32, w1: f64) -> f64 {
    w1 * (expected_output_tokens as f64 / normalizer as f64)
}

/// Scores one resident model. Disabled terms are reported as zero.
pub fn eviction_score(
    entry: &ResidencyEntry,
    descriptor: &ModelDescriptor,
    window: &LookaheadWindow,
    clock: f64,
    cfg: &PolicyConfig,
) -> Result<ScoreBreakdown> {
    if clock < entry.last_used_s {
        return Err(Error::InvalidInput(format!(
            "clock {clock} precedes last use {} of `{}`",
            entry.last_used_s, entry.model_id
        )));
    }
    let normalizer = cfg
        .output_token_normalizer
        .ok_or_else(|| Error::InvalidInput("output token normalizer unresolved; call PolicyConfig::resolved".into()))?;
    let on = cfg.variant.factors();
    let gate = |enabled: bool, v: f64| if enabled { v } else { 0.0 };

    let p1_recency = gate(on.recency, recency_term(clock - entry.last_used_s, cfg.p1_mode));
    let p2_reload = gate(on.reload, reload_term(descriptor.load_time_s));
    let p3_future = gate(on.future, future_term(window.position(&entry.model_id), window.length));
    let p4_criticality = gate(
        on.criticality,
        criticality_term(descriptor.expected_output_tokens, normalizer, cfg.w1),
    );
    Ok(ScoreBreakdown {
        model_id: entry.model_id.clone(),
        p1_recency,
        p2_reload,
        p3_future,
        p4_criticality,
        total: p1_recency + p2_reload + p3_future + p4_criticality,
    })
}

/// Picks the idle resident to evict, or `None` when every resident is busy.
///
/// LRU takes the idle entry with the oldest `last_used_s`. Score variants
/// visit idle entries oldest-first and keep the first strict maximum, which
/// breaks ties by older `last_used_s` and then by `model_id`.
pub fn select_victim(
    residency: &ResidencySet,
    window: &LookaheadWindow,
    catalog: &ModelCatalog,
    clock: f64,
    cfg: &PolicyConfig,
) -> Result<Option<String>> {
    let mut idle: Vec<&ResidencyEntry> = residency.idle().collect();
    idle.sort_by(|a, b| {
        a.last_used_s
            .total_cmp(&b.last_used_s)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    if cfg.variant == Variant::Lru {
        return Ok(idle.first().map(|e| e.model_id.clone()));
    }
    let mut best: Option<(f64, &ResidencyEntry)> = None;
    for entry in idle {
        let descriptor = catalog.get(&entry.model_id)?;
        let score = eviction_score(entry, descriptor, window, clock, cfg)?.total;
        if best.is_none_or(|(top, _)| score > top) {
            best = Some((score, entry));
        }
    }
    Ok(best.map(|(_, e)| e.model_id.clone()))
}

/// Victim selection strategy consulted by the simulator.
pub trait EvictionPolicy: Send + Sync {
    fn name(&self) -> String;

    /// Stable description of the policy and its knobs, folded into run hashes.
    fn describe(&self) -> String {
        self.name()
    }

    fn select_victim(
        &self,
        residency: &ResidencySet,
        window: &LookaheadWindow,
        catalog: &ModelCatalog,
        clock: f64,
    ) -> Result<Option<String>>;
}

/// A variant bound to a resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    cfg: PolicyConfig,
}

impl Policy {
    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }
}

pub fn make_policy(cfg: PolicyConfig, catalog: &ModelCatalog) -> Result<Policy> {
    cfg.validate()?;
    Ok(Policy {
        cfg: cfg.resolved(catalog),
    })
}

impl EvictionPolicy for Policy {
    fn name(&self) -> String {
        self.cfg.variant.to_string()
    }

    fn describe(&self) -> String {
        serde_json::to_string(&self.cfg).expect("policy config serializes")
    }

    fn select_victim(
        &self,
        residency: &ResidencySet,
        window: &LookaheadWindow,
        catalog: &ModelCatalog,
        clock: f64,
    ) -> Result<Option<String>> {
        select_victim(residency, window, catalog, clock, &self.cfg)
    }
}
