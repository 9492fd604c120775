//! Synthetic request traces: Poisson arrivals labeled with an exact-quota
//! task/language mix, plus the JSON-lines trace file format.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{Language, ModelCatalog, TaskClass};
use crate::error::{Error, Result};

pub const TRACE_VERSION: u32 = 1;
pub const DEFAULT_WINDOW_S: f64 = 30.0;

// Independent RNG streams derived from one seed.
const ARRIVAL_STREAM: u64 = 0;
const LABEL_STREAM: u64 = 1;
const TOKEN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternName {
    Uniform,
    IdeHeavy,
    PopularitySkewed,
}

impl PatternName {
    pub const ALL: [PatternName; 3] = [
        PatternName::Uniform,
        PatternName::IdeHeavy,
        PatternName::PopularitySkewed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternName::Uniform => "uniform",
            PatternName::IdeHeavy => "ide-heavy",
            PatternName::PopularitySkewed => "popularity-skewed",
        }
    }
}

impl fmt::Display for PatternName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternName::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown pattern `{s}` (expected uniform, ide-heavy or popularity-skewed)"
            ))
        })
    }
}

/// Task and language proportions defining a workload.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadPattern {
    pub name: PatternName,
    pub task_mix: Vec<(TaskClass, f64)>,
    pub language_mix: Vec<(Language, f64)>,
}

impl WorkloadPattern {
    pub fn preset(name: PatternName) -> Self {
        let uniform_languages: Vec<_> = Language::ALL.iter().map(|&l| (l, 1.0 / 8.0)).collect();
        match name {
            PatternName::Uniform => WorkloadPattern {
                name,
                task_mix: vec![(TaskClass::Completion, 0.5), (TaskClass::Reasoning, 0.5)],
                language_mix: uniform_languages,
            },
            PatternName::IdeHeavy => WorkloadPattern {
                name,
                task_mix: vec![(TaskClass::Completion, 0.7), (TaskClass::Reasoning, 0.3)],
                language_mix: uniform_languages,
            },
            PatternName::PopularitySkewed => WorkloadPattern {
                name,
                task_mix: vec![(TaskClass::Completion, 0.7), (TaskClass::Reasoning, 0.3)],
                language_mix: vec![
                    (Language::Java, 0.2),
                    (Language::Python, 0.2),
                    (Language::Cpp, 0.2),
                    (Language::JavaScript, 0.2),
                    (Language::Go, 0.05),
                    (Language::Rust, 0.05),
                    (Language::C, 0.05),
                    (Language::CSharp, 0.05),
                ],
            },
        }
    }

    pub fn task_fraction(&self, task_class: TaskClass) -> f64 {
        self.task_mix
            .iter()
            .find(|(t, _)| *t == task_class)
            .map_or(0.0, |(_, f)| *f)
    }

    pub fn language_fraction(&self, language: Language) -> f64 {
        self.language_mix
            .iter()
            .find(|(l, _)| *l == language)
            .map_or(0.0, |(_, f)| *f)
    }
}

/// One coding-task request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub request_id: u64,
    pub arrival_time_s: f64,
    pub language: Language,
    pub task_class: TaskClass,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OutputSampling {
    /// Every request of a class gets the class default.
    Fixed,
    /// Seeded lognormal around the class default (median), for sensitivity runs.
    LogNormal { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenParams {
    pub completion_prompt_tokens: u32,
    pub completion_output_tokens: u32,
    pub reasoning_prompt_tokens: u32,
    pub reasoning_output_tokens: u32,
    pub completion_output_cap: u32,
    pub output_sampling: OutputSampling,
}

impl Default for TokenParams {
    fn default() -> Self {
        TokenParams {
            completion_prompt_tokens: 256,
            completion_output_tokens: 50,
            reasoning_prompt_tokens: 512,
            reasoning_output_tokens: 600,
            completion_output_cap: 50,
            output_sampling: OutputSampling::Fixed,
        }
    }
}

impl TokenParams {
    fn tokens_for(&self, task_class: TaskClass) -> (u32, u32) {
        match task_class {
            TaskClass::Completion => (
                self.completion_prompt_tokens,
                self.completion_output_tokens.min(self.completion_output_cap),
            ),
            TaskClass::Reasoning => (self.reasoning_prompt_tokens, self.reasoning_output_tokens),
        }
    }
}

/// A time-ordered request stream plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub pattern: PatternName,
    pub seed: u64,
    pub window_duration_s: f64,
    pub windows: u32,
    pub arrival_rate_per_s: f64,
    pub requests: Vec<Request>,
}

impl Trace {
    pub fn total_duration_s(&self) -> f64 {
        self.window_duration_s * self.windows as f64
    }
}

fn check_rate(rate: f64, duration: f64) -> Result<()> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidInput(format!(
            "arrival rate must be positive, got {rate}"
        )));
    }
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    Ok(())
}

fn arrivals_with(rate: f64, start: f64, duration: f64, rng: &mut impl Rng, out: &mut Vec<f64>) {
    let gap = Exp::new(rate).expect("rate validated");
    let end = start + duration;
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t > end {
            break;
        }
        // exp gaps are a.s. positive, but guard float collisions at large t
        if out.last().is_none_or(|&last| t > last) {
            out.push(t);
        }
    }
}

/// Poisson arrival times in `[0, duration]`: i.i.d. exponential gaps with mean `1/rate`.
pub fn generate_arrivals(rate: f64, duration: f64, seed: u64) -> Result<Vec<f64>> {
    check_rate(rate, duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ARRIVAL_STREAM);
    let mut out = Vec::new();
    arrivals_with(rate, 0.0, duration, &mut rng, &mut out);
    Ok(out)
}

/// Splits `n` items over `weights` by the largest-remainder method. Ties go
/// to the earlier index.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    // the epsilon absorbs products like 0.7 * 1000 landing a hair below 700
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    // remainders compared on a 1e-9 grid so 31.4999.. and 13.5 tie
    let remainder = |i: usize| ((quotas[i] - counts[i] as f64) * 1e9).round() as i64;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| remainder(b).cmp(&remainder(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Exact-quota labels for `n` requests, returned in a seeded random order.
///
/// Task classes are apportioned first, then languages within each class, so
/// the class split is always the rounded `n × task_mix`.
pub fn assign_labels(n: usize, pattern: &WorkloadPattern, seed: u64) -> Vec<(Language, TaskClass)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LABEL_STREAM);
    labels_with(n, pattern, &mut rng)
}

fn labels_with(n: usize, pattern: &WorkloadPattern, rng: &mut impl Rng) -> Vec<(Language, TaskClass)> {
    let task_weights: Vec<f64> = pattern.task_mix.iter().map(|(_, f)| *f).collect();
    let lang_weights: Vec<f64> = pattern.language_mix.iter().map(|(_, f)| *f).collect();
    let mut labels = Vec::with_capacity(n);
    for (&(task_class, _), task_n) in pattern.task_mix.iter().zip(largest_remainder(n, &task_weights)) {
        for (&(language, _), cell_n) in pattern
            .language_mix
            .iter()
            .zip(largest_remainder(task_n, &lang_weights))
        {
            labels.extend(std::iter::repeat_n((language, task_class), cell_n));
        }
    }
    labels.shuffle(rng);
    labels
}

/// Builds a trace of `windows` consecutive Poisson windows labeled by `pattern`.
pub fn build_trace(
    pattern: &WorkloadPattern,
    rate: f64,
    duration: f64,
    windows: u32,
    seed: u64,
    catalog: &ModelCatalog,
    tokens: &TokenParams,
) -> Result<Trace> {
    check_rate(rate, duration)?;
    if windows == 0 {
        return Err(Error::InvalidInput("windows must be at least 1".into()));
    }
    for &(task_class, f) in &pattern.task_mix {
        for &(language, g) in &pattern.language_mix {
            if f > 0.0 && g > 0.0 {
                catalog.lookup(language, task_class)?;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ARRIVAL_STREAM);
    let mut arrivals = Vec::new();
    for k in 0..windows {
        arrivals_with(rate, k as f64 * duration, duration, &mut rng, &mut arrivals);
    }

    let labels = assign_labels(arrivals.len(), pattern, seed);

    let mut token_rng = ChaCha8Rng::seed_from_u64(seed);
    token_rng.set_stream(TOKEN_STREAM);
    let requests = arrivals
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (arrival_time_s, (language, task_class)))| {
            let (prompt_tokens, mut output_tokens) = tokens.tokens_for(task_class);
            if let OutputSampling::LogNormal { sigma } = tokens.output_sampling {
                let dist = LogNormal::new((output_tokens as f64).ln(), sigma)
                    .map_err(|e| Error::InvalidInput(format!("lognormal sigma: {e}")))?;
                let sampled = dist.sample(&mut token_rng).round().max(1.0) as u32;
                output_tokens = match task_class {
                    TaskClass::Completion => sampled.min(tokens.completion_output_cap),
                    TaskClass::Reasoning => sampled,
                };
            }
            Ok(Request {
                request_id: i as u64,
                arrival_time_s,
                language,
                task_class,
                prompt_tokens,
                output_tokens: output_tokens.max(1),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Trace {
        pattern: pattern.name,
        seed,
        window_duration_s: duration,
        windows,
        arrival_rate_per_s: rate,
        requests,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceHeader {
    trace_version: u32,
    pattern: PatternName,
    seed: u64,
    rate: f64,
    duration: f64,
    #[serde(default = "one")]
    windows: u32,
}

fn one() -> u32 {
    1
}

/// JSON-lines: a header record followed by one request per line.
pub fn serialize_trace(trace: &Trace) -> Vec<u8> {
    let mut out = Vec::new();
    let header = TraceHeader {
        trace_version: TRACE_VERSION,
        pattern: trace.pattern,
        seed: trace.seed,
        rate: trace.arrival_rate_per_s,
        duration: trace.window_duration_s,
        windows: trace.windows,
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for r in &trace.requests {
        serde_json::to_writer(&mut out, r).expect("request serializes");
        out.push(b'\n');
    }
    out
}

pub fn write_trace(trace: &Trace, mut w: impl Write) -> Result<()> {
    w.write_all(&serialize_trace(trace))?;
    Ok(())
}

pub fn parse_trace(bytes: &[u8]) -> Result<Trace> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1,
        message: format!("trace is not UTF-8: {e}"),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());

    let (header_line, header_text) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty trace: missing header".into(),
    })?;
    let header: TraceHeader = serde_json::from_str(header_text).map_err(|e| Error::Parse {
        line: header_line,
        message: format!("invalid header: {e}"),
    })?;
    if header.trace_version != TRACE_VERSION {
        return Err(Error::Parse {
            line: header_line,
            message: format!("unsupported trace_version {}", header.trace_version),
        });
    }
    check_rate(header.rate, header.duration).map_err(|e| Error::Parse {
        line: header_line,
        message: e.to_string(),
    })?;
    if header.windows == 0 {
        return Err(Error::Parse {
            line: header_line,
            message: "windows must be at least 1".into(),
        });
    }
    let horizon = header.duration * header.windows as f64;

    let mut requests: Vec<Request> = Vec::new();
    for (line, text) in lines {
        let r: Request = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            message: format!("invalid request record: {e}"),
        })?;
        let invalid = |message: String| Error::Validation(format!("line {line}: {message}"));
        if !(r.arrival_time_s.is_finite() && r.arrival_time_s >= 0.0) {
            return Err(invalid(format!("negative arrival time {}", r.arrival_time_s)));
        }
        if r.arrival_time_s > horizon {
            return Err(invalid(format!(
                "arrival time {} beyond trace horizon {horizon}",
                r.arrival_time_s
            )));
        }
        if r.prompt_tokens == 0 || r.output_tokens == 0 {
            return Err(invalid("token counts must be positive".into()));
        }
        if let Some(prev) = requests.last() {
            let ordered = r.arrival_time_s > prev.arrival_time_s
                || (r.arrival_time_s == prev.arrival_time_s && r.request_id > prev.request_id);
            if !ordered || r.request_id <= prev.request_id {
                return Err(invalid(format!(
                    "request {} out of order after request {}",
                    r.request_id, prev.request_id
                )));
            }
        }
        requests.push(r);
    }

    Ok(Trace {
        pattern: header.pattern,
        seed: header.seed,
        window_duration_s: header.duration,
        windows: header.windows,
        arrival_rate_per_s: header.rate,
        requests,
    })
}
