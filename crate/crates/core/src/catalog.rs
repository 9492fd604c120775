//! Model registry and the synthetic profiler that fills in load times.
//!
//! A [`ModelCatalog`] plays the role of the serving stack's metadata store:
//! it is built offline, persisted as a versioned JSON document, and consulted
//! read-only by the simulator and the eviction policies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CATALOG_VERSION: u32 = 1;

/// Parameter count of the per-language completion models.
pub const SMALL_PARAM_COUNT: u64 = 500_000_000;
/// Parameter count of the per-language reasoning models.
pub const LARGE_PARAM_COUNT: u64 = 7_000_000_000;
/// Bytes per parameter for 16-bit weights.
pub const BYTES_PER_PARAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Java,
    Python,
    Cpp,
    C,
    Go,
    Rust,
    CSharp,
    JavaScript,
}

impl Language {
    pub const ALL: [Language; 8] = [
        Language::Java,
        Language::Python,
        Language::Cpp,
        Language::C,
        Language::Go,
        Language::Rust,
        Language::CSharp,
        Language::JavaScript,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Java => "java",
            Language::Python => "python",
            Language::Cpp => "cpp",
            Language::C => "c",
            Language::Go => "go",
            Language::Rust => "rust",
            Language::CSharp => "csharp",
            Language::JavaScript => "javascript",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Language::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown language `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskClass {
    Completion,
    Reasoning,
}

impl TaskClass {
    pub const ALL: [TaskClass; 2] = [TaskClass::Completion, TaskClass::Reasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskClass::Completion => "completion",
            TaskClass::Reasoning => "reasoning",
        }
    }
}

impl fmt::Display for TaskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskClass::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown task class `{s}`")))
    }
}

/// A registered CodeLLM together with its profiled characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub language: Language,
    pub task_class: TaskClass,
    pub param_count: u64,
    pub weight_bytes: u64,
    /// Seconds needed to bring the weights into accelerator memory.
    pub load_time_s: f64,
    pub prefill_rate_tps: f64,
    pub decode_rate_tps: f64,
    pub expected_output_tokens: u32,
}

/// Synthetic profiler settings used to derive `load_time_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileParams {
    pub staging_bandwidth_bps: f64,
    pub load_fixed_overhead_s: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams {
            staging_bandwidth_bps: 2.0e9,
            load_fixed_overhead_s: 1.0,
        }
    }
}

impl ProfileParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.staging_bandwidth_bps.is_finite() && self.staging_bandwidth_bps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "staging bandwidth must be positive, got {}",
                self.staging_bandwidth_bps
            )));
        }
        if !(self.load_fixed_overhead_s.is_finite() && self.load_fixed_overhead_s >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "load overhead must be non-negative, got {}",
                self.load_fixed_overhead_s
            )));
        }
        Ok(())
    }
}

/// Per-task-class defaults for the models in the default catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProfile {
    pub param_count: u64,
    pub prefill_rate_tps: f64,
    pub decode_rate_tps: f64,
    pub expected_output_tokens: u32,
}

impl ClassProfile {
    pub fn default_for(task_class: TaskClass) -> Self {
        match task_class {
            TaskClass::Completion => ClassProfile {
                param_count: SMALL_PARAM_COUNT,
                prefill_rate_tps: 2048.0,
                decode_rate_tps: 1000.0,
                expected_output_tokens: 50,
            },
            TaskClass::Reasoning => ClassProfile {
                param_count: LARGE_PARAM_COUNT,
                prefill_rate_tps: 1024.0,
                decode_rate_tps: 400.0,
                expected_output_tokens: 600,
            },
        }
    }
}

/// Fills in `load_time_s` from the weight size and the staging bandwidth.
pub fn profile_model(descriptor: ModelDescriptor, params: &ProfileParams) -> Result<ModelDescriptor> {
    params.validate()?;
    if descriptor.weight_bytes == 0 {
        return Err(Error::InvalidInput(format!(
            "model `{}` has zero weight bytes",
            descriptor.model_id
        )));
    }
    let load_time_s = descriptor.weight_bytes as f64 / params.staging_bandwidth_bps + params.load_fixed_overhead_s;
    Ok(ModelDescriptor {
        load_time_s,
        ..descriptor
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCatalog {
    profile_params: ProfileParams,
    models: Vec<ModelDescriptor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDocument {
    catalog_version: u32,
    profile_params: ProfileParams,
    models: Vec<ModelDescriptor>,
}

fn default_model_id(language: Language, task_class: TaskClass) -> String {
    let size = match task_class {
        TaskClass::Completion => "500m",
        TaskClass::Reasoning => "7b",
    };
    format!("{language}-{task_class}-{size}")
}

/// The 16-model catalog: one completion and one reasoning model per language.
pub fn build_default_catalog(params: &ProfileParams) -> Result<ModelCatalog> {
    build_catalog_for(&Language::ALL, params)
}

/// Builds the default per-language model pair for an arbitrary language set.
pub fn build_catalog_for(languages: &[Language], params: &ProfileParams) -> Result<ModelCatalog> {
    let mut models = Vec::with_capacity(languages.len() * 2);
    for &language in languages {
        for task_class in TaskClass::ALL {
            let class = ClassProfile::default_for(task_class);
            let raw = ModelDescriptor {
                model_id: default_model_id(language, task_class),
                language,
                task_class,
                param_count: class.param_count,
                weight_bytes: class.param_count * BYTES_PER_PARAM,
                load_time_s: 0.0,
                prefill_rate_tps: class.prefill_rate_tps,
                decode_rate_tps: class.decode_rate_tps,
                expected_output_tokens: class.expected_output_tokens,
            };
            models.push(profile_model(raw, params)?);
        }
    }
    ModelCatalog::new(*params, models)
}

impl ModelCatalog {
    pub fn new(profile_params: ProfileParams, models: Vec<ModelDescriptor>) -> Result<Self> {
        let catalog = ModelCatalog { profile_params, models };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn models(&self) -> &[ModelDescriptor] {
        &self.models
    }

    pub fn profile_params(&self) -> &ProfileParams {
        &self.profile_params
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn lookup(&self, language: Language, task_class: TaskClass) -> Result<&ModelDescriptor> {
        self.lookup_index(language, task_class).map(|i| &self.models[i])
    }

    pub fn lookup_index(&self, language: Language, task_class: TaskClass) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.language == language && m.task_class == task_class)
            .ok_or_else(|| Error::ModelNotFound {
                language: language.to_string(),
                task_class: task_class.to_string(),
            })
    }

    pub fn get(&self, model_id: &str) -> Result<&ModelDescriptor> {
        self.models
            .iter()
            .find(|m| m.model_id == model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.to_string()))
    }

    /// Largest expected output length; the default normalizer for task criticality.
    pub fn max_expected_output_tokens(&self) -> u32 {
        self.models.iter().map(|m| m.expected_output_tokens).max().unwrap_or(1)
    }

    fn validate(&self) -> Result<()> {
        self.profile_params.validate()?;
        for (i, m) in self.models.iter().enumerate() {
            if m.model_id.is_empty() {
                return Err(Error::Validation(format!("models[{i}] has an empty model_id")));
            }
            if self.models[..i].iter().any(|o| o.model_id == m.model_id) {
                return Err(Error::Validation(format!("duplicate model_id `{}`", m.model_id)));
            }
            if self.models[..i]
                .iter()
                .any(|o| o.language == m.language && o.task_class == m.task_class)
            {
                return Err(Error::Validation(format!(
                    "more than one model registered for ({}, {})",
                    m.language, m.task_class
                )));
            }
            if m.weight_bytes == 0 {
                return Err(Error::Validation(format!("`{}`: weight_bytes must be > 0", m.model_id)));
            }
            if !(m.load_time_s.is_finite() && m.load_time_s > 0.0) {
                return Err(Error::Validation(format!("`{}`: load_time_s must be > 0", m.model_id)));
            }
            if !(m.prefill_rate_tps.is_finite() && m.prefill_rate_tps > 0.0)
                || !(m.decode_rate_tps.is_finite() && m.decode_rate_tps > 0.0)
            {
                return Err(Error::Validation(format!(
                    "`{}`: throughput rates must be > 0",
                    m.model_id
                )));
            }
            if m.expected_output_tokens == 0 {
                return Err(Error::Validation(format!(
                    "`{}`: expected_output_tokens must be > 0",
                    m.model_id
                )));
            }
        }
        let largest_completion = self
            .models
            .iter()
            .filter(|m| m.task_class == TaskClass::Completion)
            .map(|m| m.param_count)
            .max();
        let smallest_reasoning = self
            .models
            .iter()
            .filter(|m| m.task_class == TaskClass::Reasoning)
            .map(|m| m.param_count)
            .min();
        if let (Some(c), Some(r)) = (largest_completion, smallest_reasoning) {
            if c >= r {
                return Err(Error::Validation(format!(
                    "completion models must be smaller than reasoning models ({c} >= {r} params)"
                )));
            }
        }
        Ok(())
    }

    /// Serializes to the versioned catalog document.
    pub fn save(&self) -> Vec<u8> {
        let doc = CatalogDocument {
            catalog_version: CATALOG_VERSION,
            profile_params: self.profile_params,
            models: self.models.clone(),
        };
        let mut out = serde_json::to_vec_pretty(&doc).expect("catalog serializes");
        out.push(b'\n');
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        let doc: CatalogDocument = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse {
                line: inner.line(),
                message: format!("field `{path}`: {inner}"),
            }
        })?;
        if doc.catalog_version != CATALOG_VERSION {
            return Err(Error::Validation(format!(
                "unsupported catalog_version {} (expected {CATALOG_VERSION})",
                doc.catalog_version
            )));
        }
        ModelCatalog::new(doc.profile_params, doc.models)
    }
}
