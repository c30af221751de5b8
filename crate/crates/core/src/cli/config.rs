//! Run configuration: a sectioned TOML file with every default explicit.
//! The resolved config is dumped into each run directory for provenance.
//! Environment variables override secrets (API key, base URL) only.

use crate::filter::{default_abbreviations, FilterConfig, DEFAULT_CONDITIONAL_TEMPLATE, DEFAULT_NULL_TEMPLATE};
use crate::optimizer::OptBudget;
use crate::pipeline::PipelineConfig;
use crate::prompts::{REFINE_TEMPLATE, RERANK_TEMPLATE};
use anyhow::Context;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub filter: FilterSection,
    pub optimizer: OptimizerSection,
    pub backend: BackendSection,
    pub pipeline: PipelineSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl CorpusSection {
    pub fn path_for(&self, split: crate::corpus::Split) -> Option<&PathBuf> {
        match split {
            crate::corpus::Split::Train => self.train.as_ref(),
            crate::corpus::Split::Val => self.val.as_ref(),
            crate::corpus::Split::Test => self.test.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    pub lambda: f64,
    pub per_token_normalize: bool,
    pub conditional_template: String,
    pub null_template: String,
    pub abbreviations: Vec<String>,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            lambda: 1.2,
            per_token_normalize: false,
            conditional_template: DEFAULT_CONDITIONAL_TEMPLATE.to_string(),
            null_template: DEFAULT_NULL_TEMPLATE.to_string(),
            abbreviations: default_abbreviations(),
        }
    }
}

impl FilterSection {
    pub fn to_filter_config(&self) -> FilterConfig {
        FilterConfig {
            lambda: self.lambda,
            per_token_normalize: self.per_token_normalize,
            conditional_template: self.conditional_template.clone(),
            null_template: self.null_template.clone(),
            abbreviations: self.abbreviations.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSection {
    pub k_demos: usize,
    pub m_instructions: usize,
    pub minibatch: usize,
    pub trials: usize,
    pub simba_iterations: usize,
    pub r_max: usize,
    pub keep_threshold: f64,
    pub n_min: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let b = OptBudget::default();
        OptimizerSection {
            k_demos: b.k_demos,
            m_instructions: b.m_instructions,
            minibatch: b.minibatch,
            trials: b.trials,
            simba_iterations: b.simba_iterations,
            r_max: b.r_max,
            keep_threshold: b.keep_threshold,
            n_min: b.n_min,
        }
    }
}

impl OptimizerSection {
    pub fn to_budget(&self, seed: u64) -> OptBudget {
        OptBudget {
            k_demos: self.k_demos,
            m_instructions: self.m_instructions,
            minibatch: self.minibatch,
            trials: self.trials,
            simba_iterations: self.simba_iterations,
            r_max: self.r_max,
            keep_threshold: self.keep_threshold,
            n_min: self.n_min,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    /// "mock", "openai", or "gemini".
    pub provider: String,
    /// Required for live providers; the mock reports "mock-1".
    pub model_id: String,
    /// Reranker model; empty means reuse model_id.
    pub reranker_model_id: String,
    pub base_url: String,
    pub api_key_env: String,
    pub base_url_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub rate_ceiling: usize,
    pub rate_window_ms: u64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub supports_logprobs: bool,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            provider: "mock".to_string(),
            model_id: String::new(),
            reranker_model_id: String::new(),
            base_url: String::new(),
            api_key_env: "FIGCAP_API_KEY".to_string(),
            base_url_env: "FIGCAP_BASE_URL".to_string(),
            temperature: 0.3,
            max_tokens: 256,
            rate_ceiling: 8,
            rate_window_ms: 1000,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 250,
            supports_logprobs: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub filtered_inference: bool,
    pub stage1_only: bool,
    /// 0 means auto: available processors capped by the rate ceiling.
    pub workers: usize,
    pub t_retry: u32,
    pub seed: u64,
    /// Exit code 2 when the failed-record fraction exceeds this.
    pub fail_threshold: f64,
    pub templates_dir: PathBuf,
    /// Optional custom prompt files; empty means the built-in defaults.
    pub rerank_prompt_path: String,
    pub refine_prompt_path: String,
    pub redact_audit: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            filtered_inference: false,
            stage1_only: false,
            workers: 0,
            t_retry: 2,
            seed: 0,
            fail_threshold: 0.5,
            templates_dir: PathBuf::from("templates"),
            rerank_prompt_path: String::new(),
            refine_prompt_path: String::new(),
            redact_audit: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    pub baseline: String,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { baseline: "selected".to_string() }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&raw).with_context(|| format!("cannot parse config {}", p.display()))
            }
            None => Ok(RunConfig::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        let rerank_template = if self.pipeline.rerank_prompt_path.is_empty() {
            RERANK_TEMPLATE.to_string()
        } else {
            std::fs::read_to_string(&self.pipeline.rerank_prompt_path)
                .with_context(|| format!("cannot read rerank prompt {}", self.pipeline.rerank_prompt_path))?
        };
        let refine_template = if self.pipeline.refine_prompt_path.is_empty() {
            REFINE_TEMPLATE.to_string()
        } else {
            std::fs::read_to_string(&self.pipeline.refine_prompt_path)
                .with_context(|| format!("cannot read refine prompt {}", self.pipeline.refine_prompt_path))?
        };
        Ok(PipelineConfig {
            filtered_inference: self.pipeline.filtered_inference,
            stage1_only: self.pipeline.stage1_only,
            t_retry: self.pipeline.t_retry,
            temperature: self.backend.temperature,
            max_tokens: self.backend.max_tokens,
            seed: self.pipeline.seed,
            rerank_template,
            refine_template,
        })
    }

    /// Worker count: explicit, or available parallelism capped by the LLM
    /// rate ceiling.
    pub fn effective_workers(&self) -> usize {
        if self.pipeline.workers > 0 {
            return self.pipeline.workers;
        }
        let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        cpus.min(self.backend.rate_ceiling.max(1))
    }
}
