//! Subcommand implementations. Each command resolves its inputs, writes into
//! its run directory (plus the template store for optimize), and returns the
//! process exit code: 0 success, 1 validation failure, 2 run-threshold
//! failure.

use super::config::RunConfig;
use crate::corpus::{corpus_stats, load_corpus, PaperRecord, Split};
use crate::filter::{filter_paragraph, segment, FilterConfig};
use crate::llm::{
    ApiFlavor, HttpBackend, HttpBackendConfig, LikelihoodScorer, LlmBackend, LlmError, LlmRequest,
    LlmResponse, MockBackend,
};
use crate::metrics::{aggregate, evaluate_pair, MetricBundle};
use crate::optimizer::{optimize_category, TemplateSet, TemplateStore};
use crate::pipeline::{run_batch, CaptionOutput, PipelineContext, RecordOutcome};
use crate::report::{build_table, write_report_files, ConditionResult, DeltaTable};
use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Either live or mock; both generation and likelihood scoring delegate.
pub enum AnyBackend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl LlmBackend for AnyBackend {
    fn model_id(&self) -> &str {
        match self {
            AnyBackend::Mock(b) => b.model_id(),
            AnyBackend::Http(b) => b.model_id(),
        }
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        match self {
            AnyBackend::Mock(b) => b.complete(req),
            AnyBackend::Http(b) => b.complete(req),
        }
    }
}

impl LikelihoodScorer for AnyBackend {
    fn loglikelihood(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError> {
        match self {
            AnyBackend::Mock(b) => b.loglikelihood(prompt, continuation),
            AnyBackend::Http(b) => b.loglikelihood(prompt, continuation),
        }
    }
}

fn is_mock(cfg: &RunConfig) -> bool {
    cfg.backend.provider == "mock"
}

/// Build a generation backend. `model_override` selects the reranker model.
pub fn build_backend(cfg: &RunConfig, model_override: Option<&str>) -> Result<AnyBackend> {
    if is_mock(cfg) {
        return Ok(AnyBackend::Mock(MockBackend::echo(cfg.pipeline.seed)));
    }
    let flavor = match cfg.backend.provider.as_str() {
        "openai" => ApiFlavor::OpenAi,
        "gemini" => ApiFlavor::Gemini,
        other => bail!("unknown backend provider '{other}' (expected mock|openai|gemini)"),
    };
    let api_key = std::env::var(&cfg.backend.api_key_env)
        .with_context(|| format!("environment variable {} must hold the API key", cfg.backend.api_key_env))?;
    let base_url = std::env::var(&cfg.backend.base_url_env)
        .ok()
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| cfg.backend.base_url.clone());
    let model_id = model_override.unwrap_or(&cfg.backend.model_id).to_string();
    let http = HttpBackend::new(HttpBackendConfig {
        base_url,
        api_key,
        flavor,
        model_id,
        timeout: Duration::from_millis(cfg.backend.timeout_ms),
        max_retries: cfg.backend.max_retries,
        backoff_base: Duration::from_millis(cfg.backend.backoff_ms),
        rate_ceiling: cfg.backend.rate_ceiling,
        rate_window: Duration::from_millis(cfg.backend.rate_window_ms),
        supports_logprobs: cfg.backend.supports_logprobs,
    })?;
    Ok(AnyBackend::Http(http))
}

fn build_reranker(cfg: &RunConfig) -> Result<AnyBackend> {
    if !is_mock(cfg) && !cfg.backend.reranker_model_id.is_empty() {
        build_backend(cfg, Some(&cfg.backend.reranker_model_id))
    } else {
        build_backend(cfg, None)
    }
}

/// Likelihood scorer with the capability check done now, not at call time.
fn build_scorer(cfg: &RunConfig) -> Result<AnyBackend> {
    let backend = build_backend(cfg, None)?;
    if let AnyBackend::Http(http) = &backend {
        http.require_logprobs().context(
            "the configured backend cannot score log-likelihoods; set [backend].supports_logprobs \
             only for endpoints that expose them, or use --mock",
        )?;
    }
    Ok(backend)
}

fn dump_config(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn cmd_validate(
    cfg: &RunConfig,
    corpus: &Path,
    report_out: Option<&Path>,
    out_dir: &Path,
) -> Result<i32> {
    dump_config(cfg, out_dir)?;
    let load = load_corpus(corpus, None)?;
    let stats = corpus_stats(&load.records);

    let report_path = report_out
        .map(PathBuf::from)
        .unwrap_or_else(|| out_dir.join("load_report.json"));
    if let Some(parent) = report_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&report_path, serde_json::to_string_pretty(&load.report)?)?;

    println!(
        "{}: {} lines, {} loaded, {} rejected, {} warnings",
        load.report.path,
        load.report.lines_total,
        load.report.loaded,
        load.report.rejected,
        load.report.warnings.len()
    );
    for err in &load.report.errors {
        println!("  line {}: {}", err.line, err.reason);
    }
    println!("{}", serde_json::to_string_pretty(&stats)?);
    println!("load report written to {}", report_path.display());

    Ok(if load.report.rejected == 0 { 0 } else { 1 })
}

pub fn cmd_filter_audit(cfg: &RunConfig, corpus: &Path, split: Option<Split>, out_dir: &Path) -> Result<i32> {
    dump_config(cfg, out_dir)?;
    let scorer = build_scorer(cfg)?;
    let filter_cfg = cfg.filter.to_filter_config();
    let load = load_corpus(corpus, split)?;

    let audit_dir = out_dir.join("filter_audit");
    fs::create_dir_all(&audit_dir)?;
    let mut total_chunks = 0usize;
    let mut retained_chunks = 0usize;
    for record in &load.records {
        let outcome = filter_paragraph(&record.target, &filter_cfg, &scorer)
            .with_context(|| format!("filtering failed for {}", record.paper_id))?;
        total_chunks += outcome.scores.len();
        retained_chunks += outcome.scores.iter().filter(|s| s.retained).count();
        let payload = serde_json::json!({
            "paper_id": record.paper_id,
            "lambda": filter_cfg.lambda,
            "filtered_text": outcome.text,
            "scores": outcome.scores,
        });
        fs::write(
            audit_dir.join(format!("{}.json", sanitize_id(&record.paper_id))),
            serde_json::to_string_pretty(&payload)?,
        )?;
    }
    let pct = if total_chunks > 0 {
        100.0 * retained_chunks as f64 / total_chunks as f64
    } else {
        0.0
    };
    println!(
        "filter audit: {} records, {} chunks, {} retained ({pct:.1}%) at lambda {}",
        load.records.len(),
        total_chunks,
        retained_chunks,
        filter_cfg.lambda
    );
    println!("per-record scores in {}", audit_dir.display());
    Ok(0)
}

pub fn cmd_optimize(cfg: &RunConfig, corpus: &Path, out_dir: &Path) -> Result<i32> {
    dump_config(cfg, out_dir)?;
    let backend = build_backend(cfg, None)?;
    let scorer = build_scorer(cfg)?;
    let filter_cfg = cfg.filter.to_filter_config();
    let budget = cfg.optimizer.to_budget(cfg.pipeline.seed);

    let load = load_corpus(corpus, Some(Split::Train))?;
    if load.records.is_empty() {
        bail!("no training records in {}", corpus.display());
    }

    let mut by_category: BTreeMap<String, Vec<PaperRecord>> = BTreeMap::new();
    for record in &load.records {
        for category in &record.categories {
            by_category.entry(category.clone()).or_default().push(record.clone());
        }
    }

    let store = TemplateStore::open(&cfg.pipeline.templates_dir)?;
    let mut summary = Vec::new();
    let mut failed = 0usize;
    println!("{:<16} {:>7} {:>9} {:>6} {:>8} {:>8}", "category", "records", "score", "rules", "fallback", "partial");
    for (category, records) in &by_category {
        let outcome = optimize_category(category, records, &backend, &scorer, &filter_cfg, &budget);
        store.save(&outcome.template)?;
        if outcome.partial {
            failed += 1;
        }
        for w in &outcome.warnings {
            eprintln!("  [{category}] {w}");
        }
        println!(
            "{:<16} {:>7} {:>9} {:>6} {:>8} {:>8}",
            category,
            records.len(),
            outcome.template.score.map_or("-".to_string(), |s| format!("{s:.4}")),
            outcome.template.rules.len(),
            outcome.template.fallback,
            outcome.partial
        );
        summary.push(serde_json::json!({
            "category": category,
            "records": records.len(),
            "score": outcome.template.score,
            "rules": outcome.template.rules.len(),
            "fallback": outcome.template.fallback,
            "partial": outcome.partial,
        }));
    }
    fs::write(
        out_dir.join("optimize_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!("templates written to {}", store.dir().display());

    Ok(if failed == by_category.len() && failed > 0 { 1 } else { 0 })
}

/// Conditions evaluated from a finished run, for records with gold captions:
/// every generated candidate pooled, the selected captions, and the refined
/// captions when stage 2 ran.
fn conditions_from_outcomes(records: &[PaperRecord], outcomes: &[RecordOutcome]) -> Vec<ConditionResult> {
    let gold: BTreeMap<&str, &str> = records
        .iter()
        .filter_map(|r| {
            r.target
                .gold_caption
                .as_deref()
                .filter(|g| !g.trim().is_empty())
                .map(|g| (r.paper_id.as_str(), g))
        })
        .collect();

    let mut all: Vec<MetricBundle> = Vec::new();
    let mut selected: Vec<MetricBundle> = Vec::new();
    let mut refined: Vec<MetricBundle> = Vec::new();
    for outcome in outcomes {
        let Some(reference) = gold.get(outcome.paper_id.as_str()) else {
            continue;
        };
        for candidate in &outcome.candidates {
            all.push(evaluate_pair(&candidate.text, reference));
        }
        if let Some(s) = &outcome.selected {
            selected.push(evaluate_pair(&s.text, reference));
        }
        if let Some(r) = &outcome.refined {
            refined.push(evaluate_pair(&r.text, reference));
        }
    }

    let mut conditions = Vec::new();
    for (name, bundles) in [("all_candidates", all), ("selected", selected), ("refined", refined)] {
        if let Ok(bundle) = aggregate(&bundles) {
            conditions.push(ConditionResult {
                condition_name: name.to_string(),
                bundle,
                n_instances: bundles.len(),
            });
        }
    }
    conditions
}

pub fn cmd_run(
    cfg: &RunConfig,
    corpus: &Path,
    split: Option<Split>,
    fail_threshold: Option<f64>,
    out_dir: &Path,
) -> Result<i32> {
    dump_config(cfg, out_dir)?;
    let load = load_corpus(corpus, split)?;
    for err in &load.report.errors {
        eprintln!("skipping malformed line {}: {}", err.line, err.reason);
    }
    let records = load.records;
    if records.is_empty() {
        bail!("no records to run in {}", corpus.display());
    }

    let templates = if cfg.pipeline.templates_dir.is_dir() {
        TemplateStore::open(&cfg.pipeline.templates_dir)?.load_all()?
    } else {
        eprintln!(
            "template store {} not found; every category uses the general fallback",
            cfg.pipeline.templates_dir.display()
        );
        TemplateSet::empty()
    };

    let generator = build_backend(cfg, None)?;
    let reranker = build_reranker(cfg)?;
    let scorer = if cfg.pipeline.filtered_inference {
        Some(build_scorer(cfg)?)
    } else {
        None
    };

    let ctx = PipelineContext {
        templates: &templates,
        generator: &generator,
        reranker: &reranker,
        scorer: scorer.as_ref().map(|s| s as &dyn LikelihoodScorer),
        filter_cfg: cfg.filter.to_filter_config(),
        cfg: cfg.to_pipeline_config()?,
    };

    let outcomes = run_batch(&records, &ctx, cfg.effective_workers());

    // captions JSONL in input order
    let mut captions = String::new();
    for outcome in &outcomes {
        captions.push_str(&serde_json::to_string(&CaptionOutput::from(outcome))?);
        captions.push('\n');
    }
    fs::write(out_dir.join("captions.jsonl"), captions)?;

    let audit_dir = out_dir.join("audit");
    fs::create_dir_all(&audit_dir)?;
    for outcome in &outcomes {
        let mut trail = outcome.trail.clone();
        if cfg.pipeline.redact_audit {
            trail.redact();
        }
        fs::write(
            audit_dir.join(format!("{}.json", sanitize_id(&outcome.paper_id))),
            trail.to_json(),
        )?;
    }

    let conditions = conditions_from_outcomes(&records, &outcomes);
    if conditions.is_empty() {
        println!("no gold captions in this split; captions only, no evaluation report");
    } else {
        let baseline = if conditions.iter().any(|c| c.condition_name == cfg.report.baseline) {
            cfg.report.baseline.clone()
        } else {
            conditions[0].condition_name.clone()
        };
        let table = build_table(&conditions, &baseline)?;
        write_report_files(&table, out_dir)?;
        println!("report written to {}", out_dir.join("report.md").display());
    }

    let failed = outcomes.iter().filter(|o| o.failed()).count();
    let fraction = failed as f64 / outcomes.len() as f64;
    println!(
        "{} records, {} failed ({:.1}%), outputs in {}",
        outcomes.len(),
        failed,
        100.0 * fraction,
        out_dir.display()
    );
    let threshold = fail_threshold.unwrap_or(cfg.pipeline.fail_threshold);
    Ok(if fraction > threshold { 2 } else { 0 })
}

#[derive(Debug, Deserialize)]
struct SimpleCaption {
    paper_id: String,
    caption: Option<String>,
}

fn read_caption_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let raw = fs::read_to_string(path)
        .with_context(|| format!("cannot read captions {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // full record shape first, then the plain {paper_id, caption} shape
        if let Ok((record, _)) = crate::corpus::validate_record(line) {
            if let Some(gold) = record.target.gold_caption {
                out.insert(record.paper_id, gold);
                continue;
            }
        }
        match serde_json::from_str::<SimpleCaption>(line) {
            Ok(SimpleCaption { paper_id, caption: Some(caption) }) => {
                out.insert(paper_id, caption);
            }
            Ok(SimpleCaption { paper_id, caption: None }) => {
                eprintln!("{}:{}: {} has no caption, skipped", path.display(), idx + 1, paper_id);
            }
            Err(e) => {
                eprintln!("{}:{}: unparseable line ({e}), skipped", path.display(), idx + 1);
            }
        }
    }
    Ok(out)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    candidate_files: &[PathBuf],
    references: &Path,
    baseline: Option<&str>,
    out_dir: &Path,
) -> Result<i32> {
    dump_config(cfg, out_dir)?;
    let refs = read_caption_file(references)?;
    if refs.is_empty() {
        bail!("no usable references in {}", references.display());
    }

    let mut conditions = Vec::new();
    for path in candidate_files {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        let candidates = read_caption_file(path)?;
        let mut bundles = Vec::new();
        let mut unmatched = Vec::new();
        for (paper_id, caption) in &candidates {
            match refs.get(paper_id) {
                Some(reference) => bundles.push(evaluate_pair(caption, reference)),
                None => unmatched.push(paper_id.clone()),
            }
        }
        if !unmatched.is_empty() {
            eprintln!(
                "{name}: {} candidate ids missing from references, excluded: {}",
                unmatched.len(),
                unmatched.join(", ")
            );
        }
        match aggregate(&bundles) {
            Ok(bundle) => conditions.push(ConditionResult {
                condition_name: name,
                bundle,
                n_instances: bundles.len(),
            }),
            Err(_) => eprintln!("{name}: no overlapping paper ids, condition dropped"),
        }
    }

    if conditions.is_empty() {
        let table = DeltaTable { baseline_name: String::new(), rows: vec![] };
        write_report_files(&table, out_dir)?;
        println!("no evaluable conditions; empty report written to {}", out_dir.display());
        return Ok(1);
    }

    let baseline = baseline.map(str::to_string).unwrap_or_else(|| conditions[0].condition_name.clone());
    let table = build_table(&conditions, &baseline)?;
    write_report_files(&table, out_dir)?;
    println!("report written to {}", out_dir.join("report.md").display());
    Ok(0)
}

pub fn cmd_report(cfg: &RunConfig, conditions_path: &Path, baseline: Option<&str>, out_dir: &Path) -> Result<i32> {
    dump_config(cfg, out_dir)?;
    let raw = fs::read_to_string(conditions_path)
        .with_context(|| format!("cannot read conditions {}", conditions_path.display()))?;
    let conditions: Vec<ConditionResult> = serde_json::from_str(&raw)
        .with_context(|| format!("cannot parse conditions {}", conditions_path.display()))?;
    if conditions.is_empty() {
        bail!("conditions file {} is empty", conditions_path.display());
    }
    let baseline = baseline.map(str::to_string).unwrap_or_else(|| conditions[0].condition_name.clone());
    let table = build_table(&conditions, &baseline)?;
    write_report_files(&table, out_dir)?;
    println!("report written to {}", out_dir.join("report.md").display());
    Ok(0)
}

/// Quick visibility into what the splitter would do; used by tests and docs.
pub fn segment_preview(paragraph: &str, cfg: &FilterConfig) -> Vec<String> {
    segment(paragraph, &cfg.abbreviations).into_iter().map(|c| c.text).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn live_backend_requires_the_api_key_env_var() {
        let mut cfg = RunConfig::default();
        cfg.backend.provider = "openai".into();
        cfg.backend.model_id = "some-model".into();
        cfg.backend.base_url = "https://example.test/v1".into();
        cfg.backend.api_key_env = "FIGCAP_TEST_KEY_THAT_IS_NOT_SET".into();
        let err = build_backend(&cfg, None).err().expect("expected an error");
        assert!(err.to_string().contains("FIGCAP_TEST_KEY_THAT_IS_NOT_SET"));
    }

    #[test]
    fn live_backend_requires_a_model_id() {
        let mut cfg = RunConfig::default();
        cfg.backend.provider = "openai".into();
        cfg.backend.base_url = "https://example.test/v1".into();
        cfg.backend.api_key_env = "FIGCAP_TEST_KEY_SET".into();
        std::env::set_var("FIGCAP_TEST_KEY_SET", "k");
        let err = build_backend(&cfg, None).err().expect("expected an error");
        assert!(err.to_string().contains("model_id"));
    }

    #[test]
    fn scorer_capability_is_checked_at_configuration_time() {
        let mut cfg = RunConfig::default();
        cfg.backend.provider = "openai".into();
        cfg.backend.model_id = "some-model".into();
        cfg.backend.base_url = "https://example.test/v1".into();
        cfg.backend.api_key_env = "FIGCAP_TEST_KEY_SET2".into();
        cfg.backend.supports_logprobs = false;
        std::env::set_var("FIGCAP_TEST_KEY_SET2", "k");
        let err = build_scorer(&cfg).err().expect("expected an error");
        assert!(err.to_string().contains("log-likelihood"), "got: {err:#}");

        cfg.backend.supports_logprobs = true;
        assert!(build_scorer(&cfg).is_ok());
    }

    #[test]
    fn unknown_provider_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.backend.provider = "teapot".into();
        assert!(build_backend(&cfg, None).is_err());
    }
}
