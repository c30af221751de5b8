//! Python bindings for the caption pipeline and its metric suite.
//!
//! Exposes the shared tokenizer, BLEU/ROUGE scoring, sentence segmentation
//! and relevance filtering (with the deterministic mock scorer), percent
//! deltas, corpus loading/statistics, and a full mock-backed pipeline run
//! over a single record. Build with `cargo build -p figcap-py --release` and
//! see `python/smoke_test.py` for a loading recipe.

use figcap_core::corpus;
use figcap_core::filter;
use figcap_core::llm::MockBackend;
use figcap_core::metrics;
use figcap_core::optimizer::TemplateSet;
use figcap_core::pipeline;
use figcap_core::report;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::path::PathBuf;

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_py(py)
        }
    })
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let json = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &json)
}

/// Lowercase and split on runs of non-alphanumeric characters.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    metrics::tokenize(text).tokens().to_vec()
}

/// BLEU-1..4 for one candidate/reference pair.
#[pyfunction]
#[pyo3(signature = (candidate, reference, smoothing = false))]
fn bleu(candidate: &str, reference: &str, smoothing: bool) -> [f64; 4] {
    let mode = if smoothing { metrics::Smoothing::AddOne } else { metrics::Smoothing::None };
    metrics::bleu(&metrics::tokenize(candidate), &metrics::tokenize(reference), mode)
}

/// ROUGE-N (n = 1 or 2) as {"precision", "recall", "f1"}.
#[pyfunction]
fn rouge_n(py: Python<'_>, candidate: &str, reference: &str, n: usize) -> PyResult<PyObject> {
    if !(1..=2).contains(&n) {
        return Err(PyValueError::new_err("n must be 1 or 2"));
    }
    let score = metrics::rouge_n(&metrics::tokenize(candidate), &metrics::tokenize(reference), n);
    to_py(py, &score)
}

/// ROUGE-L as {"precision", "recall", "f1"}.
#[pyfunction]
fn rouge_l(py: Python<'_>, candidate: &str, reference: &str) -> PyResult<PyObject> {
    let score = metrics::rouge_l(&metrics::tokenize(candidate), &metrics::tokenize(reference));
    to_py(py, &score)
}

/// Full metric bundle for one pair.
#[pyfunction]
fn evaluate_pair(py: Python<'_>, candidate: &str, reference: &str) -> PyResult<PyObject> {
    to_py(py, &metrics::evaluate_pair(candidate, reference))
}

/// Macro-averaged bundle over aligned candidate/reference lists.
#[pyfunction]
fn evaluate_corpus(py: Python<'_>, candidates: Vec<String>, references: Vec<String>) -> PyResult<PyObject> {
    if candidates.len() != references.len() {
        return Err(PyValueError::new_err("candidates and references must align"));
    }
    let bundles: Vec<metrics::MetricBundle> = candidates
        .iter()
        .zip(references.iter())
        .map(|(c, r)| metrics::evaluate_pair(c, r))
        .collect();
    let mean = metrics::aggregate(&bundles).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &mean)
}

/// 100 * (value - baseline) / baseline; None when the baseline is zero.
#[pyfunction]
fn percent_delta(value: f64, baseline: f64) -> Option<f64> {
    report::percent_delta(value, baseline)
}

/// Sentence-like chunks of a paragraph under the rule-based splitter.
#[pyfunction]
fn segment(paragraph: &str) -> Vec<String> {
    filter::segment(paragraph, &filter::default_abbreviations())
        .into_iter()
        .map(|c| c.text)
        .collect()
}

/// Relevance-filter a paragraph against a mention with the seeded mock
/// scorer. Returns (filtered_text, [score dicts]).
#[pyfunction]
#[pyo3(signature = (paragraph, mention, lam = 1.2, seed = 0))]
fn filter_paragraph(
    py: Python<'_>,
    paragraph: &str,
    mention: &str,
    lam: f64,
    seed: u64,
) -> PyResult<(String, PyObject)> {
    let fc = corpus::FigureContext {
        figure_id: String::new(),
        mention: mention.to_string(),
        paragraph: paragraph.to_string(),
        ocr: vec![],
        figure_type: String::new(),
        caption_len_hint: None,
        gold_caption: None,
    };
    let cfg = filter::FilterConfig { lambda: lam, ..filter::FilterConfig::default() };
    let scorer = MockBackend::echo(seed);
    let outcome = filter::filter_paragraph(&fc, &cfg, &scorer)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((outcome.text, to_py(py, &outcome.scores)?))
}

/// The ±15% token window around a target length.
#[pyfunction]
fn length_window(target_len: usize) -> (usize, usize) {
    let w = pipeline::LengthWindow::new(target_len);
    (w.lower, w.upper)
}

/// Load and validate a JSONL corpus: {"records": [...], "report": {...}}.
#[pyfunction]
fn load_corpus(py: Python<'_>, path: PathBuf) -> PyResult<PyObject> {
    let load = corpus::load_corpus(&path, None).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let dict = PyDict::new_bound(py);
    dict.set_item("records", to_py(py, &load.records)?)?;
    dict.set_item("report", to_py(py, &load.report)?)?;
    Ok(dict.into_py(py))
}

/// Corpus statistics for a JSONL file.
#[pyfunction]
fn corpus_stats(py: Python<'_>, path: PathBuf) -> PyResult<PyObject> {
    let load = corpus::load_corpus(&path, None).map_err(|e| PyIOError::new_err(e.to_string()))?;
    to_py(py, &corpus::corpus_stats(&load.records))
}

/// Run the full two-stage pipeline on one record JSON with the mock backend.
/// Returns {"caption", "flags", "rerank_calls", "selected", "candidates"}.
#[pyfunction]
#[pyo3(signature = (record_json, seed = 0, stage1_only = false))]
fn run_record(py: Python<'_>, record_json: &str, seed: u64, stage1_only: bool) -> PyResult<PyObject> {
    let (record, _warnings) =
        corpus::validate_record(record_json).map_err(PyValueError::new_err)?;
    let backend = MockBackend::echo(seed);
    let templates = TemplateSet::empty();
    let ctx = pipeline::PipelineContext {
        templates: &templates,
        generator: &backend,
        reranker: &backend,
        scorer: Some(&backend),
        filter_cfg: filter::FilterConfig::default(),
        cfg: pipeline::PipelineConfig { stage1_only, seed, ..pipeline::PipelineConfig::default() },
    };
    let outcome = pipeline::run_record(&record, &ctx);

    let dict = PyDict::new_bound(py);
    dict.set_item("caption", outcome.final_caption.as_ref().map(|c| c.text.clone()))?;
    dict.set_item("flags", outcome.trail.flags.clone())?;
    dict.set_item("rerank_calls", outcome.trail.rerank_calls())?;
    dict.set_item("selected", to_py(py, &outcome.selected)?)?;
    dict.set_item("candidates", to_py(py, &outcome.candidates)?)?;
    Ok(dict.into_py(py))
}

#[pymodule]
fn figcap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(percent_delta, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(filter_paragraph, m)?)?;
    m.add_function(wrap_pyfunction!(length_window, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    m.add_function(wrap_pyfunction!(run_record, m)?)?;
    Ok(())
}
