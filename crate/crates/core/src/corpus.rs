//! Line-delimited JSON corpus of paper records: parsing, validation, and
//! descriptive statistics.
//!
//! Each line carries one paper with a target figure and up to three profile
//! figures whose gold captions serve as style exemplars. Records that fail
//! validation are reported with their line number, never silently dropped.

use crate::metrics::token_count;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

pub const MAX_PROFILES: usize = 3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The textual context attached to one figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureContext {
    pub figure_id: String,
    pub mention: String,
    #[serde(default)]
    pub paragraph: String,
    #[serde(default)]
    pub ocr: Vec<String>,
    #[serde(default)]
    pub figure_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_len_hint: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_caption: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train|val|test)")),
        }
    }
}

/// One article: category tags, the target figure, and profile figures with
/// gold captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub categories: Vec<String>,
    pub split: Split,
    pub target: FigureContext,
    #[serde(default)]
    pub profiles: Vec<FigureContext>,
}

/// Wire shape used to detect absent-vs-empty paragraph before validation.
#[derive(Debug, Deserialize)]
struct RawFigureContext {
    figure_id: String,
    mention: String,
    paragraph: Option<String>,
    #[serde(default)]
    ocr: Vec<String>,
    #[serde(default)]
    figure_type: String,
    #[serde(default)]
    caption_len_hint: Option<u32>,
    #[serde(default)]
    gold_caption: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawPaperRecord {
    paper_id: String,
    categories: Vec<String>,
    split: Split,
    target: RawFigureContext,
    #[serde(default)]
    profiles: Vec<RawFigureContext>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineWarning {
    pub line: usize,
    pub message: String,
}

/// Per-file load report, serializable for the CLI.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub path: String,
    pub lines_total: usize,
    pub loaded: usize,
    pub rejected: usize,
    pub errors: Vec<LineError>,
    pub warnings: Vec<LineWarning>,
}

#[derive(Debug)]
pub struct CorpusLoad {
    pub records: Vec<PaperRecord>,
    pub report: LoadReport,
}

fn validate_context(
    raw: RawFigureContext,
    role: &str,
    warnings: &mut Vec<String>,
) -> Result<FigureContext, String> {
    if raw.mention.trim().is_empty() {
        return Err(format!("{role} mention empty"));
    }
    let paragraph = match raw.paragraph {
        Some(p) => p,
        None => {
            warnings.push(format!("{role} paragraph absent, defaulted to empty"));
            String::new()
        }
    };
    let mut ocr = Vec::with_capacity(raw.ocr.len());
    let mut dropped = 0usize;
    for entry in raw.ocr {
        let trimmed = entry.trim().to_string();
        if trimmed.is_empty() {
            dropped += 1;
        } else {
            ocr.push(trimmed);
        }
    }
    if dropped > 0 {
        warnings.push(format!("{role} dropped {dropped} empty ocr entries"));
    }
    if let (Some(hint), Some(gold)) = (raw.caption_len_hint, raw.gold_caption.as_deref()) {
        let counted = token_count(gold) as u32;
        if hint != counted {
            warnings.push(format!(
                "{role} caption_len_hint {hint} does not match tokenized gold caption length {counted}"
            ));
        }
    }
    Ok(FigureContext {
        figure_id: raw.figure_id,
        mention: raw.mention,
        paragraph,
        ocr,
        figure_type: raw.figure_type,
        caption_len_hint: raw.caption_len_hint,
        gold_caption: raw.gold_caption,
    })
}

/// Split category entries on ";", trim, drop empties, dedup preserving order.
fn normalize_categories(entries: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for entry in entries {
        for part in entry.split(';') {
            let tag = part.trim();
            if !tag.is_empty() && seen.insert(tag.to_string()) {
                out.push(tag.to_string());
            }
        }
    }
    out
}

/// Validate one parsed line into a PaperRecord plus non-fatal warnings.
pub fn validate_record(raw_json: &str) -> Result<(PaperRecord, Vec<String>), String> {
    let raw: RawPaperRecord =
        serde_json::from_str(raw_json).map_err(|e| format!("invalid JSON: {e}"))?;
    let mut warnings = Vec::new();

    let categories = normalize_categories(raw.categories);
    if categories.is_empty() {
        return Err("categories empty".to_string());
    }
    if raw.profiles.len() > MAX_PROFILES {
        return Err(format!("profiles exceed {MAX_PROFILES}"));
    }

    let target = validate_context(raw.target, "target", &mut warnings)?;
    let mut profiles = Vec::with_capacity(raw.profiles.len());
    for (i, p) in raw.profiles.into_iter().enumerate() {
        let role = format!("profile {i}");
        if p.gold_caption.as_deref().is_none_or(|g| g.trim().is_empty()) {
            return Err(format!("{role} missing gold caption"));
        }
        profiles.push(validate_context(p, &role, &mut warnings)?);
    }

    Ok((
        PaperRecord {
            paper_id: raw.paper_id,
            categories,
            split: raw.split,
            target,
            profiles,
        },
        warnings,
    ))
}

/// Stream records from any line source, collecting a load report.
/// `split` filters to one split when given.
pub fn read_records<R: BufRead>(reader: R, split: Option<Split>, report: &mut LoadReport) -> Vec<PaperRecord> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                report.lines_total += 1;
                report.rejected += 1;
                report.errors.push(LineError {
                    line: line_no,
                    reason: format!("unreadable line: {e}"),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        report.lines_total += 1;
        match validate_record(&line) {
            Ok((record, warnings)) => {
                for w in warnings {
                    report.warnings.push(LineWarning { line: line_no, message: w });
                }
                if split.is_none_or(|s| record.split == s) {
                    report.loaded += 1;
                    records.push(record);
                }
            }
            Err(reason) => {
                report.rejected += 1;
                report.errors.push(LineError { line: line_no, reason });
            }
        }
    }
    records
}

/// Load and validate a JSONL corpus file. An unreadable file is fatal;
/// malformed lines land in the report.
pub fn load_corpus(path: &Path, split: Option<Split>) -> Result<CorpusLoad, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let mut report = LoadReport {
        path: path.display().to_string(),
        ..LoadReport::default()
    };
    let records = read_records(BufReader::new(file), split, &mut report);
    Ok(CorpusLoad { records, report })
}

/// Serialize records back to the wire format, one JSON object per line.
pub fn to_jsonl(records: &[PaperRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Descriptive statistics over a record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_papers: usize,
    pub n_single_category: usize,
    pub n_multi_category: usize,
    pub mean_categories: Option<f64>,
    pub sd_categories: Option<f64>,
    pub category_vocabulary: BTreeSet<String>,
}

/// One-pass counts and moments. The standard deviation is the population
/// formula (divide by N).
pub fn corpus_stats<'a, I>(records: I) -> CorpusStats
where
    I: IntoIterator<Item = &'a PaperRecord>,
{
    let mut n = 0usize;
    let mut single = 0usize;
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    let mut vocab = BTreeSet::new();
    for r in records {
        n += 1;
        let k = r.categories.len();
        if k == 1 {
            single += 1;
        }
        sum += k as f64;
        sumsq += (k * k) as f64;
        for c in &r.categories {
            vocab.insert(c.clone());
        }
    }
    let (mean, sd) = if n == 0 {
        (None, None)
    } else {
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        (Some(mean), Some(var.sqrt()))
    };
    CorpusStats {
        n_papers: n,
        n_single_category: single,
        n_multi_category: n - single,
        mean_categories: mean,
        sd_categories: sd,
        category_vocabulary: vocab,
    }
}
