//! Sentence-level relevance filtering of the target paragraph against the
//! mention text.
//!
//! The paragraph is segmented into sentence-like chunks by a rule-based
//! splitter with an abbreviation guard. Each chunk is kept when the mention's
//! log-likelihood conditioned on the chunk beats the null-prompt baseline by
//! at least ln(lambda); the comparison lives in one predicate so the reading
//! can be swapped.

use crate::corpus::FigureContext;
use crate::llm::{LikelihoodScorer, LlmError};
use crate::metrics::token_count;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LAMBDA: f64 = 1.2;

/// Default abbreviation guard list; a trailing period inside these never ends
/// a sentence.
pub fn default_abbreviations() -> Vec<String> {
    ["Fig.", "Figs.", "et al.", "e.g.", "i.e.", "cf.", "Eq.", "Eqs.", "Sec.", "Tab.", "vs.", "resp.", "No.", "approx."]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub const DEFAULT_CONDITIONAL_TEMPLATE: &str = "Context: {chunk}\nThe figure mention: ";
pub const DEFAULT_NULL_TEMPLATE: &str = "The figure mention: ";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub lambda: f64,
    pub per_token_normalize: bool,
    pub conditional_template: String,
    pub null_template: String,
    pub abbreviations: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            lambda: DEFAULT_LAMBDA,
            per_token_normalize: false,
            conditional_template: DEFAULT_CONDITIONAL_TEMPLATE.to_string(),
            null_template: DEFAULT_NULL_TEMPLATE.to_string(),
            abbreviations: default_abbreviations(),
        }
    }
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("scorer failed on chunk {chunk_index}: {source}")]
    Scorer {
        chunk_index: usize,
        #[source]
        source: LlmError,
    },
    #[error("mention is empty; nothing to score against")]
    EmptyMention,
}

/// One sentence-like span of the paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub chunk_index: usize,
    pub ll_conditional: f64,
    pub ll_null: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub text: String,
    pub scores: Vec<RelevanceScore>,
}

/// Collapse whitespace runs to single spaces and trim.
fn normalize(paragraph: &str) -> String {
    paragraph.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_sentence_final(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// True when the text ending at `end` (inclusive of the period) terminates in
/// a guarded abbreviation at a word boundary.
fn ends_with_abbreviation(text: &str, abbreviations: &[String]) -> bool {
    let lower = text.to_lowercase();
    abbreviations.iter().any(|abbr| {
        let a = abbr.to_lowercase();
        lower.ends_with(&a)
            && lower[..lower.len() - a.len()]
                .chars()
                .next_back()
                .is_none_or(|c| c.is_whitespace() || c == '(')
    })
}

/// Split on sentence-final punctuation followed by whitespace and an
/// uppercase letter or digit. Joining the chunks with single spaces
/// reconstructs the normalized paragraph.
pub fn segment(paragraph: &str, abbreviations: &[String]) -> Vec<Chunk> {
    let text = normalize(paragraph);
    if text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = text.chars().collect();
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if is_sentence_final(c)
            && chars.get(i + 1) == Some(&' ')
            && chars.get(i + 2).is_some_and(|n| n.is_uppercase() || n.is_numeric())
        {
            let candidate: String = chars[start..=i].iter().collect();
            let guarded = c == '.' && ends_with_abbreviation(&candidate, abbreviations);
            if !guarded {
                chunks.push(Chunk { index: chunks.len(), text: candidate });
                i += 2;
                start = i;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        chunks.push(Chunk { index: chunks.len(), text: tail });
    }
    chunks
}

/// The one place the threshold reading lives: likelihood-ratio form,
/// margin >= ln(lambda). With per-token normalization the margin is divided
/// by the mention's token count first.
pub fn retains(ll_conditional: f64, ll_null: f64, lambda: f64, norm_tokens: Option<usize>) -> bool {
    let mut margin = ll_conditional - ll_null;
    if let Some(n) = norm_tokens {
        margin /= n.max(1) as f64;
    }
    margin >= lambda.ln()
}

/// Score one chunk: mention log-likelihood under the chunk-conditioned prompt
/// versus the null prompt.
pub fn score_chunk(
    chunk: &Chunk,
    mention: &str,
    cfg: &FilterConfig,
    scorer: &dyn LikelihoodScorer,
) -> Result<RelevanceScore, FilterError> {
    if mention.trim().is_empty() {
        return Err(FilterError::EmptyMention);
    }
    let conditional_prompt = cfg.conditional_template.replace("{chunk}", &chunk.text);
    let wrap = |source| FilterError::Scorer { chunk_index: chunk.index, source };
    let ll_conditional = scorer.loglikelihood(&conditional_prompt, mention).map_err(wrap)?;
    let ll_null = scorer.loglikelihood(&cfg.null_template, mention).map_err(wrap)?;
    let norm = cfg.per_token_normalize.then(|| token_count(mention));
    Ok(RelevanceScore {
        chunk_index: chunk.index,
        ll_conditional,
        ll_null,
        retained: retains(ll_conditional, ll_null, cfg.lambda, norm),
    })
}

/// Filter the paragraph of one figure context: retained chunks concatenated
/// in original order, with the full score list for audit.
pub fn filter_paragraph(
    fc: &FigureContext,
    cfg: &FilterConfig,
    scorer: &dyn LikelihoodScorer,
) -> Result<FilterOutcome, FilterError> {
    let chunks = segment(&fc.paragraph, &cfg.abbreviations);
    if chunks.is_empty() {
        return Ok(FilterOutcome::default());
    }
    let mut scores = Vec::with_capacity(chunks.len());
    let mut kept = Vec::new();
    for chunk in &chunks {
        let score = score_chunk(chunk, &fc.mention, cfg, scorer)?;
        if score.retained {
            kept.push(chunk.text.as_str());
        }
        scores.push(score);
    }
    Ok(FilterOutcome { text: kept.join(" "), scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct FixedScorer {
        /// margin assigned to prompts containing the key; ll_null is 0.
        margins: HashMap<String, f64>,
    }

    impl LikelihoodScorer for FixedScorer {
        fn loglikelihood(&self, prompt: &str, _continuation: &str) -> Result<f64, LlmError> {
            for (needle, margin) in &self.margins {
                if prompt.contains(needle.as_str()) {
                    return Ok(*margin);
                }
            }
            Ok(0.0)
        }
    }

    fn fc(paragraph: &str, mention: &str) -> FigureContext {
        FigureContext {
            figure_id: "f".into(),
            mention: mention.into(),
            paragraph: paragraph.into(),
            ocr: vec![],
            figure_type: "plot".into(),
            caption_len_hint: None,
            gold_caption: None,
        }
    }

    #[test]
    fn segment_basic_and_empty() {
        let abbr = default_abbreviations();
        let chunks = segment("A is big. B is small.", &abbr);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "A is big.");
        assert_eq!(chunks[1].text, "B is small.");
        assert!(segment("", &abbr).is_empty());
        assert!(segment("   \n\t ", &abbr).is_empty());
    }

    #[test]
    fn segment_abbreviation_guard() {
        let abbr = default_abbreviations();
        assert_eq!(segment("See Fig. 2 for details.", &abbr).len(), 1);
        assert_eq!(segment("As shown by Smith et al. 2020 it holds.", &abbr).len(), 1);
        assert_eq!(segment("Methods vary, e.g. A and B. The results follow.", &abbr).len(), 2);
    }

    #[test]
    fn segment_reconstructs_normalized_paragraph() {
        let abbr = default_abbreviations();
        let paragraph = "First  sentence here. Second one!  Third   asks? Yes. See Fig. 3 now.";
        let chunks = segment(paragraph, &abbr);
        let joined = chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(joined, normalize(paragraph));
        for (i, c) in chunks.iter().enumerate() {
            assert_eq!(c.index, i);
        }
    }

    #[test]
    fn segment_requires_upper_or_digit_after_split() {
        let abbr = default_abbreviations();
        // lowercase continuation: no split
        assert_eq!(segment("version 2. x was used Here.", &abbr).len(), 1);
        // digit continuation: split
        assert_eq!(segment("It works. 2 modes exist.", &abbr).len(), 2);
    }

    #[test]
    fn retains_is_the_log_ratio_rule() {
        let ln12 = 1.2f64.ln();
        // equal likelihoods fail at lambda=1.2 (ln 1.2 > 0)
        assert!(!retains(-3.0, -3.0, 1.2, None));
        // margin 0.5 >= ln 1.2 ~ 0.182
        assert!(retains(-2.5, -3.0, 1.2, None));
        // boundary at lambda=1.0: 0 >= 0
        assert!(retains(-3.0, -3.0, 1.0, None));
        // exact boundary at lambda=1.2 retained (>=)
        assert!(retains(ln12, 0.0, 1.2, None));
        assert!(!retains(ln12 - 1e-9, 0.0, 1.2, None));
    }

    #[test]
    fn per_token_normalization_divides_margin() {
        // margin 0.4 over a 4-token mention: normalized 0.1 < ln 1.2
        assert!(retains(0.4, 0.0, 1.2, None));
        assert!(!retains(0.4, 0.0, 1.2, Some(4)));
    }

    #[test]
    fn score_chunk_boundaries_with_mock() {
        let cfg = FilterConfig::default();
        let chunk = Chunk { index: 0, text: "the relevant part".into() };

        let equal = FixedScorer { margins: HashMap::new() };
        let s = score_chunk(&chunk, "mention text", &cfg, &equal).unwrap();
        assert!(!s.retained);

        let better = FixedScorer {
            margins: HashMap::from([("the relevant part".to_string(), 0.5)]),
        };
        let s = score_chunk(&chunk, "mention text", &cfg, &better).unwrap();
        assert!(s.retained);
        assert_eq!(s.ll_conditional, 0.5);
        assert_eq!(s.ll_null, 0.0);

        let mut cfg1 = cfg.clone();
        cfg1.lambda = 1.0;
        let s = score_chunk(&chunk, "mention text", &cfg1, &equal).unwrap();
        assert!(s.retained);
    }

    #[test]
    fn empty_mention_is_an_error() {
        let cfg = FilterConfig::default();
        let chunk = Chunk { index: 0, text: "x.".into() };
        let scorer = FixedScorer { margins: HashMap::new() };
        assert!(matches!(
            score_chunk(&chunk, "  ", &cfg, &scorer),
            Err(FilterError::EmptyMention)
        ));
    }

    #[test]
    fn filter_paragraph_keeps_order_and_reports_all_scores() {
        let cfg = FilterConfig::default();
        let record = fc("Alpha part one. Beta part two. Gamma part three.", "the mention");
        let scorer = FixedScorer {
            margins: HashMap::from([
                ("Alpha".to_string(), 0.9),
                ("Gamma".to_string(), 0.9),
                ("Beta".to_string(), -0.9),
            ]),
        };
        let out = filter_paragraph(&record, &cfg, &scorer).unwrap();
        assert_eq!(out.text, "Alpha part one. Gamma part three.");
        assert_eq!(out.scores.len(), 3);
        assert_eq!(
            out.scores.iter().map(|s| s.retained).collect::<Vec<_>>(),
            vec![true, false, true]
        );
    }

    #[test]
    fn all_below_threshold_yields_empty_text() {
        let cfg = FilterConfig::default();
        let record = fc("One part. Two part.", "the mention");
        let scorer = FixedScorer { margins: HashMap::new() };
        let out = filter_paragraph(&record, &cfg, &scorer).unwrap();
        assert_eq!(out.text, "");
        assert!(out.scores.iter().all(|s| !s.retained));
    }

    #[test]
    fn empty_paragraph_yields_empty_outcome() {
        let cfg = FilterConfig::default();
        let record = fc("", "the mention");
        let scorer = FixedScorer { margins: HashMap::new() };
        let out = filter_paragraph(&record, &cfg, &scorer).unwrap();
        assert_eq!(out.text, "");
        assert!(out.scores.is_empty());
    }

    #[test]
    fn scorer_failure_carries_chunk_index() {
        struct FailingScorer;
        impl LikelihoodScorer for FailingScorer {
            fn loglikelihood(&self, _p: &str, _c: &str) -> Result<f64, LlmError> {
                Err(LlmError::Transport("down".into()))
            }
        }
        let cfg = FilterConfig::default();
        let record = fc("Something here.", "the mention");
        match filter_paragraph(&record, &cfg, &FailingScorer) {
            Err(FilterError::Scorer { chunk_index: 0, .. }) => {}
            other => panic!("expected scorer error, got {other:?}"),
        }
    }

    #[test]
    fn retained_set_monotone_in_lambda_under_seeded_mock() {
        use crate::llm::MockBackend;
        let scorer = MockBackend::echo(11);
        let record = fc(
            "First chunk of text. Second chunk follows. Third one here. Fourth closes it.",
            "the figure mention text",
        );
        let lambdas = [1.0, 1.1, 1.2, 1.5, 2.0];
        let mut previous: Option<Vec<usize>> = None;
        for lambda in lambdas {
            let cfg = FilterConfig { lambda, ..FilterConfig::default() };
            let out = filter_paragraph(&record, &cfg, &scorer).unwrap();
            let kept: Vec<usize> =
                out.scores.iter().filter(|s| s.retained).map(|s| s.chunk_index).collect();
            if let Some(prev) = &previous {
                assert!(kept.iter().all(|i| prev.contains(i)), "lambda {lambda} grew the set");
            }
            previous = Some(kept);
        }
    }
}
