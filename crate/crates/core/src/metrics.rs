//! From-scratch BLEU-1..4 and ROUGE-1/2/L over a shared tokenizer.
//!
//! All scores live in [0, 1]. A single reference per candidate; aggregation
//! is the macro-average (mean of per-instance scores).

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Highest n-gram order used by BLEU.
pub const MAX_BLEU_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("cannot aggregate an empty list of bundles")]
    EmptyAggregate,
}

/// A tokenized, lowercased text. Tokens are never empty.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<String>> for TokenSeq {
    fn from(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        TokenSeq(tokens)
    }
}

/// Lowercase and split on every maximal run of non-alphanumeric characters.
/// Digits are kept; empty input yields an empty sequence.
pub fn tokenize(text: &str) -> TokenSeq {
    let tokens = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    TokenSeq(tokens)
}

/// Convenience: token count of a text under the shared tokenizer.
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

/// All contiguous n-grams of `seq` with multiplicity. Empty when `seq` is
/// shorter than `n`.
pub fn ngram_counts(seq: &TokenSeq, n: usize) -> Result<HashMap<&[String], usize>, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    Ok(ngrams(seq.tokens(), n))
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap: sum over distinct grams of
/// min(count in candidate, count in reference), plus the candidate total.
fn clipped_overlap(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let refs = ngrams(reference, n);
    let total: usize = cand.values().sum();
    let clipped: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    (clipped, total)
}

/// Precision/recall/F1 triple. F1 is 0 whenever precision + recall is 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let precision = ratio(overlap, cand_total);
        let recall = ratio(overlap, ref_total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore { precision, recall, f1 }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// BLEU zero-precision handling. The default leaves zero precisions alone,
/// which zeroes every BLEU-k with k >= n. Add-one smoothing substitutes
/// (clipped+1)/(total+1) for orders the candidate is long enough to support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Smoothing {
    #[default]
    None,
    AddOne,
}

/// BLEU-1..4: BLEU-k = BP * exp((1/k) * sum_{n<=k} ln p_n) with modified
/// (clipped) n-gram precisions and BP = min(1, exp(1 - |ref|/|cand|)).
/// An empty candidate scores 0 on all four. An order where neither side has
/// any n-grams contributes a vacuous precision of 1, so identical sequences
/// score 1.0 at every order regardless of length.
pub fn bleu(candidate: &TokenSeq, reference: &TokenSeq, smoothing: Smoothing) -> [f64; MAX_BLEU_ORDER] {
    let mut scores = [0.0; MAX_BLEU_ORDER];
    let cand = candidate.tokens();
    let refs = reference.tokens();
    if cand.is_empty() {
        return scores;
    }

    let bp = brevity_penalty(cand.len(), refs.len());
    let mut precisions = [0.0; MAX_BLEU_ORDER];
    for n in 1..=MAX_BLEU_ORDER {
        let (clipped, total) = clipped_overlap(cand, refs, n);
        let ref_total = if refs.len() < n { 0 } else { refs.len() - n + 1 };
        precisions[n - 1] = if total == 0 {
            if ref_total == 0 { 1.0 } else { 0.0 }
        } else {
            match smoothing {
                Smoothing::None => ratio(clipped, total),
                Smoothing::AddOne => {
                    if clipped > 0 {
                        ratio(clipped, total)
                    } else {
                        (clipped + 1) as f64 / (total + 1) as f64
                    }
                }
            }
        };
    }

    for k in 1..=MAX_BLEU_ORDER {
        if precisions[..k].contains(&0.0) {
            scores[k - 1] = 0.0;
        } else {
            let log_mean = precisions[..k].iter().map(|p| p.ln()).sum::<f64>() / k as f64;
            scores[k - 1] = (bp * log_mean.exp()).clamp(0.0, 1.0);
        }
    }
    scores
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    let c = cand_len as f64;
    let r = ref_len as f64;
    (1.0 - r / c).exp().min(1.0)
}

/// ROUGE-N via clipped n-gram overlap.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore {
    debug_assert!(n >= 1, "rouge_n requires n >= 1");
    let (overlap, cand_total) = clipped_overlap(candidate.tokens(), reference.tokens(), n);
    let ref_total = if reference.len() < n { 0 } else { reference.len() - n + 1 };
    RougeScore::from_counts(overlap, cand_total, ref_total)
}

/// ROUGE-L via longest common subsequence length.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let lcs = lcs_len(candidate.tokens(), reference.tokens());
    RougeScore::from_counts(lcs, candidate.len(), reference.len())
}

/// Classic two-row LCS dynamic program.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Every metric for one candidate/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub bleu: [f64; MAX_BLEU_ORDER],
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

/// Tokenize both texts and compute the full bundle (unsmoothed BLEU).
pub fn evaluate_pair(candidate: &str, reference: &str) -> MetricBundle {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    MetricBundle {
        bleu: bleu(&cand, &refs, Smoothing::None),
        rouge1: rouge_n(&cand, &refs, 1),
        rouge2: rouge_n(&cand, &refs, 2),
        rouge_l: rouge_l(&cand, &refs),
    }
}

/// Macro-average: arithmetic mean of each field across instances.
pub fn aggregate(bundles: &[MetricBundle]) -> Result<MetricBundle, MetricsError> {
    if bundles.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let n = bundles.len() as f64;
    let mut bleu = [0.0; MAX_BLEU_ORDER];
    let mut sums = [[0.0; 3]; 3];
    for b in bundles {
        for (acc, v) in bleu.iter_mut().zip(b.bleu.iter()) {
            *acc += v;
        }
        for (i, r) in [b.rouge1, b.rouge2, b.rouge_l].into_iter().enumerate() {
            sums[i][0] += r.precision;
            sums[i][1] += r.recall;
            sums[i][2] += r.f1;
        }
    }
    for v in bleu.iter_mut() {
        *v /= n;
    }
    let mean = |s: [f64; 3]| RougeScore {
        precision: s[0] / n,
        recall: s[1] / n,
        f1: s[2] / n,
    };
    Ok(MetricBundle {
        bleu,
        rouge1: mean(sums[0]),
        rouge2: mean(sums[1]),
        rouge_l: mean(sums[2]),
    })
}
