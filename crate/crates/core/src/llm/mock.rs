//! Deterministic offline backend: a pure function of (request, seed).
//!
//! Three modes make every pipeline branch testable without a network:
//! - `Echo` joins any `ECHO{...}` spans found in the prompt, and understands
//!   the pipeline's rerank/refine prompt shapes well enough to return a
//!   parseable ranking or a length-fitted rewrite;
//! - `Gold` returns the first `GOLD{...}` span, letting fixtures smuggle a
//!   gold caption through the prompt;
//! - `Scripted` replays a fixture transcript, matching entries by substring.

use super::{fnv1a, CallStats, LikelihoodScorer, LlmBackend, LlmError, LlmRequest, LlmResponse};
use crate::metrics::token_count;
use serde::Deserialize;
use std::sync::{Arc, Mutex};
use std::time::Duration;

const LEXICON: [&str; 16] = [
    "figure", "plot", "curve", "distribution", "baseline", "model", "results", "comparison",
    "accuracy", "samples", "layers", "signal", "spectrum", "network", "training", "measured",
];

#[derive(Debug, Clone, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub contains: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
    #[serde(default)]
    pub default: Option<String>,
}

impl Script {
    pub fn new(entries: Vec<ScriptEntry>, default: Option<String>) -> Self {
        Script { entries, default }
    }

    /// Accepts either the full object form or a bare entry array.
    pub fn from_json_str(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str::<Script>(json)
            .or_else(|_| serde_json::from_str::<Vec<ScriptEntry>>(json).map(|entries| Script {
                entries,
                default: None,
            }))
    }
}

pub enum MockMode {
    Echo,
    Gold,
    Scripted(Mutex<ScriptState>),
}

pub struct ScriptState {
    script: Script,
    used: Vec<bool>,
}

pub struct MockBackend {
    seed: u64,
    mode: MockMode,
    model_id: String,
    stats: Arc<CallStats>,
}

impl MockBackend {
    pub fn new(seed: u64, mode: MockMode) -> Self {
        let used = match &mode {
            MockMode::Scripted(state) => state.lock().unwrap().used.clone(),
            _ => Vec::new(),
        };
        let _ = used;
        MockBackend {
            seed,
            mode,
            model_id: "mock-1".to_string(),
            stats: Arc::new(CallStats::default()),
        }
    }

    pub fn echo(seed: u64) -> Self {
        Self::new(seed, MockMode::Echo)
    }

    pub fn gold(seed: u64) -> Self {
        Self::new(seed, MockMode::Gold)
    }

    pub fn scripted(seed: u64, script: Script) -> Self {
        let used = vec![false; script.entries.len()];
        Self::new(seed, MockMode::Scripted(Mutex::new(ScriptState { script, used })))
    }

    pub fn stats(&self) -> &Arc<CallStats> {
        &self.stats
    }

    fn hash(&self, req: &LlmRequest) -> u64 {
        fnv1a(&[
            &self.seed.to_le_bytes(),
            &req.seed.unwrap_or(0).to_le_bytes(),
            req.prompt.as_bytes(),
        ])
    }

    fn pseudo_caption(&self, req: &LlmRequest) -> String {
        let mut h = self.hash(req);
        let len = 6 + (h % 7) as usize;
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            words.push(LEXICON[(h % LEXICON.len() as u64) as usize]);
            h = fnv1a(&[&h.to_le_bytes()]);
        }
        words.join(" ")
    }

    fn respond(&self, req: &LlmRequest) -> Result<String, LlmError> {
        match &self.mode {
            MockMode::Echo => {
                let spans = extract_spans(&req.prompt, "ECHO{");
                if !spans.is_empty() {
                    return Ok(spans.join(" "));
                }
                if let Some(text) = answer_rerank_prompt(&req.prompt, self.hash(req)) {
                    return Ok(text);
                }
                if let Some(text) = answer_refine_prompt(&req.prompt) {
                    return Ok(text);
                }
                Ok(self.pseudo_caption(req))
            }
            MockMode::Gold => {
                if let Some(span) = extract_spans(&req.prompt, "GOLD{").into_iter().next() {
                    return Ok(span);
                }
                Ok(self.pseudo_caption(req))
            }
            MockMode::Scripted(state) => {
                let mut state = state.lock().unwrap();
                let idx = state.script.entries.iter().enumerate().position(|(i, e)| {
                    !state.used[i]
                        && e.contains.as_deref().is_none_or(|needle| req.prompt.contains(needle))
                });
                match idx {
                    Some(i) => {
                        state.used[i] = true;
                        Ok(state.script.entries[i].response.clone())
                    }
                    None => state.script.default.clone().ok_or_else(|| {
                        LlmError::ScriptExhausted(req.prompt.chars().take(40).collect())
                    }),
                }
            }
        }
    }
}

/// All `marker{...}` spans in order of appearance.
fn extract_spans(text: &str, marker: &str) -> Vec<String> {
    let mut spans = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(marker) {
        let after = &rest[start + marker.len()..];
        match after.find('}') {
            Some(end) => {
                spans.push(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    spans
}

/// If the prompt looks like the ranking prompt, return a deterministic
/// permutation of the numbered captions ("2,3,1" style) plus justifications.
fn answer_rerank_prompt(prompt: &str, hash: u64) -> Option<String> {
    if !prompt.contains("Rank best to worst") {
        return None;
    }
    let n = prompt.lines().filter(|l| l.trim_start().starts_with("Cap. ")).count();
    if n == 0 {
        return None;
    }
    let shift = (hash % n as u64) as usize;
    let order: Vec<String> = (0..n).map(|i| ((i + shift) % n + 1).to_string()).collect();
    let mut out = order.join(",");
    out.push('\n');
    for rank in &order {
        out.push_str(&format!("Cap. {rank}: consistent with the figure context.\n"));
    }
    Some(out)
}

/// If the prompt looks like the refinement prompt, return the initial caption
/// fitted into the requested token range.
fn answer_refine_prompt(prompt: &str) -> Option<String> {
    if !prompt.contains("Final caption only") {
        return None;
    }
    let initial = prompt
        .lines()
        .find_map(|l| l.trim().strip_prefix("Initial: "))?
        .trim();
    let (lower, upper) = parse_bounds(prompt)?;
    let words: Vec<&str> = initial.split_whitespace().collect();
    if words.is_empty() {
        return None;
    }
    let mut fitted: Vec<&str> = words.iter().copied().take(upper.max(1)).collect();
    while fitted.len() < lower {
        fitted.push(words[words.len() - 1]);
    }
    Some(fitted.join(" "))
}

fn parse_bounds(prompt: &str) -> Option<(usize, usize)> {
    let idx = prompt.find("stay between ")?;
    let rest = &prompt[idx + "stay between ".len()..];
    let mut nums = rest
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().ok());
    let lower = nums.next()??;
    let upper = nums.next()??;
    Some((lower, upper))
}

impl LlmBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        req.validate()?;
        self.stats.record_call();
        let text = self.respond(req)?;
        Ok(LlmResponse {
            token_count: token_count(&text),
            text,
            latency: Duration::ZERO,
            model_id: self.model_id.clone(),
        })
    }
}

impl LikelihoodScorer for MockBackend {
    /// Per continuation token, a hash of (seed, prompt, continuation, index)
    /// mapped into [-5.0, -0.05]; the total is strictly negative.
    fn loglikelihood(&self, prompt: &str, continuation: &str) -> Result<f64, LlmError> {
        if continuation.trim().is_empty() {
            return Err(LlmError::EmptyContinuation);
        }
        self.stats.record_call();
        let n = token_count(continuation).max(1);
        let mut total = 0.0;
        for i in 0..n {
            let h = fnv1a(&[
                &self.seed.to_le_bytes(),
                prompt.as_bytes(),
                continuation.as_bytes(),
                &(i as u64).to_le_bytes(),
            ]);
            let unit = (h % 10_000) as f64 / 10_000.0;
            total -= 0.05 + 4.95 * unit;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_is_deterministic_per_request_and_seed() {
        let backend = MockBackend::echo(42);
        let req = LlmRequest::new("caption this figure").with_seed(7);
        let a = backend.complete(&req).unwrap();
        let b = backend.complete(&req).unwrap();
        assert_eq!(a.text, b.text);

        let other = MockBackend::echo(43).complete(&req).unwrap();
        assert_ne!(a.text, other.text);
    }

    #[test]
    fn empty_prompt_rejected() {
        let backend = MockBackend::echo(0);
        assert!(matches!(
            backend.complete(&LlmRequest::new("  ")),
            Err(LlmError::EmptyPrompt)
        ));
    }

    #[test]
    fn echo_mode_returns_markers() {
        let backend = MockBackend::echo(0);
        let req = LlmRequest::new("Instruction ECHO{CAT:cs.CV} and context.");
        assert_eq!(backend.complete(&req).unwrap().text, "CAT:cs.CV");
    }

    #[test]
    fn gold_mode_returns_smuggled_caption() {
        let backend = MockBackend::gold(0);
        let req = LlmRequest::new("Mention: GOLD{the true caption} rest of prompt");
        assert_eq!(backend.complete(&req).unwrap().text, "the true caption");
    }

    #[test]
    fn rerank_prompts_get_a_parseable_permutation() {
        let backend = MockBackend::echo(5);
        let prompt = "Context:\nCaptions:\nCap. 1: alpha\nCap. 2: beta\nCap. 3: gamma\n\nTask: Rank best to worst by clarity, relevance, accuracy, tone.";
        let text = backend.complete(&LlmRequest::new(prompt)).unwrap().text;
        let first = text.lines().next().unwrap();
        let mut ids: Vec<usize> = first.split(',').map(|s| s.parse().unwrap()).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn refine_prompts_respect_token_bounds() {
        let backend = MockBackend::echo(5);
        let prompt = "Refine the caption style only.\nInitial: one two three four five six seven eight\nLength: about 4 tokens (stay between 3 and 5)\n\nOutput: Final caption only.";
        let text = backend.complete(&LlmRequest::new(prompt)).unwrap().text;
        let n = text.split_whitespace().count();
        assert!((3..=5).contains(&n), "got {n} tokens: {text}");
    }

    #[test]
    fn scripted_mode_replays_and_exhausts() {
        let script = Script::new(
            vec![
                ScriptEntry { contains: Some("second".into()), response: "B".into() },
                ScriptEntry { contains: None, response: "A".into() },
            ],
            None,
        );
        let backend = MockBackend::scripted(0, script);
        assert_eq!(backend.complete(&LlmRequest::new("the second prompt")).unwrap().text, "B");
        assert_eq!(backend.complete(&LlmRequest::new("anything")).unwrap().text, "A");
        assert!(matches!(
            backend.complete(&LlmRequest::new("anything")),
            Err(LlmError::ScriptExhausted(_))
        ));
    }

    #[test]
    fn loglikelihood_is_deterministic_and_negative() {
        let backend = MockBackend::echo(9);
        let a = backend.loglikelihood("Context: x", "the mention").unwrap();
        let b = backend.loglikelihood("Context: x", "the mention").unwrap();
        assert_eq!(a, b);
        assert!(a < 0.0);
        assert!(a >= -5.0 * token_count("the mention") as f64);
        assert!(matches!(
            backend.loglikelihood("p", "  "),
            Err(LlmError::EmptyContinuation)
        ));
    }
}
