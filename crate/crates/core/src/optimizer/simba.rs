//! Feedback-rule mining: find the worst-scoring example of a minibatch, ask
//! the generator for one imperative improvement rule, and keep the rule only
//! if re-running the same minibatch does not lower the mean score.

use super::{objective, PromptTemplate, TrainExample};
use crate::llm::{LlmBackend, LlmRequest};
use crate::prompts::{build_reasoning_prompt, extract_final_caption, summarize_context, RULE_TEMPLATE};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MAX_RULE_CHARS: usize = 300;

/// A rule accepted into a template, with the minibatch-mean improvement
/// measured when it was validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRule {
    pub rule_text: String,
    pub source_example: String,
    pub delta: f64,
}

#[derive(Debug)]
pub struct SimbaOutcome {
    pub template: PromptTemplate,
    pub accepted: Vec<FeedbackRule>,
    pub warnings: Vec<String>,
}

fn generate_scores(
    template: &PromptTemplate,
    examples: &[TrainExample],
    batch: &[usize],
    generator: &dyn LlmBackend,
) -> Result<Vec<f64>, String> {
    let mut scores = Vec::with_capacity(batch.len());
    for &idx in batch {
        let ex = &examples[idx];
        let prompt = build_reasoning_prompt(template, &ex.fc, &ex.fc.paragraph);
        let resp = generator.complete(&LlmRequest::new(prompt)).map_err(|e| e.to_string())?;
        scores.push(objective(&extract_final_caption(&resp.text), &ex.gold));
    }
    Ok(scores)
}

fn mean(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len().max(1) as f64
}

/// Iterate rule mining for `iterations` rounds. The rules list only grows,
/// capped at `r_max`; the template version increments once per accepted rule.
pub fn simba_refine(
    template: &PromptTemplate,
    examples: &[TrainExample],
    generator: &dyn LlmBackend,
    iterations: usize,
    minibatch: usize,
    r_max: usize,
    rng: &mut ChaCha8Rng,
) -> SimbaOutcome {
    let mut current = template.clone();
    let mut accepted = Vec::new();
    let mut warnings = Vec::new();

    if examples.is_empty() {
        warnings.push("no examples for rule mining; template unchanged".to_string());
        return SimbaOutcome { template: current, accepted, warnings };
    }

    for iteration in 0..iterations {
        if current.rules.len() >= r_max {
            break;
        }
        let batch: Vec<usize> =
            rand::seq::index::sample(rng, examples.len(), minibatch.min(examples.len())).into_vec();

        let before = match generate_scores(&current, examples, &batch, generator) {
            Ok(s) => s,
            Err(e) => {
                warnings.push(format!("iteration {iteration}: generation failed ({e}), skipped"));
                continue;
            }
        };
        let mean_before = mean(&before);
        let worst_pos = before
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let worst = &examples[batch[worst_pos]];

        let rule_prompt = RULE_TEMPLATE
            .replace("{input}", &summarize_context(&worst.fc))
            .replace("{caption}", "(scored lowest in the minibatch)")
            .replace("{reference}", &worst.gold);
        let rule = match generator.complete(&LlmRequest::new(rule_prompt)) {
            Ok(resp) => resp.text.trim().to_string(),
            Err(e) => {
                warnings.push(format!("iteration {iteration}: rule generation failed ({e}), skipped"));
                continue;
            }
        };
        if rule.is_empty() || rule.chars().count() > MAX_RULE_CHARS {
            warnings.push(format!("iteration {iteration}: malformed rule rejected"));
            continue;
        }

        let mut tentative = current.clone();
        tentative.rules.push(rule.clone());
        let after = match generate_scores(&tentative, examples, &batch, generator) {
            Ok(s) => s,
            Err(e) => {
                warnings.push(format!("iteration {iteration}: validation failed ({e}), rule dropped"));
                continue;
            }
        };
        let mean_after = mean(&after);

        if mean_after >= mean_before {
            tentative.version = current.version + 1;
            accepted.push(FeedbackRule {
                rule_text: rule,
                source_example: worst.paper_id.clone(),
                delta: mean_after - mean_before,
            });
            current = tentative;
        }
    }

    SimbaOutcome { template: current, accepted, warnings }
}
