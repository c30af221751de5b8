//! End-to-end two-stage orchestration per record: per-category candidate
//! generation, reranking for multi-category papers, then profile-informed
//! stylistic refinement under the token-length window.

mod audit;

pub use audit::{AuditEvent, AuditTrail};

use crate::corpus::PaperRecord;
use crate::filter::{filter_paragraph, FilterConfig};
use crate::llm::{derive_seed, LikelihoodScorer, LlmBackend, LlmRequest};
use crate::metrics::token_count;
use crate::optimizer::TemplateSet;
use crate::prompts::{
    build_generation_prompt, build_refine_prompt, build_rerank_prompt, parse_ranking,
    REFINE_TEMPLATE, RERANK_TEMPLATE,
};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generated,
    Selected,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionCandidate {
    pub paper_id: String,
    pub category: String,
    pub text: String,
    pub stage: Stage,
    pub template_version: u32,
    pub model_id: String,
}

/// Outcome of reranking: a true permutation of the candidate indices; the
/// chosen candidate is always the first element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankDecision {
    pub ordered_candidate_ids: Vec<usize>,
    pub justification: String,
    pub chosen: usize,
    pub fallback: bool,
}

/// Token window of ±15% around the target length, lower bound clamped to 1.
/// Computed in integer arithmetic so the bounds are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthWindow {
    pub target_len: usize,
    pub lower: usize,
    pub upper: usize,
}

impl LengthWindow {
    pub fn new(target_len: usize) -> Self {
        let t = target_len.max(1);
        LengthWindow {
            target_len: t,
            lower: (t * 85 / 100).max(1),
            upper: (t * 115).div_ceil(100),
        }
    }

    pub fn contains(&self, tokens: usize) -> bool {
        (self.lower..=self.upper).contains(&tokens)
    }

    /// How many tokens outside the window; 0 when inside.
    pub fn distance(&self, tokens: usize) -> usize {
        if tokens < self.lower {
            self.lower - tokens
        } else { tokens.saturating_sub(self.upper) }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub filtered_inference: bool,
    pub stage1_only: bool,
    /// Extra refinement re-prompts after the first attempt.
    pub t_retry: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub rerank_template: String,
    pub refine_template: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            filtered_inference: false,
            stage1_only: false,
            t_retry: 2,
            temperature: 0.3,
            max_tokens: 256,
            seed: 0,
            rerank_template: RERANK_TEMPLATE.to_string(),
            refine_template: REFINE_TEMPLATE.to_string(),
        }
    }
}

/// Everything a worker needs to process records; shared read-only.
pub struct PipelineContext<'a> {
    pub templates: &'a TemplateSet,
    pub generator: &'a dyn LlmBackend,
    pub reranker: &'a dyn LlmBackend,
    pub scorer: Option<&'a dyn LikelihoodScorer>,
    pub filter_cfg: FilterConfig,
    pub cfg: PipelineConfig,
}

impl<'a> PipelineContext<'a> {
    fn request(&self, prompt: String, paper_id: &str, purpose: &str) -> LlmRequest {
        LlmRequest {
            system: None,
            prompt,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
            seed: Some(derive_seed(self.cfg.seed, &[paper_id, purpose])),
        }
    }
}

#[derive(Debug)]
pub struct RecordOutcome {
    pub paper_id: String,
    pub final_caption: Option<CaptionCandidate>,
    pub candidates: Vec<CaptionCandidate>,
    pub selected: Option<CaptionCandidate>,
    pub refined: Option<CaptionCandidate>,
    pub decision: Option<RerankDecision>,
    pub trail: AuditTrail,
}

impl RecordOutcome {
    pub fn failed(&self) -> bool {
        self.final_caption.is_none()
    }
}

/// One line of the captions JSONL output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionOutput {
    pub paper_id: String,
    pub caption: Option<String>,
    pub flags: Vec<String>,
}

impl From<&RecordOutcome> for CaptionOutput {
    fn from(outcome: &RecordOutcome) -> Self {
        CaptionOutput {
            paper_id: outcome.paper_id.clone(),
            caption: outcome.final_caption.as_ref().map(|c| c.text.clone()),
            flags: outcome.trail.flags.clone(),
        }
    }
}

/// One candidate per distinct category, prompted with that category's
/// template. Failed or empty generations are omitted and flagged.
pub fn generate_candidates(
    record: &PaperRecord,
    ctx: &PipelineContext,
    paragraph: &str,
    trail: &mut AuditTrail,
) -> Vec<CaptionCandidate> {
    let mut candidates = Vec::new();
    for category in &record.categories {
        let template = ctx.templates.resolve(category);
        let prompt = build_generation_prompt(&template, &record.target, paragraph);
        let req = ctx.request(prompt.clone(), &record.paper_id, &format!("gen:{category}"));
        match ctx.generator.complete(&req) {
            Ok(resp) => {
                let text = resp.text.trim().to_string();
                if text.is_empty() {
                    trail.push(AuditEvent::Generation {
                        category: category.clone(),
                        template_version: template.version,
                        prompt,
                        response: Some(text),
                        error: Some("empty generation".into()),
                    });
                    trail.flag(format!("empty_generation:{category}"));
                    continue;
                }
                trail.push(AuditEvent::Generation {
                    category: category.clone(),
                    template_version: template.version,
                    prompt,
                    response: Some(text.clone()),
                    error: None,
                });
                candidates.push(CaptionCandidate {
                    paper_id: record.paper_id.clone(),
                    category: category.clone(),
                    text,
                    stage: Stage::Generated,
                    template_version: template.version,
                    model_id: resp.model_id,
                });
            }
            Err(e) => {
                trail.push(AuditEvent::Generation {
                    category: category.clone(),
                    template_version: template.version,
                    prompt,
                    response: None,
                    error: Some(e.to_string()),
                });
                trail.flag(format!("generation_failed:{category}"));
            }
        }
    }
    candidates
}

/// Single candidate: taken directly, no reranker call. Multiple: the ranking
/// prompt is built without the target's gold caption, the reply is parsed as
/// a permutation (one repair re-prompt), and the chosen index resolves to the
/// stored candidate text, so the reranker cannot introduce new captions.
pub fn select_candidate(
    record: &PaperRecord,
    candidates: &[CaptionCandidate],
    ctx: &PipelineContext,
    paragraph: &str,
    trail: &mut AuditTrail,
) -> (CaptionCandidate, RerankDecision) {
    assert!(!candidates.is_empty(), "select_candidate needs at least one candidate");
    let n = candidates.len();
    if n == 1 {
        let mut selected = candidates[0].clone();
        selected.stage = Stage::Selected;
        trail.push(AuditEvent::Selection {
            chosen_index: 0,
            category: selected.category.clone(),
            rerank_called: false,
        });
        let decision = RerankDecision {
            ordered_candidate_ids: vec![0],
            justification: "single category; caption taken directly".into(),
            chosen: 0,
            fallback: false,
        };
        return (selected, decision);
    }

    let texts: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
    let prompt = build_rerank_prompt(&ctx.cfg.rerank_template, &record.target, paragraph, &texts);

    let mut decision: Option<RerankDecision> = None;
    for (repair, purpose) in [(false, "rerank"), (true, "rerank_repair")] {
        let full_prompt = if repair {
            format!(
                "{prompt}\n\nYour previous reply was not a valid ranking. Reply with a permutation of 1..{n} as comma-separated numbers on the first line."
            )
        } else {
            prompt.clone()
        };
        let req = ctx.request(full_prompt.clone(), &record.paper_id, purpose);
        match ctx.reranker.complete(&req) {
            Ok(resp) => {
                let parsed = parse_ranking(&resp.text, n);
                trail.push(AuditEvent::Rerank {
                    prompt: full_prompt,
                    response: Some(resp.text.clone()),
                    parsed_order: parsed.clone(),
                    repair,
                    fallback: false,
                    error: None,
                });
                if let Some(order) = parsed {
                    decision = Some(RerankDecision {
                        chosen: order[0],
                        ordered_candidate_ids: order,
                        justification: resp.text,
                        fallback: false,
                    });
                    break;
                }
            }
            Err(e) => {
                trail.push(AuditEvent::Rerank {
                    prompt: full_prompt,
                    response: None,
                    parsed_order: None,
                    repair,
                    fallback: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let decision = decision.unwrap_or_else(|| {
        trail.flag("rerank_fallback");
        RerankDecision {
            ordered_candidate_ids: (0..n).collect(),
            justification: "fallback: candidates kept in input order".into(),
            chosen: 0,
            fallback: true,
        }
    });

    let mut selected = candidates[decision.chosen].clone();
    selected.stage = Stage::Selected;
    trail.push(AuditEvent::Selection {
        chosen_index: decision.chosen,
        category: selected.category.clone(),
        rerank_called: true,
    });
    (selected, decision)
}

/// Target length: the record's hint, else the mean token length of profile
/// gold captions, else the selected caption's own length (degenerate: the
/// window then always passes, which is flagged by the caller).
pub fn length_window(record: &PaperRecord, selected_text: &str) -> (LengthWindow, bool) {
    if let Some(hint) = record.target.caption_len_hint {
        return (LengthWindow::new(hint as usize), false);
    }
    let profile_lens: Vec<usize> = record
        .profiles
        .iter()
        .filter_map(|p| p.gold_caption.as_deref())
        .map(token_count)
        .collect();
    if !profile_lens.is_empty() {
        let mean = profile_lens.iter().sum::<usize>() as f64 / profile_lens.len() as f64;
        return (LengthWindow::new(mean.round() as usize), false);
    }
    (LengthWindow::new(token_count(selected_text)), true)
}

/// Stage 2: style-only rewrite with up to three profile demos, re-prompted
/// with an explicit length complaint while out of window. Keeps the best
/// attempt by window distance; flags `length_violation` when none fits and
/// `unrefined` when the backend gave nothing usable.
pub fn refine_caption(
    record: &PaperRecord,
    selected: &CaptionCandidate,
    ctx: &PipelineContext,
    trail: &mut AuditTrail,
) -> CaptionCandidate {
    let (window, degenerate) = length_window(record, &selected.text);
    if degenerate {
        trail.flag("degenerate_length_window");
    }
    let demos: Vec<(String, String, String)> = record
        .profiles
        .iter()
        .filter_map(|p| {
            p.gold_caption
                .clone()
                .map(|gold| (p.mention.clone(), p.paragraph.clone(), gold))
        })
        .take(3)
        .collect();

    let base_prompt = build_refine_prompt(
        &ctx.cfg.refine_template,
        &demos,
        &record.target,
        &selected.text,
        window.target_len,
        window.lower,
        window.upper,
    );

    let mut best: Option<(String, usize)> = None;
    let mut last_tokens: Option<usize> = None;
    for attempt in 0..=ctx.cfg.t_retry {
        let prompt = match last_tokens {
            Some(n) => format!(
                "{base_prompt}\n\nThe previous attempt had {n} tokens; produce between {} and {} tokens.",
                window.lower, window.upper
            ),
            None => base_prompt.clone(),
        };
        let req = ctx.request(prompt.clone(), &record.paper_id, &format!("refine:{attempt}"));
        match ctx.generator.complete(&req) {
            Ok(resp) => {
                let text = resp.text.trim().to_string();
                let tokens = token_count(&text);
                let in_window = window.contains(tokens);
                trail.push(AuditEvent::RefineAttempt {
                    attempt,
                    prompt,
                    response: Some(text.clone()),
                    token_count: Some(tokens),
                    in_window: Some(in_window),
                    error: if text.is_empty() { Some("empty refinement".into()) } else { None },
                });
                if text.is_empty() {
                    continue;
                }
                let dist = window.distance(tokens);
                if best.as_ref().is_none_or(|(_, d)| dist < *d) {
                    best = Some((text, dist));
                }
                if in_window {
                    break;
                }
                last_tokens = Some(tokens);
            }
            Err(e) => {
                trail.push(AuditEvent::RefineAttempt {
                    attempt,
                    prompt,
                    response: None,
                    token_count: None,
                    in_window: None,
                    error: Some(e.to_string()),
                });
                break;
            }
        }
    }

    let text = match best {
        Some((text, dist)) => {
            if dist > 0 {
                trail.flag("length_violation");
            }
            text
        }
        None => {
            trail.flag("unrefined");
            selected.text.clone()
        }
    };

    CaptionCandidate {
        paper_id: selected.paper_id.clone(),
        category: selected.category.clone(),
        text,
        stage: Stage::Refined,
        template_version: selected.template_version,
        model_id: ctx.generator.model_id().to_string(),
    }
}

/// Full per-record run. Stage failures degrade per the per-op contracts; a
/// record never aborts the batch.
pub fn run_record(record: &PaperRecord, ctx: &PipelineContext) -> RecordOutcome {
    let mut trail = AuditTrail::new(record.paper_id.clone(), ctx.generator.model_id());

    let paragraph = if ctx.cfg.filtered_inference {
        match ctx.scorer {
            Some(scorer) => match filter_paragraph(&record.target, &ctx.filter_cfg, scorer) {
                Ok(outcome) => {
                    trail.push(AuditEvent::Filter {
                        retained_chunks: outcome.scores.iter().filter(|s| s.retained).count(),
                        total_chunks: outcome.scores.len(),
                        error: None,
                    });
                    outcome.text
                }
                Err(e) => {
                    trail.push(AuditEvent::Filter {
                        retained_chunks: 0,
                        total_chunks: 0,
                        error: Some(e.to_string()),
                    });
                    trail.flag("filter_error");
                    record.target.paragraph.clone()
                }
            },
            None => {
                trail.flag("filter_unavailable");
                record.target.paragraph.clone()
            }
        }
    } else {
        record.target.paragraph.clone()
    };

    let candidates = generate_candidates(record, ctx, &paragraph, &mut trail);
    if candidates.is_empty() {
        trail.flag("record_failed");
        return RecordOutcome {
            paper_id: record.paper_id.clone(),
            final_caption: None,
            candidates,
            selected: None,
            refined: None,
            decision: None,
            trail,
        };
    }

    let (selected, decision) = select_candidate(record, &candidates, ctx, &paragraph, &mut trail);

    let (refined, final_caption) = if ctx.cfg.stage1_only {
        (None, selected.clone())
    } else {
        let refined = refine_caption(record, &selected, ctx, &mut trail);
        (Some(refined.clone()), refined)
    };

    RecordOutcome {
        paper_id: record.paper_id.clone(),
        final_caption: Some(final_caption),
        candidates,
        selected: Some(selected),
        refined,
        decision: Some(decision),
        trail,
    }
}

/// Worker-pool batch run; outcomes come back in input order regardless of
/// scheduling, and per-record determinism holds because every request seed
/// derives from (run seed, paper id, stage), never from call order.
pub fn run_batch(records: &[PaperRecord], ctx: &PipelineContext, workers: usize) -> Vec<RecordOutcome> {
    let workers = workers.max(1).min(records.len().max(1));
    if workers == 1 {
        return records.iter().map(|r| run_record(r, ctx)).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<RecordOutcome>>> =
        records.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= records.len() {
                    break;
                }
                let outcome = run_record(&records[idx], ctx);
                *slots[idx].lock().unwrap() = Some(outcome);
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every record processed"))
        .collect()
}
