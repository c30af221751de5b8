//! Category-level prompt template search: bootstrap demonstrations, propose
//! instruction variants, pick the best (instruction, demo-set) cell with a
//! surrogate-guided bandit, then mine feedback rules that must not hurt the
//! minibatch score.

mod simba;
mod store;
mod surrogate;

pub use simba::{simba_refine, FeedbackRule, SimbaOutcome};
pub use store::{TemplateSet, TemplateStore};
pub use surrogate::{surrogate_search, CandidateConfig, SearchOutcome};

use crate::corpus::{FigureContext, PaperRecord};
use crate::filter::{filter_paragraph, FilterConfig};
use crate::llm::{derive_seed, LikelihoodScorer, LlmBackend, LlmRequest};
use crate::metrics::{rouge_l, tokenize};
use crate::prompts::{
    build_generation_prompt, extract_final_caption, summarize_context, GENERAL_INSTRUCTION,
    PROPOSE_TEMPLATE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Knobs for one category optimization run. The defaults are desk-scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptBudget {
    pub k_demos: usize,
    pub m_instructions: usize,
    pub minibatch: usize,
    pub trials: usize,
    pub simba_iterations: usize,
    pub r_max: usize,
    pub keep_threshold: f64,
    pub n_min: usize,
    pub seed: u64,
}

impl Default for OptBudget {
    fn default() -> Self {
        OptBudget {
            k_demos: 3,
            m_instructions: 8,
            minibatch: 16,
            trials: 40,
            simba_iterations: 8,
            r_max: 5,
            keep_threshold: 0.5,
            n_min: 20,
            seed: 0,
        }
    }
}

/// A stored demonstration: context summary plus the caption that scored well.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub input_summary: String,
    pub caption: String,
}

/// The optimizer's product: one prompt template per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub category: String,
    pub instruction: String,
    pub demos: Vec<Demo>,
    pub rules: Vec<String>,
    pub version: u32,
    pub score: Option<f64>,
    pub fallback: bool,
    pub config_hash: String,
}

impl PromptTemplate {
    /// The general template every category falls back to.
    pub fn general(category: &str) -> Self {
        PromptTemplate {
            category: category.to_string(),
            instruction: GENERAL_INSTRUCTION.trim().to_string(),
            demos: Vec::new(),
            rules: Vec::new(),
            version: 1,
            score: None,
            fallback: false,
            config_hash: String::new(),
        }
    }
}

/// One training input: the figure context (paragraph already filtered) and
/// its gold caption.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub paper_id: String,
    pub fc: FigureContext,
    pub gold: String,
}

/// The optimization objective: ROUGE-L precision of a caption against gold.
pub fn objective(candidate: &str, gold: &str) -> f64 {
    rouge_l(&tokenize(candidate), &tokenize(gold)).precision
}

/// Run the template over sampled training records, keep generations whose
/// ROUGE-L precision exceeds the keep threshold, and group them into demo
/// sets of at most `k`.
pub fn bootstrap_demos(
    examples: &[TrainExample],
    template: &PromptTemplate,
    generator: &dyn LlmBackend,
    k: usize,
    keep_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<Demo>>, Vec<String>) {
    let mut warnings = Vec::new();
    if examples.is_empty() {
        warnings.push("no training examples to bootstrap from".to_string());
        return (Vec::new(), warnings);
    }
    let k = k.max(1);
    let sample_size = examples.len().min(k * 4);
    let picked = rand::seq::index::sample(rng, examples.len(), sample_size);

    let mut kept = Vec::new();
    for idx in picked.iter() {
        let ex = &examples[idx];
        let prompt = build_generation_prompt(template, &ex.fc, &ex.fc.paragraph);
        match generator.complete(&LlmRequest::new(prompt)) {
            Ok(resp) => {
                let caption = extract_final_caption(&resp.text);
                if caption.is_empty() {
                    continue;
                }
                if objective(&caption, &ex.gold) > keep_threshold {
                    kept.push(Demo { input_summary: summarize_context(&ex.fc), caption });
                }
            }
            Err(e) => {
                warnings.push(format!("bootstrap generation failed for {}: {e}", ex.paper_id));
            }
        }
    }

    if kept.is_empty() {
        warnings.push("no demonstrations passed the keep threshold".to_string());
        return (Vec::new(), warnings);
    }
    if kept.len() < k {
        warnings.push(format!("only {} demonstrations kept, below the demo-set size {k}", kept.len()));
    }
    let sets = kept.chunks(k).map(|c| c.to_vec()).collect();
    (sets, warnings)
}

/// Ask the proposer for `m` distinct instruction variants. The seed
/// instruction is always candidate 0; duplicates are re-prompted away up to a
/// retry cap, and proposer failures degrade to fewer variants (minimum 1).
pub fn propose_instructions(
    seed_instruction: &str,
    context_summary: &str,
    proposer: &dyn LlmBackend,
    m: usize,
) -> Vec<String> {
    let mut out = vec![seed_instruction.trim().to_string()];
    let cap = m.saturating_mul(4).max(4);
    let mut attempts = 0usize;
    while out.len() < m && attempts < cap {
        attempts += 1;
        let prompt = PROPOSE_TEMPLATE
            .replace("{instruction}", seed_instruction)
            .replace("{context}", context_summary)
            .replace("{variant}", &attempts.to_string());
        if let Ok(resp) = proposer.complete(&LlmRequest::new(prompt)) {
            let text = resp.text.trim().to_string();
            if !text.is_empty() && !out.contains(&text) {
                out.push(text);
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub template: PromptTemplate,
    pub partial: bool,
    pub accepted_rules: Vec<FeedbackRule>,
    pub warnings: Vec<String>,
}

/// Full per-category run: filter training paragraphs, bootstrap demos,
/// propose instructions, surrogate-search the grid, SIMBA-refine, then score
/// on a held-out slice (the last 10% of the category's records).
pub fn optimize_category(
    category: &str,
    train: &[PaperRecord],
    backend: &dyn LlmBackend,
    scorer: &dyn LikelihoodScorer,
    filter_cfg: &FilterConfig,
    budget: &OptBudget,
) -> OptimizeOutcome {
    let mut warnings = Vec::new();
    let mut partial = false;
    let config_hash = budget_hash(category, budget);

    let mut examples = Vec::new();
    for record in train {
        let gold = match record.target.gold_caption.as_deref() {
            Some(g) if !g.trim().is_empty() => g.to_string(),
            _ => {
                warnings.push(format!("{}: target has no gold caption, skipped", record.paper_id));
                continue;
            }
        };
        let mut fc = record.target.clone();
        match filter_paragraph(&fc, filter_cfg, scorer) {
            Ok(outcome) => fc.paragraph = outcome.text,
            Err(e) => {
                warnings.push(format!("{}: paragraph filter failed ({e}), using raw text", record.paper_id));
                partial = true;
            }
        }
        examples.push(TrainExample { paper_id: record.paper_id.clone(), fc, gold });
    }

    if examples.len() < budget.n_min {
        warnings.push(format!(
            "category {category} has {} usable records, below n_min {}; general template returned",
            examples.len(),
            budget.n_min
        ));
        let mut template = PromptTemplate::general(category);
        template.fallback = true;
        template.config_hash = config_hash;
        return OptimizeOutcome { template, partial, accepted_rules: Vec::new(), warnings };
    }

    let n_held = (examples.len() / 10).max(1);
    let split_at = examples.len() - n_held;
    let (train_slice, heldout) = examples.split_at(split_at);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(budget.seed, &["optimize", category]));
    let general = PromptTemplate::general(category);

    let (pool, mut boot_warnings) =
        bootstrap_demos(train_slice, &general, backend, budget.k_demos, budget.keep_threshold, &mut rng);
    warnings.append(&mut boot_warnings);
    let mut demo_sets: Vec<Vec<Demo>> = vec![Vec::new()];
    demo_sets.extend(pool);

    let context_summary = {
        let mut types: Vec<&str> = train_slice.iter().map(|e| e.fc.figure_type.as_str()).collect();
        types.sort_unstable();
        types.dedup();
        format!(
            "category {category}; {} training examples; figure types: {}",
            train_slice.len(),
            types.into_iter().take(5).collect::<Vec<_>>().join(", ")
        )
    };
    let instructions =
        propose_instructions(&general.instruction, &context_summary, backend, budget.m_instructions);

    let eval_fn = |instruction_id: usize, demo_set_id: usize, trial: usize| -> Result<f64, String> {
        let mut trial_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            budget.seed,
            &["minibatch", category, &trial.to_string()],
        ));
        let batch = rand::seq::index::sample(
            &mut trial_rng,
            train_slice.len(),
            budget.minibatch.min(train_slice.len()),
        );
        let template = PromptTemplate {
            category: category.to_string(),
            instruction: instructions[instruction_id].clone(),
            demos: demo_sets[demo_set_id].clone(),
            rules: Vec::new(),
            version: 1,
            score: None,
            fallback: false,
            config_hash: String::new(),
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in batch.iter() {
            let ex = &train_slice[idx];
            let prompt = build_generation_prompt(&template, &ex.fc, &ex.fc.paragraph);
            let resp = backend.complete(&LlmRequest::new(prompt)).map_err(|e| e.to_string())?;
            total += objective(&extract_final_caption(&resp.text), &ex.gold);
            count += 1;
        }
        Ok(total / count.max(1) as f64)
    };

    let search = surrogate_search(instructions.len(), demo_sets.len(), eval_fn, budget.trials);
    if search.failures > 0 {
        warnings.push(format!("{} surrogate trials discarded after eval failures", search.failures));
    }
    if search.posterior_mean.is_none() && budget.trials > 0 {
        warnings.push("surrogate search produced no evaluated cell".to_string());
        partial = true;
    }

    let selected = PromptTemplate {
        category: category.to_string(),
        instruction: instructions[search.config.instruction_id].clone(),
        demos: demo_sets[search.config.demo_set_id].clone(),
        rules: Vec::new(),
        version: 1,
        score: None,
        fallback: false,
        config_hash: config_hash.clone(),
    };

    let simba = simba_refine(
        &selected,
        train_slice,
        backend,
        budget.simba_iterations,
        budget.minibatch,
        budget.r_max,
        &mut rng,
    );
    warnings.extend(simba.warnings);
    let mut template = simba.template;

    let mut holdout_scores = Vec::new();
    for ex in heldout {
        let prompt = build_generation_prompt(&template, &ex.fc, &ex.fc.paragraph);
        match backend.complete(&LlmRequest::new(prompt)) {
            Ok(resp) => holdout_scores.push(objective(&extract_final_caption(&resp.text), &ex.gold)),
            Err(e) => warnings.push(format!("{}: held-out generation failed: {e}", ex.paper_id)),
        }
    }
    if holdout_scores.is_empty() {
        warnings.push("no held-out record could be scored".to_string());
        partial = true;
        template.score = None;
    } else {
        template.score = Some(holdout_scores.iter().sum::<f64>() / holdout_scores.len() as f64);
    }
    template.config_hash = config_hash;

    OptimizeOutcome { template, partial, accepted_rules: simba.accepted, warnings }
}

fn budget_hash(category: &str, budget: &OptBudget) -> String {
    let raw = format!(
        "{category}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
        budget.k_demos,
        budget.m_instructions,
        budget.minibatch,
        budget.trials,
        budget.simba_iterations,
        budget.r_max,
        budget.keep_threshold,
        budget.n_min,
        budget.seed
    );
    format!("{:016x}", crate::llm::fnv1a(&[raw.as_bytes()]))
}
