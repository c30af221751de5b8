//! Two-stage scientific figure caption generation with a built-in
//! evaluation harness.
//!
//! Stage 1 produces content-grounded caption candidates: the target
//! paragraph can be relevance-filtered against the figure's mention text,
//! one candidate is generated per paper category from a category-focused
//! prompt template, and an LLM reranker picks the best candidate for
//! multi-category papers. Stage 2 rewrites the selected caption toward the
//! paper's own style using profile figures as exemplars, under a ±15% token
//! length window.
//!
//! The harness side is self-contained: BLEU-1..4 and ROUGE-1/2/L from
//! scratch over a shared tokenizer, macro-averaged per condition, with
//! percent-delta tables against a named baseline.

pub mod cli;
pub mod corpus;
pub mod filter;
pub mod llm;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod prompts;
pub mod report;
