//! Prompt assembly shared by the optimizer and the pipeline.
//!
//! The ranking and refinement templates live as editable text files with
//! `{placeholder}` substitution; the compiled-in copies are the defaults and
//! custom files can be supplied through the run configuration.

use crate::corpus::FigureContext;
use crate::optimizer::PromptTemplate;

pub const GENERAL_INSTRUCTION: &str = include_str!("../prompts/general_instruction.txt");
pub const RERANK_TEMPLATE: &str = include_str!("../prompts/rerank.txt");
pub const REFINE_TEMPLATE: &str = include_str!("../prompts/refine.txt");
pub const PROPOSE_TEMPLATE: &str = include_str!("../prompts/propose_instruction.txt");
pub const RULE_TEMPLATE: &str = include_str!("../prompts/improvement_rule.txt");

/// Appended to generation prompts when a reasoning trace is wanted; only the
/// text after the final marker is kept.
pub const REASONING_SUFFIX: &str =
    "\nThink step by step about what the figure shows, then give the final caption on a line starting with \"Caption:\".";

const CAPTION_MARKER: &str = "Caption:";

/// The target-context block shared by generation and ranking prompts. The
/// gold caption is structurally excluded: only mention, paragraph, OCR, and
/// figure type ever enter.
pub fn context_block(fc: &FigureContext, paragraph: &str) -> String {
    format!(
        "Type: {}\nMention: {}\nParagraph: {}\nOCR: {}",
        fc.figure_type,
        fc.mention,
        paragraph,
        fc.ocr.join(" | ")
    )
}

/// Compact one-line context summary used for stored demonstrations.
pub fn summarize_context(fc: &FigureContext) -> String {
    let mut summary = format!("[{}] {}", fc.figure_type, fc.mention);
    if !fc.ocr.is_empty() {
        summary.push_str(&format!(" (OCR: {})", fc.ocr.join(", ")));
    }
    truncate_chars(&summary, 240)
}

fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let mut out: String = s.chars().take(max).collect();
        out.push_str("...");
        out
    }
}

/// Full caption-generation prompt: instruction, accepted rules, bootstrap
/// demonstrations, then the target context.
pub fn build_generation_prompt(template: &PromptTemplate, fc: &FigureContext, paragraph: &str) -> String {
    let mut prompt = String::new();
    prompt.push_str(template.instruction.trim());
    prompt.push('\n');
    if !template.rules.is_empty() {
        prompt.push_str("\nRules:\n");
        for rule in &template.rules {
            prompt.push_str(&format!("- {rule}\n"));
        }
    }
    if !template.demos.is_empty() {
        prompt.push_str("\nExamples:\n");
        for demo in &template.demos {
            prompt.push_str(&format!("Input: {}\nCaption: {}\n\n", demo.input_summary, demo.caption));
        }
    }
    prompt.push_str(&format!(
        "\nCategory: {}\n{}\n\nCaption:",
        template.category,
        context_block(fc, paragraph)
    ));
    prompt
}

/// Generation prompt variant that asks for a visible reasoning trace.
pub fn build_reasoning_prompt(template: &PromptTemplate, fc: &FigureContext, paragraph: &str) -> String {
    let base = build_generation_prompt(template, fc, paragraph);
    let trimmed = base.strip_suffix("\n\nCaption:").unwrap_or(&base);
    format!("{trimmed}{REASONING_SUFFIX}")
}

/// Strip a reasoning trace: keep only the text after the last "Caption:"
/// marker, or the whole trimmed response when no marker is present.
pub fn extract_final_caption(text: &str) -> String {
    match text.rfind(CAPTION_MARKER) {
        Some(idx) => text[idx + CAPTION_MARKER.len()..].trim().to_string(),
        None => text.trim().to_string(),
    }
}

/// Ranking prompt: context block, numbered caption list, rank instruction.
pub fn build_rerank_prompt(
    template_text: &str,
    fc: &FigureContext,
    paragraph: &str,
    captions: &[String],
) -> String {
    let listed = captions
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Cap. {}: {}", i + 1, c))
        .collect::<Vec<_>>()
        .join("\n");
    template_text
        .replace("{type}", &fc.figure_type)
        .replace("{mention}", &fc.mention)
        .replace("{paragraph}", paragraph)
        .replace("{ocr}", &fc.ocr.join(" | "))
        .replace("{captions}", &listed)
}

/// Refinement prompt: style rules, up to three profile demos, the target
/// block with the initial caption and the token window.
pub fn build_refine_prompt(
    template_text: &str,
    demos: &[(String, String, String)],
    fc: &FigureContext,
    initial: &str,
    target_len: usize,
    lower: usize,
    upper: usize,
) -> String {
    let mut demo_block = String::new();
    if !demos.is_empty() {
        demo_block.push_str("Demos:\n");
        for (mention, paragraph, caption) in demos {
            demo_block.push_str(&format!(
                "Mention: {mention}\nParagraph: {paragraph}\nRefined caption: {caption}\n\n"
            ));
        }
    }
    template_text
        .replace("{demos}", &demo_block)
        .replace("{mention}", &fc.mention)
        .replace("{paragraph}", &fc.paragraph)
        .replace("{initial}", initial)
        .replace("{length}", &target_len.to_string())
        .replace("{lower}", &lower.to_string())
        .replace("{upper}", &upper.to_string())
}

/// Parse the reranker's reply into a 0-based permutation of `n` candidates.
/// The integers are read from the first line containing any digit; anything
/// that is not a true permutation of 1..=n is rejected.
pub fn parse_ranking(text: &str, n: usize) -> Option<Vec<usize>> {
    let line = text.lines().find(|l| l.chars().any(|c| c.is_ascii_digit()))?;
    let ids: Vec<usize> = line
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().ok())
        .collect::<Option<Vec<_>>>()?;
    if ids.len() != n {
        return None;
    }
    let mut seen = vec![false; n];
    for &id in &ids {
        if id == 0 || id > n || seen[id - 1] {
            return None;
        }
        seen[id - 1] = true;
    }
    Some(ids.iter().map(|&id| id - 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Demo;

    fn fc() -> FigureContext {
        FigureContext {
            figure_id: "f1".into(),
            mention: "Figure 1 shows accuracy.".into(),
            paragraph: "We measure accuracy. It grows.".into(),
            ocr: vec!["acc".into(), "epoch".into()],
            figure_type: "plot".into(),
            caption_len_hint: Some(4),
            gold_caption: Some("accuracy versus training epoch".into()),
        }
    }

    fn template() -> PromptTemplate {
        PromptTemplate {
            category: "cs.LG".into(),
            instruction: "Caption the figure.".into(),
            demos: vec![Demo { input_summary: "[plot] demo mention".into(), caption: "a demo caption".into() }],
            rules: vec!["Mention the axes.".into()],
            version: 2,
            score: None,
            fallback: false,
            config_hash: String::new(),
        }
    }

    #[test]
    fn generation_prompt_contains_template_parts_and_context() {
        let prompt = build_generation_prompt(&template(), &fc(), "filtered paragraph only.");
        assert!(prompt.contains("Caption the figure."));
        assert!(prompt.contains("- Mention the axes."));
        assert!(prompt.contains("a demo caption"));
        assert!(prompt.contains("Category: cs.LG"));
        assert!(prompt.contains("Paragraph: filtered paragraph only."));
        assert!(prompt.contains("OCR: acc | epoch"));
        // the target's gold caption never enters a generation prompt
        assert!(!prompt.contains("accuracy versus training epoch"));
        assert!(prompt.ends_with("Caption:"));
    }

    #[test]
    fn reasoning_prompt_and_caption_extraction() {
        let prompt = build_reasoning_prompt(&template(), &fc(), "p");
        assert!(prompt.ends_with("\"Caption:\"."));
        assert_eq!(
            extract_final_caption("The plot rises.\nCaption: accuracy curve over epochs"),
            "accuracy curve over epochs"
        );
        assert_eq!(extract_final_caption("  plain caption  "), "plain caption");
    }

    #[test]
    fn rerank_prompt_numbers_candidates() {
        let captions = vec!["first".to_string(), "second".to_string()];
        let prompt = build_rerank_prompt(RERANK_TEMPLATE, &fc(), "para", &captions);
        assert!(prompt.contains("Cap. 1: first"));
        assert!(prompt.contains("Cap. 2: second"));
        assert!(prompt.contains("Rank best to worst"));
        assert!(!prompt.contains("accuracy versus training epoch"));
    }

    #[test]
    fn refine_prompt_with_and_without_demos() {
        let demos = vec![("m1".to_string(), "p1".to_string(), "c1".to_string())];
        let with = build_refine_prompt(REFINE_TEMPLATE, &demos, &fc(), "initial text", 10, 9, 12);
        assert!(with.contains("Demos:"));
        assert!(with.contains("Refined caption: c1"));
        assert!(with.contains("Initial: initial text"));
        assert!(with.contains("stay between 9 and 12"));

        let without = build_refine_prompt(REFINE_TEMPLATE, &[], &fc(), "x", 5, 4, 6);
        assert!(!without.contains("Demos:"));
        assert!(without.contains("Target:"));
    }

    #[test]
    fn ranking_parser_accepts_permutations_only() {
        assert_eq!(parse_ranking("2,1,3", 3), Some(vec![1, 0, 2]));
        assert_eq!(parse_ranking("Ranking: 2, 1, 3\nCap. 2 is clearest.", 3), Some(vec![1, 0, 2]));
        assert_eq!(parse_ranking("2,2", 2), None);
        assert_eq!(parse_ranking("1,2,3", 2), None);
        assert_eq!(parse_ranking("0,1", 2), None);
        assert_eq!(parse_ranking("no numbers here", 2), None);
        assert_eq!(parse_ranking("1", 1), Some(vec![0]));
    }
}
