//! Shared fixture builders for the integration suites.

use figcap_core::corpus::{FigureContext, PaperRecord, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 18] = [
    "accuracy", "loss", "epoch", "model", "curve", "baseline", "spectrum", "network", "signal",
    "layers", "attention", "graph", "node", "edge", "flow", "variance", "gradient", "sample",
];

pub fn caption(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn figure(rng: &mut ChaCha8Rng, figure_id: &str, gold: Option<String>) -> FigureContext {
    let hint = gold.as_deref().map(|g| g.split_whitespace().count() as u32);
    FigureContext {
        figure_id: figure_id.to_string(),
        mention: format!("Figure shows {}.", caption(rng, 5)),
        paragraph: "The first sentence explains setup. The second gives results. See Fig. 2 for details. A third closes."
            .to_string(),
        ocr: vec![caption(rng, 2), caption(rng, 1)],
        figure_type: ["plot", "diagram", "table"][rng.gen_range(0..3)].to_string(),
        caption_len_hint: hint,
        gold_caption: gold,
    }
}

/// A deterministic synthetic corpus: `n` records over three categories, with
/// 1..=3 categories per record cycling, gold captions and hints everywhere.
pub fn synthetic_corpus(seed: u64, n: usize, split: Split) -> Vec<PaperRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats = ["cs.CV", "cs.LG", "stat.ML"];
    (0..n)
        .map(|i| {
            let n_cats = 1 + i % 3;
            let categories: Vec<String> = (0..n_cats).map(|k| cats[(i + k) % 3].to_string()).collect();
            let gold = caption(&mut rng, 6 + i % 7);
            let n_profiles = i % 4;
            let profiles = (0..n_profiles)
                .map(|j| {
                    let g = caption(&mut rng, 8);
                    figure(&mut rng, &format!("r{i:03}-p{j}"), Some(g))
                })
                .collect();
            PaperRecord {
                paper_id: format!("r{i:03}"),
                categories,
                split,
                target: figure(&mut rng, &format!("r{i:03}-t"), Some(gold)),
                profiles,
            }
        })
        .collect()
}

pub fn to_jsonl(records: &[PaperRecord]) -> String {
    figcap_core::corpus::to_jsonl(records)
}
