//! Sequential model-based search over the (instruction, demo-set) grid.
//!
//! Each cell keeps a Gaussian posterior summarized by its running mean; the
//! next trial goes to the cell with the highest upper-confidence bound, after
//! an initial sweep that visits every cell once while budget allows. Ties
//! break toward the lower cell index, so a flat landscape returns (0, 0).

use serde::{Deserialize, Serialize};

const UCB_EXPLORATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub instruction_id: usize,
    pub demo_set_id: usize,
    /// (trial id, minibatch score) pairs observed for this cell.
    pub observed_scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub config: CandidateConfig,
    /// Posterior mean of the returned cell; absent when it was never
    /// evaluated (zero budget or total eval failure).
    pub posterior_mean: Option<f64>,
    pub trials_run: usize,
    pub failures: usize,
}

/// Run the bandit for `budget` successful trials. Failed evaluations are
/// discarded without consuming budget, up to a retry cap of `budget`
/// additional attempts.
pub fn surrogate_search<F>(
    n_instructions: usize,
    n_demo_sets: usize,
    mut eval_fn: F,
    budget: usize,
) -> SearchOutcome
where
    F: FnMut(usize, usize, usize) -> Result<f64, String>,
{
    let n_cells = n_instructions.max(1) * n_demo_sets.max(1);
    let mut counts = vec![0u32; n_cells];
    let mut means = vec![0.0f64; n_cells];
    let mut observed: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_cells];

    let retry_cap = budget.max(1);
    let mut failures = 0usize;
    let mut completed = 0usize;

    while completed < budget {
        let cell = match (0..n_cells).find(|&c| counts[c] == 0) {
            Some(unvisited) => unvisited,
            None => {
                let t = (completed as f64) + 1.0;
                let mut best = 0usize;
                let mut best_ucb = f64::NEG_INFINITY;
                for c in 0..n_cells {
                    let bonus = UCB_EXPLORATION * (t.ln().max(0.0) / counts[c] as f64).sqrt();
                    let ucb = means[c] + bonus;
                    if ucb > best_ucb {
                        best_ucb = ucb;
                        best = c;
                    }
                }
                best
            }
        };
        let instruction_id = cell / n_demo_sets.max(1);
        let demo_set_id = cell % n_demo_sets.max(1);
        match eval_fn(instruction_id, demo_set_id, completed) {
            Ok(score) => {
                counts[cell] += 1;
                means[cell] += (score - means[cell]) / counts[cell] as f64;
                observed[cell].push((completed, score));
                completed += 1;
            }
            Err(_) => {
                failures += 1;
                if failures > retry_cap {
                    break;
                }
            }
        }
    }

    let best_cell = (0..n_cells)
        .filter(|&c| counts[c] > 0)
        .max_by(|&a, &b| means[a].partial_cmp(&means[b]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    // max_by keeps the last maximum; rescan for the lowest index at that mean
    let best_cell = if counts[best_cell] > 0 {
        let best_mean = means[best_cell];
        (0..n_cells)
            .find(|&c| counts[c] > 0 && means[c] >= best_mean)
            .unwrap_or(best_cell)
    } else {
        0
    };

    SearchOutcome {
        config: CandidateConfig {
            instruction_id: best_cell / n_demo_sets.max(1),
            demo_set_id: best_cell % n_demo_sets.max(1),
            observed_scores: observed[best_cell].clone(),
        },
        posterior_mean: if counts[best_cell] > 0 { Some(means[best_cell]) } else { None },
        trials_run: completed,
        failures,
    }
}
