use serde::{Deserialize, Serialize};

use super::UnitScore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub unit_id: u64,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// The `k` highest-scoring units, ties broken by ascending unit id. Returns
/// every unit when `k` exceeds the population.
pub fn select_targets(scores: &[UnitScore], k: usize) -> Vec<Target> {
    let mut sorted: Vec<UnitScore> = scores.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.unit_id.cmp(&b.unit_id)));
    sorted
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, s)| Target {
            unit_id: s.unit_id,
            score: s.score,
            rank: i + 1,
        })
        .collect()
}
