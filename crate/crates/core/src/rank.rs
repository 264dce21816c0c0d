//! Deterministic ranking shared by every retrieval path: score descending,
//! ties broken by ascending id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f32,
}

impl Scored {
    pub fn new(id: impl Into<String>, score: f32) -> Self {
        Self { id: id.into(), score }
    }
}

pub fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Sorts by [`rank_order`] and keeps the first `k`.
pub fn rank_top_k(mut items: Vec<Scored>, k: usize) -> Vec<Scored> {
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, rank_order);
        items.truncate(k);
    }
    items.sort_unstable_by(rank_order);
    items
}

/// Drops everything scoring below `threshold`, then keeps the top `k`.
pub fn threshold_top_k(items: Vec<Scored>, threshold: f32, k: usize) -> Vec<Scored> {
    let kept = items.into_iter().filter(|s| s.score >= threshold).collect();
    rank_top_k(kept, k)
}
