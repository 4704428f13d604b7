//! Windowed co-visitation graph and recency-weighted candidate generation.

use std::collections::{HashMap, HashSet};

/// Neighbour lists sorted by count descending, then item id ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoVisGraph {
    adj: HashMap<i64, Vec<(i64, u32)>>,
}

impl CoVisGraph {
    pub fn neighbors(&self, item: i64) -> &[(i64, u32)] {
        self.adj.get(&item).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn weight(&self, a: i64, b: i64) -> u32 {
        self.neighbors(a).iter().find(|(n, _)| *n == b).map_or(0, |&(_, c)| c)
    }

    pub fn total_weight(&self) -> u64 {
        self.adj.values().flatten().map(|&(_, c)| c as u64).sum()
    }

    pub fn items(&self) -> impl Iterator<Item = i64> + '_ {
        self.adj.keys().copied()
    }
}

/// Count, over every history, each ordered pair of positions at distance
/// `1..=window`. The result is symmetric.
pub fn build_covis(histories: &[Vec<i64>], window: usize) -> CoVisGraph {
    let mut counts: HashMap<i64, HashMap<i64, u32>> = HashMap::new();
    for h in histories {
        for t in 0..h.len() {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(h.len() - 1);
            for j in lo..=hi {
                if j != t {
                    *counts.entry(h[t]).or_default().entry(h[j]).or_default() += 1;
                }
            }
        }
    }
    let adj = counts
        .into_iter()
        .map(|(item, row)| {
            let mut v: Vec<(i64, u32)> = row.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            (item, v)
        })
        .collect();
    CoVisGraph { adj }
}

/// Interaction counts, most popular first (ties by id).
pub fn popularity(histories: &[Vec<i64>]) -> Vec<(i64, u64)> {
    let mut counts: HashMap<i64, u64> = HashMap::new();
    for &i in histories.iter().flatten() {
        *counts.entry(i).or_default() += 1;
    }
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Score every graph neighbour of the last `recent` history items, the most
/// recent weighted 1, the next `decay`, then `decay^2` and so on. Items
/// already in the history are dropped.
pub fn recency_scores(history: &[i64], graph: &CoVisGraph, decay: f64, recent: usize) -> HashMap<i64, f64> {
    let seen: HashSet<i64> = history.iter().copied().collect();
    let mut scores: HashMap<i64, f64> = HashMap::new();
    for (rank, &r) in history.iter().rev().take(recent).enumerate() {
        let w = decay.powi(rank as i32);
        for &(c, count) in graph.neighbors(r) {
            if !seen.contains(&c) {
                *scores.entry(c).or_default() += w * count as f64;
            }
        }
    }
    scores
}

/// Top `k` items by recency score (ties by id), backfilled from `popular`
/// when the graph yields fewer than `k`.
pub fn candidates(
    history: &[i64],
    graph: &CoVisGraph,
    decay: f64,
    recent: usize,
    k: usize,
    popular: &[(i64, u64)],
) -> Vec<i64> {
    let mut scored: Vec<(i64, f64)> = recency_scores(history, graph, decay, recent)
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<i64> = scored.into_iter().take(k).map(|(c, _)| c).collect();
    if out.len() < k {
        let mut taken: HashSet<i64> = history.iter().chain(out.iter()).copied().collect();
        for &(item, _) in popular {
            if out.len() == k {
                break;
            }
            if taken.insert(item) {
                out.push(item);
            }
        }
    }
    out
}
