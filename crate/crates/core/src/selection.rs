//! Potentially-optimal rectangle selection.
//!
//! Rects are grouped by size `σ`. Inside a group each rect gets a score: the
//! width of the interval of Lipschitz constants for which its lower bound
//! `ℓ(c) - Kσ` beats every other rect's. Up to `α` positive-score rects per
//! group become candidates, and each candidate must also promise a relative
//! improvement of at least `τ` over the incumbent.

use std::collections::BTreeMap;

use crate::partition::{third_pow, Partition};

/// Live rects bucketed by minimum depth (smaller key = larger σ).
#[derive(Clone, Debug, Default)]
pub struct SizeGroups {
    groups: BTreeMap<u32, Vec<(usize, f64)>>,
}

/// Slope bracket of one rect against all other size groups.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeBracket {
    /// `min_{σ_q > σ_p} (ℓ_q - ℓ_p) / (σ_q - σ_p)`, `+∞` when no larger rect.
    pub upper: f64,
    /// `max(0, max_{σ_q < σ_p} (ℓ_p - ℓ_q) / (σ_p - σ_q))`.
    pub lower: f64,
}

impl SlopeBracket {
    pub fn score(&self) -> f64 {
        self.upper - self.lower
    }
}

pub fn size_of_key(key: u32) -> f64 {
    0.5 * third_pow(key)
}

impl SizeGroups {
    pub fn from_partition(partition: &Partition) -> Self {
        let mut groups = BTreeMap::new();
        for (&key, ids) in partition.groups() {
            let entries: Vec<(usize, f64)> =
                ids.iter().map(|&id| (id, partition.rect(id).value)).collect();
            groups.insert(key, entries);
        }
        Self { groups }
    }

    /// Builds groups from `(id, min_depth, value)` triples.
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, u32, f64)>) -> Self {
        let mut groups: BTreeMap<u32, Vec<(usize, f64)>> = BTreeMap::new();
        for (id, key, value) in entries {
            groups.entry(key).or_default().push((id, value));
        }
        for g in groups.values_mut() {
            g.sort_by_key(|e| e.0);
        }
        Self { groups }
    }

    pub fn keys(&self) -> impl Iterator<Item = u32> + '_ {
        self.groups.keys().copied()
    }

    pub fn group(&self, key: u32) -> &[(usize, f64)] {
        self.groups.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Lowest centre value over all groups.
    pub fn best_value(&self) -> Option<f64> {
        self.groups
            .values()
            .flatten()
            .map(|e| e.1)
            .min_by(f64::total_cmp)
    }

    fn minima(&self) -> Vec<(u32, f64)> {
        self.groups
            .iter()
            .map(|(&k, g)| (k, g.iter().map(|e| e.1).fold(f64::INFINITY, f64::min)))
            .collect()
    }

    /// Slope bracket of a rect of group `key` with centre value `value`.
    ///
    /// Only each group's minimum matters: it attains the min over larger
    /// rects and the max over smaller ones.
    pub fn bracket(&self, key: u32, value: f64) -> SlopeBracket {
        bracket_from_minima(&self.minima(), key, value)
    }

    pub fn score(&self, key: u32, value: f64) -> f64 {
        self.bracket(key, value).score()
    }
}

fn bracket_from_minima(minima: &[(u32, f64)], key: u32, value: f64) -> SlopeBracket {
    let sigma = size_of_key(key);
    let mut upper = f64::INFINITY;
    let mut lower = 0.0f64;
    for &(k, m) in minima {
        let s = size_of_key(k);
        if k < key {
            upper = upper.min((m - value) / (s - sigma));
        } else if k > key {
            lower = lower.max((value - m) / (sigma - s));
        }
    }
    SlopeBracket { upper, lower }
}

/// Score of rect `id` in `groups`, or `None` if it is not present.
pub fn optimal_score(groups: &SizeGroups, id: usize) -> Option<f64> {
    groups.groups.iter().find_map(|(&key, g)| {
        g.iter()
            .find(|e| e.0 == id)
            .map(|&(_, value)| groups.score(key, value))
    })
}

/// Top-`alpha` rects of one size group by score.
///
/// `group` holds `(id, value)` and `scores` is aligned with it. Empty when no
/// score is positive. Ties: lower value, then lower id.
pub fn alpha_candidates(group: &[(usize, f64)], scores: &[f64], alpha: usize) -> Vec<usize> {
    debug_assert_eq!(group.len(), scores.len());
    let mut ranked: Vec<(f64, f64, usize)> = group
        .iter()
        .zip(scores)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&(id, v), &s)| (s, v, id))
        .collect();
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    ranked.into_iter().take(alpha).map(|r| r.2).collect()
}

/// Relative-improvement test against the incumbent `l_min`.
///
/// `upper` is the rect's smallest slope to a larger rect (`+∞` if none).
pub fn sufficient_descent(value: f64, size: f64, upper: f64, l_min: f64, tau: f64) -> bool {
    if upper == f64::INFINITY {
        return true;
    }
    if l_min != 0.0 {
        let a = l_min.abs();
        tau <= (l_min - value) / a + size / a * upper
    } else {
        value <= size * upper
    }
}

/// Potentially-optimal rects over all groups with minimum depth below
/// `max_depth`, ordered by group (largest first) then rank.
pub fn select_po(
    groups: &SizeGroups,
    alpha: usize,
    tau: f64,
    l_min: f64,
    max_depth: u32,
) -> Vec<usize> {
    let minima = groups.minima();
    let mut selected = Vec::new();
    for (&key, group) in groups.groups.range(..max_depth) {
        let brackets: Vec<SlopeBracket> = group
            .iter()
            .map(|&(_, v)| bracket_from_minima(&minima, key, v))
            .collect();
        let scores: Vec<f64> = brackets.iter().map(SlopeBracket::score).collect();
        let sigma = size_of_key(key);
        for id in alpha_candidates(group, &scores, alpha) {
            let j = group.iter().position(|e| e.0 == id).expect("candidate from group");
            if sufficient_descent(group[j].1, sigma, brackets[j].upper, l_min, tau) {
                selected.push(id);
            }
        }
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;

    /// (σ=1/2, ℓ=5), (σ=1/6, ℓ=3), (σ=1/18, ℓ=4) as ids 0, 1, 2.
    fn three() -> SizeGroups {
        SizeGroups::from_entries([(0, 0, 5.0), (1, 1, 3.0), (2, 2, 4.0)])
    }

    #[test]
    fn single_rect_scores_infinite() {
        let g = SizeGroups::from_entries([(0, 0, 1.0)]);
        assert_eq!(optimal_score(&g, 0), Some(f64::INFINITY));
    }

    #[test]
    fn three_rect_scores() {
        let g = three();
        let s = optimal_score(&g, 1).unwrap();
        assert!((s - 6.0).abs() < 1e-12, "{s}");
        assert_eq!(optimal_score(&g, 0), Some(f64::INFINITY));
    }

    #[test]
    fn candidates_rank_positive_scores() {
        let group = [(4, 0.0), (7, 0.0), (9, 0.0)];
        assert_eq!(alpha_candidates(&group, &[2.0, -1.0, 0.5], 2), vec![4, 9]);
        assert!(alpha_candidates(&group, &[0.0, -1.0, -0.5], 2).is_empty());
    }

    #[test]
    fn alpha_one_picks_group_minimum() {
        // Same-size rects: the lowest value has the highest score.
        let g = SizeGroups::from_entries([(0, 0, 9.0), (1, 1, 2.0), (2, 1, 1.5), (3, 1, 3.0)]);
        assert_eq!(select_po(&g, 1, 1e-4, 1.5, 10), vec![0, 2]);
    }

    #[test]
    fn descent_conditions() {
        assert!(sufficient_descent(10.0, 0.5, f64::INFINITY, -3.0, 1e-4));
        assert!(sufficient_descent(-1.0, 1.0 / 6.0, 6.0, -1.0, 1e-4));
        assert!(!sufficient_descent(0.2, 1.0 / 6.0, 0.6, 0.0, 1e-4));
    }

    #[test]
    fn select_after_init() {
        let g = SizeGroups::from_entries([(0, 0, 0.7)]);
        assert_eq!(select_po(&g, 1, 1e-4, 0.7, 4), vec![0]);
    }

    #[test]
    fn select_three_rect_configuration() {
        // Middle rect: τ ≤ (3 - 3)/3 + (1/6)/3 · 6 = 1/3, so it passes.
        let g = three();
        assert_eq!(select_po(&g, 1, 1e-4, 3.0, 10), vec![0, 1]);
    }

    #[test]
    fn exhausted_groups_are_skipped() {
        let g = SizeGroups::from_entries([(0, 3, 1.0), (1, 3, 2.0)]);
        assert!(select_po(&g, 2, 1e-4, 1.0, 3).is_empty());
    }
}
