//! Weighted reciprocal rank fusion of the standard and agentic routes.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DocKind};
use crate::types::{RankedList, Scored};

pub const DEFAULT_K_RRF: f64 = 60.0;
pub const DEFAULT_W_AGENT: f64 = 2.0;
pub const DEFAULT_W_STD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteId {
    Standard,
    Agentic,
}

impl RouteId {
    pub fn as_str(self) -> &'static str {
        match self {
            RouteId::Standard => "standard",
            RouteId::Agentic => "agentic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRanking {
    pub route_id: RouteId,
    pub weight: f64,
    pub ranking: RankedList,
}

impl RouteRanking {
    pub fn new(route_id: RouteId, weight: f64, ranking: RankedList) -> Self {
        Self {
            route_id,
            weight,
            ranking,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("at least one route is required")]
    NoRoutes,
    #[error("k_rrf must be finite and positive (got {0})")]
    KRrf(f64),
    #[error("route {index} ({route}): weight must be finite and positive (got {weight})")]
    Weight { index: usize, route: &'static str, weight: f64 },
    #[error("route {index} ({route}): duplicate id {id}")]
    DuplicateId { index: usize, route: &'static str, id: String },
}

fn validate(routes: &[RouteRanking], k_rrf: f64) -> Result<(), FusionError> {
    if routes.is_empty() {
        return Err(FusionError::NoRoutes);
    }
    if !(k_rrf.is_finite() && k_rrf > 0.0) {
        return Err(FusionError::KRrf(k_rrf));
    }
    for (index, r) in routes.iter().enumerate() {
        if !(r.weight.is_finite() && r.weight > 0.0) {
            return Err(FusionError::Weight {
                index,
                route: r.route_id.as_str(),
                weight: r.weight,
            });
        }
        if let Some(id) = r.ranking.first_duplicate() {
            return Err(FusionError::DuplicateId {
                index,
                route: r.route_id.as_str(),
                id: id.to_owned(),
            });
        }
    }
    Ok(())
}

/// `score(d) = sum over routes containing d of weight / (k_rrf + rank)`,
/// ranks 1-based. Contributions are added in route order. Output is sorted
/// by descending score then id and cut to `top_n`.
pub fn fuse_rrf(routes: &[RouteRanking], k_rrf: f64, top_n: usize) -> Result<RankedList, FusionError> {
    validate(routes, k_rrf)?;
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for r in routes {
        for (i, id) in r.ranking.ids().enumerate() {
            *scores.entry(id).or_insert(0.0) += r.weight / (k_rrf + (i + 1) as f64);
        }
    }
    let items = scores.into_iter().map(|(id, s)| Scored::new(id, s)).collect();
    Ok(RankedList::from_unsorted(items, top_n))
}

/// Fuses each evidence kind separately. Documents unknown to the corpus are
/// dropped.
pub fn fuse_rrf_per_kind(
    routes: &[RouteRanking],
    corpus: &Corpus,
    k_rrf: f64,
    top_n: usize,
) -> Result<BTreeMap<DocKind, RankedList>, FusionError> {
    validate(routes, k_rrf)?;
    let mut out = BTreeMap::new();
    for kind in [DocKind::Statute, DocKind::Precedent] {
        let split: Vec<RouteRanking> = routes
            .iter()
            .map(|r| {
                let items = r
                    .ranking
                    .items
                    .iter()
                    .filter(|s| corpus.kind_of(&s.doc_id) == Some(kind))
                    .cloned()
                    .collect();
                RouteRanking::new(r.route_id, r.weight, RankedList::new(items))
            })
            .collect();
        let fused = fuse_rrf(&split, k_rrf, top_n)?;
        if !fused.is_empty() {
            out.insert(kind, fused);
        }
    }
    Ok(out)
}

/// Ranking fed to fusion by the agentic route: the selected ids in
/// selection order, then the rest of the pool in pool order. Scores are
/// descending integers so the list stays well-ordered.
pub fn agentic_ranking(selected: &[String], pool: &RankedList) -> RankedList {
    let mut ids: Vec<&str> = Vec::with_capacity(pool.len());
    for id in selected {
        if !ids.contains(&id.as_str()) {
            ids.push(id);
        }
    }
    for id in pool.ids() {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let n = ids.len();
    RankedList::new(
        ids.into_iter()
            .enumerate()
            .map(|(i, id)| Scored::new(id, (n - i) as f64))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(ids: &[&str]) -> RankedList {
        RankedList::new(ids.iter().enumerate().map(|(i, id)| Scored::new(*id, -(i as f64))).collect())
    }

    #[test]
    fn two_route_example() {
        let agent = RouteRanking::new(RouteId::Agentic, 2.0, list(&["A", "B", "X"]));
        let std = RouteRanking::new(RouteId::Standard, 1.0, list(&["B", "Y", "A"]));
        let fused = fuse_rrf(&[agent, std], 60.0, 10).unwrap();
        assert_eq!(fused.items[0].doc_id, "A");
        assert_eq!(fused.items[1].doc_id, "B");
        assert!((fused.items[0].score - (2.0 / 61.0 + 1.0 / 63.0)).abs() < 1e-15);
        assert!((fused.items[1].score - (2.0 / 62.0 + 1.0 / 61.0)).abs() < 1e-15);
        assert!((fused.items[0].score - 0.048660).abs() < 1e-6);
    }

    #[test]
    fn single_route_keeps_order() {
        let r = RouteRanking::new(RouteId::Standard, 3.5, list(&["z", "a", "m"]));
        assert_eq!(fuse_rrf(&[r], 60.0, 10).unwrap().id_vec(), vec!["z", "a", "m"]);
    }

    #[test]
    fn agentic_weight_wins_at_equal_rank() {
        let a = RouteRanking::new(RouteId::Agentic, 2.0, list(&["q"]));
        let s = RouteRanking::new(RouteId::Standard, 1.0, list(&["p"]));
        assert_eq!(fuse_rrf(&[s, a], 60.0, 10).unwrap().id_vec(), vec!["q", "p"]);
    }

    #[test]
    fn errors() {
        assert_eq!(fuse_rrf(&[], 60.0, 5), Err(FusionError::NoRoutes));
        let r = RouteRanking::new(RouteId::Standard, 1.0, list(&["a", "a"]));
        assert!(matches!(fuse_rrf(std::slice::from_ref(&r), 60.0, 5), Err(FusionError::DuplicateId { .. })));
        let r = RouteRanking::new(RouteId::Standard, 0.0, list(&["a"]));
        assert!(matches!(fuse_rrf(std::slice::from_ref(&r), 60.0, 5), Err(FusionError::Weight { .. })));
        let r = RouteRanking::new(RouteId::Standard, 1.0, list(&["a"]));
        assert_eq!(fuse_rrf(&[r], 0.0, 5), Err(FusionError::KRrf(0.0)));
    }

    #[test]
    fn agentic_ranking_puts_selection_first() {
        let pool = list(&["a", "b", "c", "d"]);
        let r = agentic_ranking(&["c".into(), "a".into()], &pool);
        assert_eq!(r.id_vec(), vec!["c", "a", "b", "d"]);
        assert!(r.items.windows(2).all(|w| w[0].score > w[1].score));
    }
}
