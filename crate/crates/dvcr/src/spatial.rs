//! Element centers, pairwise distances, and the three neighbor sources
//! (visual, HTML-tree, random) that feed the ranker and predictor.
//!
//! Documents are small, so neighbor search is plain brute force over all
//! visible elements. Ties are broken by document order so every downstream
//! artifact is deterministic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::{BBox, HtmlDocument};
use crate::error::{Error, Result};

/// Where a neighbor list came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborSource {
    Visual,
    Tree,
    Random,
}

impl NeighborSource {
    pub fn name(self) -> &'static str {
        match self {
            NeighborSource::Visual => "visual",
            NeighborSource::Tree => "tree",
            NeighborSource::Random => "random",
        }
    }
}

impl std::str::FromStr for NeighborSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(NeighborSource::Visual),
            "tree" => Ok(NeighborSource::Tree),
            "random" => Ok(NeighborSource::Random),
            other => Err(Error::Config(format!(
                "unknown neighbor source {other:?} (expected visual|tree|random)"
            ))),
        }
    }
}

/// The candidate's ordered neighbors. Distances are Euclidean center
/// distances for `Visual`, hop counts for `Tree`, and 0 for `Random`
/// (where distance carries no meaning).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub candidate_id: String,
    pub neighbors: Vec<(String, f64)>,
    pub source: NeighborSource,
}

impl NeighborList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.neighbors.iter().map(|(id, _)| id.as_str())
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Center point of a bounding box.
pub fn center(b: &BBox) -> (f64, f64) {
    (b.x + b.w / 2.0, b.y + b.h / 2.0)
}

pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = center(a);
    let (bx, by) = center(b);
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

fn require_visible_candidate<'d>(
    doc: &'d HtmlDocument,
    candidate_id: &str,
) -> Result<&'d crate::document::Element> {
    let e = doc.require(candidate_id)?;
    if !e.visible {
        return Err(Error::NotVisible { id: candidate_id.to_string() });
    }
    Ok(e)
}

/// The `m` visible elements closest to the candidate's center, ascending by
/// Euclidean distance, ties broken by document order. Invisible elements and
/// the candidate itself never appear.
pub fn visual_neighbors(doc: &HtmlDocument, candidate_id: &str, m: usize) -> Result<NeighborList> {
    let cand = require_visible_candidate(doc, candidate_id)?;
    let mut scored: Vec<(usize, f64)> = doc
        .elements()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.visible && e.id != candidate_id)
        .map(|(i, e)| (i, center_distance(&cand.bbox, &e.bbox)))
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(m);
    Ok(NeighborList {
        candidate_id: candidate_id.to_string(),
        neighbors: scored
            .into_iter()
            .map(|(i, d)| (doc.elements()[i].id.clone(), d))
            .collect(),
        source: NeighborSource::Visual,
    })
}

/// The `m` elements closest to the candidate by undirected tree-hop distance,
/// ascending, ties broken by document order. Requires parent links.
pub fn tree_neighbors(doc: &HtmlDocument, candidate_id: &str, m: usize) -> Result<NeighborList> {
    let start = doc.index_of(candidate_id).ok_or_else(|| Error::UnknownElement {
        id: candidate_id.to_string(),
    })?;
    if !doc.has_parent_links() {
        return Err(Error::MissingParentLinks { id: doc.elements()[0].id.clone() });
    }

    // Undirected adjacency over parent links.
    let n = doc.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in doc.elements().iter().enumerate() {
        if let Some(p) = &e.parent {
            let pi = doc.index_of(p).expect("validated at construction");
            adj[i].push(pi);
            adj[pi].push(i);
        }
    }

    // BFS; within one hop level, visit in document order.
    let mut hops: Vec<Option<usize>> = vec![None; n];
    hops[start] = Some(0);
    let mut frontier = vec![start];
    let mut level = 0usize;
    while !frontier.is_empty() {
        level += 1;
        let mut next: Vec<usize> = Vec::new();
        for &u in &frontier {
            for &v in &adj[u] {
                if hops[v].is_none() {
                    hops[v] = Some(level);
                    next.push(v);
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }

    let mut reached: Vec<(usize, usize)> = hops
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|h| (i, h)))
        .filter(|&(i, h)| i != start && h > 0)
        .collect();
    reached.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    reached.truncate(m);
    Ok(NeighborList {
        candidate_id: candidate_id.to_string(),
        neighbors: reached
            .into_iter()
            .map(|(i, h)| (doc.elements()[i].id.clone(), h as f64))
            .collect(),
        source: NeighborSource::Tree,
    })
}

/// `m` distinct visible elements other than the candidate, drawn without
/// replacement from a seeded PRNG. Same inputs, same list. All recorded
/// distances are 0; list order still drives rank embeddings downstream.
pub fn random_neighbors(
    doc: &HtmlDocument,
    candidate_id: &str,
    m: usize,
    seed: u64,
) -> Result<NeighborList> {
    require_visible_candidate(doc, candidate_id)?;
    let mut pool: Vec<&str> = doc
        .elements()
        .iter()
        .filter(|e| e.visible && e.id != candidate_id)
        .map(|e| e.id.as_str())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(m);
    Ok(NeighborList {
        candidate_id: candidate_id.to_string(),
        neighbors: pool.into_iter().map(|id| (id.to_string(), 0.0)).collect(),
        source: NeighborSource::Random,
    })
}

/// Dispatch over the three sources. `seed` is only consulted for `Random`.
pub fn neighbors(
    doc: &HtmlDocument,
    candidate_id: &str,
    m: usize,
    source: NeighborSource,
    seed: u64,
) -> Result<NeighborList> {
    match source {
        NeighborSource::Visual => visual_neighbors(doc, candidate_id, m),
        NeighborSource::Tree => tree_neighbors(doc, candidate_id, m),
        NeighborSource::Random => random_neighbors(doc, candidate_id, m, seed),
    }
}
