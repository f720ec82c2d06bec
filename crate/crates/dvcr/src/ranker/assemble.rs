//! Builds the ranker's input sequence for one candidate element: a visual
//! prefix (candidate + neighbors, ROI-pooled), then query, history, and the
//! text of candidate and neighbors, SEP-separated, with per-element rank
//! positions.
//!
//! Layout: `[CLS] ‖ visual ‖ SEP ‖ query ‖ SEP ‖ history ‖ SEP ‖ candidate
//! text ‖ (SEP ‖ neighbor text)*`. The candidate carries rank 0; neighbor i
//! carries rank i+1 on both its visual token and its text tokens; query,
//! history, CLS, and SEP carry the dedicated no-element rank.

use crate::document::{element_html_text, Element, HtmlDocument};
use crate::error::{Error, Result};
use crate::ranker::vocab::{tokenize, Vocab, CLS, SEP};
use crate::spatial::NeighborList;
use crate::visual::{roi_align, FeatureGrid};

/// One pooled-feature slot in the visual prefix. Stores the pre-projection
/// feature vector; the trainable projection is applied in the forward pass
/// so its gradients can flow.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualToken {
    pub feat: Vec<f64>,
    pub rank: usize,
}

/// Everything `score` needs for one (candidate, context) pair, kept as
/// separate blocks so the truncation policy can act on the right tails.
#[derive(Debug, Clone, PartialEq)]
pub struct DualViewInput {
    /// Candidate first (rank 0), then neighbors in list order (ranks 1..).
    pub visual: Vec<VisualToken>,
    pub query: Vec<u32>,
    pub history: Vec<u32>,
    pub candidate_text: Vec<u32>,
    /// Block i belongs to neighbor i (rank i+1).
    pub neighbor_texts: Vec<Vec<u32>>,
}

/// A position in the flattened sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    /// CLS marker token.
    Cls,
    /// Index into `DualViewInput::visual`.
    Visual(usize),
    /// Block separator.
    Sep,
    /// Text token with its rank position.
    Token(u32, usize),
}

impl DualViewInput {
    /// Sequence length under the fixed layout: CLS + visual prefix + three
    /// block separators + one separator per neighbor block.
    pub fn total_len(&self) -> usize {
        1 + self.visual.len()
            + 3
            + self.query.len()
            + self.history.len()
            + self.candidate_text.len()
            + self
                .neighbor_texts
                .iter()
                .map(|b| 1 + b.len())
                .sum::<usize>()
    }

    /// Flattens into per-position slots. `none_rank` is the rank id given to
    /// CLS, SEP, query, and history positions.
    pub fn layout(&self, none_rank: usize) -> Vec<Slot> {
        let mut slots = Vec::with_capacity(self.total_len());
        slots.push(Slot::Cls);
        for (i, _) in self.visual.iter().enumerate() {
            slots.push(Slot::Visual(i));
        }
        slots.push(Slot::Sep);
        slots.extend(self.query.iter().map(|&t| Slot::Token(t, none_rank)));
        slots.push(Slot::Sep);
        slots.extend(self.history.iter().map(|&t| Slot::Token(t, none_rank)));
        slots.push(Slot::Sep);
        slots.extend(self.candidate_text.iter().map(|&t| Slot::Token(t, 0)));
        for (i, block) in self.neighbor_texts.iter().enumerate() {
            slots.push(Slot::Sep);
            slots.extend(block.iter().map(|&t| Slot::Token(t, i + 1)));
        }
        debug_assert_eq!(slots.len(), self.total_len());
        slots
    }

    /// Drops tokens until the sequence fits: history tail first, then
    /// neighbor blocks starting from the last, then the query tail. The CLS,
    /// visual prefix, separators, and candidate text are never touched.
    fn truncate_to(&mut self, max_seq: usize) {
        let mut over = self.total_len().saturating_sub(max_seq);
        if over > 0 {
            let cut = over.min(self.history.len());
            self.history.truncate(self.history.len() - cut);
            over -= cut;
        }
        for block in self.neighbor_texts.iter_mut().rev() {
            if over == 0 {
                break;
            }
            let cut = over.min(block.len());
            block.truncate(block.len() - cut);
            over -= cut;
        }
        if over > 0 {
            let cut = over.min(self.query.len());
            self.query.truncate(self.query.len() - cut);
            over -= cut;
        }
        assert_eq!(
            over, 0,
            "sequence exceeds max_seq even after dropping all droppable text"
        );
    }
}

/// Pools one element's box from the grid; no screenshot means zero features.
fn visual_feat(e: &Element, grid: Option<&FeatureGrid>, patch: usize, d_v: usize) -> Result<Vec<f64>> {
    match grid {
        Some(g) => roi_align(g, &e.bbox, patch, (1, 1), 2),
        None => Ok(vec![0.0; d_v]),
    }
}

/// Geometry/tokenization knobs `assemble` needs; a subset of the ranker
/// configuration.
#[derive(Debug, Clone, Copy)]
pub struct AssembleParams {
    pub m: usize,
    pub max_seq: usize,
    pub patch: usize,
    pub d_v: usize,
}

/// Builds the dual-view input for one candidate. History lines arrive
/// pre-rendered (each prior action is rendered against its own page).
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    doc: &HtmlDocument,
    candidate: &Element,
    nbrs: &NeighborList,
    query: &str,
    history_text: &[String],
    grid: Option<&FeatureGrid>,
    params: &AssembleParams,
    vocab: &Vocab,
) -> Result<DualViewInput> {
    if nbrs.candidate_id != candidate.id {
        return Err(Error::Config(format!(
            "neighbor list belongs to {:?}, not candidate {:?}",
            nbrs.candidate_id, candidate.id
        )));
    }
    if nbrs.len() > params.m {
        return Err(Error::ShapeMismatch {
            context: format!(
                "{} neighbors exceed the weights' M={}",
                nbrs.len(),
                params.m
            ),
        });
    }

    let mut visual = vec![VisualToken {
        feat: visual_feat(candidate, grid, params.patch, params.d_v)?,
        rank: 0,
    }];
    let mut neighbor_texts = Vec::with_capacity(nbrs.len());
    for (i, (id, _)) in nbrs.neighbors.iter().enumerate() {
        let e = doc.require(id)?;
        visual.push(VisualToken {
            feat: visual_feat(e, grid, params.patch, params.d_v)?,
            rank: i + 1,
        });
        neighbor_texts.push(tokenize(&element_html_text(e), vocab));
    }

    let mut input = DualViewInput {
        visual,
        query: tokenize(query, vocab),
        history: tokenize(&history_text.join(" ; "), vocab),
        candidate_text: tokenize(&element_html_text(candidate), vocab),
        neighbor_texts,
    };
    input.truncate_to(params.max_seq);
    Ok(input)
}

/// Token ids a [`Slot`] sequence implies for the marker positions.
pub fn slot_token_id(slot: &Slot) -> Option<u32> {
    match slot {
        Slot::Cls => Some(CLS),
        Slot::Sep => Some(SEP),
        Slot::Token(t, _) => Some(*t),
        Slot::Visual(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::BBox;
    use crate::ranker::vocab::build_vocab_from_strings;
    use crate::spatial::{visual_neighbors, NeighborSource};
    use indexmap::IndexMap;

    fn elem(id: &str, tag: &str, text: &str, x: f64) -> Element {
        Element {
            id: id.to_string(),
            tag: tag.to_string(),
            text: text.to_string(),
            attrs: IndexMap::new(),
            bbox: BBox::new(x, 0.0, 10.0, 10.0).unwrap(),
            visible: true,
            actionable: true,
            parent: None,
        }
    }

    fn params(m: usize, max_seq: usize) -> AssembleParams {
        AssembleParams { m, max_seq, patch: 16, d_v: 8 }
    }

    #[test]
    fn layout_count_matches_the_rule() {
        // M=2, candidate text 3 tokens, neighbor texts 2 and 1, query 4,
        // empty history: 1+3+1+4+1+0+1+3+1+2+1+1 = 19.
        let input = DualViewInput {
            visual: vec![
                VisualToken { feat: vec![0.0; 8], rank: 0 },
                VisualToken { feat: vec![0.0; 8], rank: 1 },
                VisualToken { feat: vec![0.0; 8], rank: 2 },
            ],
            query: vec![5, 6, 7, 8],
            history: vec![],
            candidate_text: vec![9, 10, 11],
            neighbor_texts: vec![vec![12, 13], vec![14]],
        };
        assert_eq!(input.total_len(), 19);
        let slots = input.layout(3);
        assert_eq!(slots.len(), 19);
        assert_eq!(slots[0], Slot::Cls);
        assert_eq!(slots[1], Slot::Visual(0));
        assert_eq!(slots[3], Slot::Visual(2));
        assert_eq!(slots[4], Slot::Sep);
        assert_eq!(slots[5], Slot::Token(5, 3)); // query at NONE_RANK
        assert_eq!(slots[9], Slot::Sep); // end of query
        assert_eq!(slots[10], Slot::Sep); // empty history block
        assert_eq!(slots[11], Slot::Token(9, 0)); // candidate rank 0
        assert_eq!(slots[14], Slot::Sep);
        assert_eq!(slots[15], Slot::Token(12, 1)); // neighbor 1
        assert_eq!(slots[17], Slot::Sep);
        assert_eq!(slots[18], Slot::Token(14, 2)); // neighbor 2
    }

    #[test]
    fn zero_neighbors_means_bare_prefix() {
        let doc = HtmlDocument::new(vec![elem("a", "button", "Go", 0.0)], None).unwrap();
        let v = build_vocab_from_strings(["[button] go find"], 1);
        let nbrs = visual_neighbors(&doc, "a", 0).unwrap();
        let input = assemble(
            &doc,
            doc.get("a").unwrap(),
            &nbrs,
            "find",
            &[],
            None,
            &params(2, 64),
            &v,
        )
        .unwrap();
        assert_eq!(input.visual.len(), 1);
        assert!(input.neighbor_texts.is_empty());
        // [CLS] vis SEP find SEP SEP [ button ] go
        assert_eq!(input.total_len(), 1 + 1 + 1 + 1 + 1 + 1 + 4);
    }

    #[test]
    fn assemble_is_deterministic() {
        let doc = HtmlDocument::new(
            vec![elem("a", "button", "Go", 0.0), elem("b", "label", "Dest", 12.0)],
            None,
        )
        .unwrap();
        let v = build_vocab_from_strings(["[button] go [label] dest find it"], 1);
        let nbrs = visual_neighbors(&doc, "a", 2).unwrap();
        let one = assemble(
            &doc,
            doc.get("a").unwrap(),
            &nbrs,
            "find it",
            &["[label] Dest -> CLICK".into()],
            None,
            &params(2, 64),
            &v,
        )
        .unwrap();
        let two = assemble(
            &doc,
            doc.get("a").unwrap(),
            &nbrs,
            "find it",
            &["[label] Dest -> CLICK".into()],
            None,
            &params(2, 64),
            &v,
        )
        .unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn rejects_mismatched_neighbor_list_and_oversized_m() {
        let doc = HtmlDocument::new(
            vec![elem("a", "button", "", 0.0), elem("b", "button", "", 12.0)],
            None,
        )
        .unwrap();
        let v = build_vocab_from_strings(["x"], 1);
        let nbrs = visual_neighbors(&doc, "b", 1).unwrap();
        let err = assemble(
            &doc,
            doc.get("a").unwrap(),
            &nbrs,
            "x",
            &[],
            None,
            &params(2, 64),
            &v,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let nbrs_a = visual_neighbors(&doc, "a", 1).unwrap();
        let err = assemble(
            &doc,
            doc.get("a").unwrap(),
            &nbrs_a,
            "x",
            &[],
            None,
            &params(0, 64),
            &v,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn truncation_order_history_then_last_neighbors_then_query() {
        let base = DualViewInput {
            visual: vec![
                VisualToken { feat: vec![0.0], rank: 0 },
                VisualToken { feat: vec![0.0], rank: 1 },
                VisualToken { feat: vec![0.0], rank: 2 },
            ],
            query: vec![1; 6],
            history: vec![2; 10],
            candidate_text: vec![3; 4],
            neighbor_texts: vec![vec![4; 3], vec![5; 3]],
        };
        let full = base.total_len(); // 1+3+3+6+10+4+(1+3)+(1+3) = 35
        assert_eq!(full, 35);

        // Cut into history only.
        let mut a = base.clone();
        a.truncate_to(full - 4);
        assert_eq!(a.history.len(), 6);
        assert_eq!(a.query.len(), 6);
        assert_eq!(a.neighbor_texts, base.neighbor_texts);

        // Cut through history and the last neighbor block.
        let mut b = base.clone();
        b.truncate_to(full - 12);
        assert_eq!(b.history.len(), 0);
        assert_eq!(b.neighbor_texts[1].len(), 1);
        assert_eq!(b.neighbor_texts[0].len(), 3);
        assert_eq!(b.query.len(), 6);

        // Cut into the query; protected blocks stay whole.
        let mut c = base.clone();
        c.truncate_to(full - 18);
        assert_eq!(c.history.len(), 0);
        assert_eq!(c.neighbor_texts, vec![Vec::<u32>::new(), Vec::new()]);
        assert_eq!(c.query.len(), 4);
        assert_eq!(c.candidate_text.len(), 4);
        assert_eq!(c.visual.len(), 3);
        assert_eq!(c.total_len(), full - 18);
    }

    #[test]
    #[should_panic(expected = "sequence exceeds max_seq")]
    fn impossible_budget_asserts() {
        let mut input = DualViewInput {
            visual: vec![VisualToken { feat: vec![0.0], rank: 0 }],
            query: vec![],
            history: vec![],
            candidate_text: vec![3; 40],
            neighbor_texts: vec![],
        };
        input.truncate_to(8);
    }

    #[test]
    fn assemble_truncates_against_max_seq() {
        let doc = HtmlDocument::new(
            vec![
                elem("a", "button", "Go now please", 0.0),
                elem("b", "label", "Destination city picker", 12.0),
            ],
            None,
        )
        .unwrap();
        let v = build_vocab_from_strings(
            ["[button] go now please [label] destination city picker find the thing and do it"],
            1,
        );
        let nbrs = visual_neighbors(&doc, "a", 1).unwrap();
        let long_history: Vec<String> =
            (0..10).map(|i| format!("[label] step{i} -> CLICK")).collect();
        let input = assemble(
            &doc,
            doc.get("a").unwrap(),
            &nbrs,
            "find the thing and do it",
            &long_history,
            None,
            &params(1, 32),
            &v,
        )
        .unwrap();
        assert_eq!(input.total_len(), 32);
        // Protected blocks intact.
        assert_eq!(input.visual.len(), 2);
        assert_eq!(input.candidate_text.len(), 6); // [ button ] go now please
        assert_eq!(input.query.len(), 6);
        let _ = NeighborSource::Visual;
    }
}
