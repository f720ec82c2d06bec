//! Option snippets for the multiple-choice election: neighbor-augmented
//! candidate blocks, chunked into groups of at most five plus a "None"
//! option.

use crate::document::{element_html_text, Element, HtmlDocument};
use crate::spatial::NeighborList;

/// Default options per group.
pub const GROUP_SIZE: usize = 5;

/// One electable candidate: the element and its rendered option text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateOption {
    pub element_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnippetOption {
    pub label: char,
    pub element_id: String,
    pub text: String,
}

/// One multiple-choice group: consecutive labels from 'A', optionally
/// closed by a "None" option labeled with the next letter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub options: Vec<SnippetOption>,
    pub includes_none: bool,
}

impl Snippet {
    /// Label the "None" option carries, when present.
    pub fn none_label(&self) -> Option<char> {
        self.includes_none.then(|| label_for(self.options.len()))
    }

    /// The golden text form: one "(L) text" line per option, "None" last.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for opt in &self.options {
            out.push_str(&format!("({}) {}\n", opt.label, opt.text));
        }
        if let Some(l) = self.none_label() {
            out.push_str(&format!("({l}) None\n"));
        }
        out
    }
}

fn label_for(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// The candidate's HTML text followed by each neighbor's, joined by the
/// `<NBR>` separator token, in neighbor-list order.
///
/// Panics if `nbrs` was built for a different candidate or references an
/// element outside `doc` — both are caller contract violations, not inputs.
pub fn candidate_block(doc: &HtmlDocument, e: &Element, nbrs: &NeighborList) -> String {
    assert_eq!(nbrs.candidate_id, e.id, "neighbor list belongs to another candidate");
    let mut out = element_html_text(e);
    for (id, _) in &nbrs.neighbors {
        let n = doc.get(id).expect("neighbor list references unknown element");
        out.push_str(" <NBR> ");
        out.push_str(&element_html_text(n));
    }
    out
}

/// Chunks ranked candidates into groups of at most `group_size`, each with
/// a trailing "None" option. Order is preserved; empty input yields no
/// groups.
pub fn partition_groups(candidates: &[CandidateOption], group_size: usize) -> Vec<Snippet> {
    assert!(group_size >= 1, "group_size must be at least 1");
    candidates
        .chunks(group_size)
        .map(|chunk| Snippet {
            options: chunk
                .iter()
                .enumerate()
                .map(|(i, c)| SnippetOption {
                    label: label_for(i),
                    element_id: c.element_id.clone(),
                    text: c.text.clone(),
                })
                .collect(),
            includes_none: true,
        })
        .collect()
}
