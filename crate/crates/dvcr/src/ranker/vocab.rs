//! Rule-based tokenizer and frequency-ordered vocabulary — the stand-in for
//! a pretrained subword tokenizer. Lowercase, whitespace splits, and every
//! punctuation character is its own token, so "[button] Pick-up" becomes
//! `[ button ] pick - up`.

use std::collections::HashMap;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::document::{element_html_text, render_action, Task};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SEP: u32 = 2;
pub const CLS: u32 = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[SEP]", "[CLS]"];

/// Token table; id = insertion index. The four reserved entries always
/// occupy ids 0..=3. Serializes as a plain array of token strings, so the
/// on-disk form pins ids explicitly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocab {
    tokens: IndexSet<String>,
}

impl Vocab {
    fn with_reserved() -> Self {
        Vocab {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.tokens.get_index_of(token).map_or(UNK, |i| i as u32)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get_index(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved entries are always present
    }
}

/// Splits into lowercase word/number runs and single punctuation characters.
pub fn tokenize_str(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Token ids under `v`; unknown strings map to [`UNK`].
pub fn tokenize(s: &str, v: &Vocab) -> Vec<u32> {
    tokenize_str(s).iter().map(|t| v.id(t)).collect()
}

/// Vocabulary over raw strings: tokens with frequency ≥ `min_count`, ordered
/// by (−frequency, token) after the reserved ids.
pub fn build_vocab_from_strings<'a>(
    strings: impl IntoIterator<Item = &'a str>,
    min_count: usize,
) -> Vocab {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in strings {
        for tok in tokenize_str(s) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut vocab = Vocab::with_reserved();
    for (tok, _) in ranked {
        vocab.tokens.insert(tok);
    }
    vocab
}

/// Vocabulary over everything the pipeline will ever tokenize for a corpus:
/// instructions, every element's HTML text, the rendered ground-truth
/// actions (which double as history lines), and the literal "None" answer
/// option used in election snippets.
pub fn build_vocab(corpus: &[Task], min_count: usize) -> Vocab {
    let mut strings: Vec<String> = Vec::new();
    for task in corpus {
        strings.push(task.instruction.clone());
        for step in &task.steps {
            for e in step.document.elements() {
                strings.push(element_html_text(e));
            }
            strings.push(
                render_action(&step.gt_action, &step.document)
                    .expect("ground truth references a known element"),
            );
            strings.push("None".to_string());
        }
    }
    build_vocab_from_strings(strings.iter().map(|s| s.as_str()), min_count)
}
