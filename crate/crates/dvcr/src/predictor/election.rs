//! Iterative multiple-choice election over ranked candidates: partition
//! into groups, ask the chooser once per group, survivors advance, repeat
//! until one element remains.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::predictor::snippet::{partition_groups, CandidateOption, Snippet};
use crate::ranker::vocab::tokenize_str;

/// Picks one option per group. `Some(i)` selects `snippet.options[i]`;
/// `None` selects the snippet's "None" option. Implementations must be
/// total and deterministic.
pub trait ElementChooser {
    fn choose(
        &self,
        instruction: &str,
        history_text: &[String],
        snippet: &Snippet,
    ) -> Result<Option<usize>>;
}

/// One election round, kept for transcripts.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub snippets: Vec<Snippet>,
    /// Chooser answer per snippet, parallel to `snippets`.
    pub picks: Vec<Option<usize>>,
    /// Ids advancing to the next round, original order preserved.
    pub survivors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Election {
    pub winner: Option<String>,
    pub rounds: Vec<RoundRecord>,
}

/// Runs the tournament. Rules:
/// - per round: partition in current order, chooser picks per group,
///   non-None picks survive in order;
/// - one survivor → winner; zero survivors in round 1 → no element;
///   zero survivors later → the previous round's top-ranked survivor;
/// - rounds exhausted with several survivors → the top-ranked one.
pub fn elect_element(
    candidates: &[CandidateOption],
    chooser: &dyn ElementChooser,
    instruction: &str,
    history_text: &[String],
    group_size: usize,
    max_rounds: usize,
) -> Result<Election> {
    if max_rounds == 0 {
        return Err(Error::Config("max_rounds must be at least 1".into()));
    }
    let mut rounds = Vec::new();
    if candidates.is_empty() {
        return Ok(Election { winner: None, rounds });
    }
    let mut current: Vec<CandidateOption> = candidates.to_vec();
    for round in 0..max_rounds {
        let snippets = partition_groups(&current, group_size);
        let mut picks = Vec::with_capacity(snippets.len());
        let mut survivors: Vec<CandidateOption> = Vec::new();
        for sn in &snippets {
            let pick = chooser.choose(instruction, history_text, sn)?;
            if let Some(i) = pick {
                if i >= sn.options.len() {
                    return Err(Error::ChooserContract { index: i, len: sn.options.len() });
                }
                let o = &sn.options[i];
                survivors.push(CandidateOption {
                    element_id: o.element_id.clone(),
                    text: o.text.clone(),
                });
            }
            picks.push(pick);
        }
        let survivor_ids: Vec<String> = survivors.iter().map(|s| s.element_id.clone()).collect();
        rounds.push(RoundRecord { snippets, picks, survivors: survivor_ids });

        match survivors.len() {
            0 => {
                let winner = (round > 0).then(|| current[0].element_id.clone());
                return Ok(Election { winner, rounds });
            }
            1 => {
                return Ok(Election {
                    winner: Some(survivors[0].element_id.clone()),
                    rounds,
                })
            }
            _ => current = survivors,
        }
    }
    Ok(Election { winner: Some(current[0].element_id.clone()), rounds })
}

// ---------------------------------------------------------------------
// Scripted choosers.

/// Picks the option whose element id equals the scripted ground truth;
/// answers None when it is not offered.
#[derive(Debug, Clone)]
pub struct GtChooser {
    pub gt_element_id: String,
}

impl ElementChooser for GtChooser {
    fn choose(&self, _: &str, _: &[String], snippet: &Snippet) -> Result<Option<usize>> {
        Ok(snippet.options.iter().position(|o| o.element_id == self.gt_element_id))
    }
}

/// Always answers the "None" option.
#[derive(Debug, Clone, Default)]
pub struct NoneChooser;

impl ElementChooser for NoneChooser {
    fn choose(&self, _: &str, _: &[String], _: &Snippet) -> Result<Option<usize>> {
        Ok(None)
    }
}

/// Picks by a strict total preference over element ids (lower value =
/// preferred); never abstains when options exist. The reference chooser for
/// tournament-soundness checks.
#[derive(Debug, Clone)]
pub struct PreferenceChooser {
    /// id → preference value; missing ids rank last by id order.
    pub preference: HashMap<String, usize>,
}

impl ElementChooser for PreferenceChooser {
    fn choose(&self, _: &str, _: &[String], snippet: &Snippet) -> Result<Option<usize>> {
        Ok(snippet
            .options
            .iter()
            .enumerate()
            .min_by_key(|(_, o)| {
                (self.preference.get(&o.element_id).copied().unwrap_or(usize::MAX), o.element_id.clone())
            })
            .map(|(i, _)| i))
    }
}

/// Picks the option whose text shares the most tokens with the instruction
/// (multiset overlap); None when no option overlaps at all. Ties go to the
/// earlier option. A learning-free baseline for smoke tests.
#[derive(Debug, Clone, Default)]
pub struct LexicalChooser;

/// Multiset intersection size of the two token lists.
pub(crate) fn token_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in a {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for t in b {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    overlap
}

impl ElementChooser for LexicalChooser {
    fn choose(&self, instruction: &str, _: &[String], snippet: &Snippet) -> Result<Option<usize>> {
        let instr = tokenize_str(instruction);
        let mut best: Option<(usize, usize)> = None; // (overlap, index)
        for (i, o) in snippet.options.iter().enumerate() {
            let overlap = token_overlap(&instr, &tokenize_str(&o.text));
            if overlap > 0 && best.map(|(b, _)| overlap > b).unwrap_or(true) {
                best = Some((overlap, i));
            }
        }
        Ok(best.map(|(_, i)| i))
    }
}
