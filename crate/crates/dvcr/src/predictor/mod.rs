//! Action prediction: neighbor-augmented candidate snippets, the
//! clusters-of-five element election, and operation prediction, glued into
//! a single step-level entry point.

pub mod chooser;
pub mod election;
pub mod op_head;
pub mod snippet;
pub mod text_encoder;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::document::{element_html_text, Action, HtmlDocument, Step};
use crate::error::{Error, Result};
use crate::ranker::model::{neighbor_seed, rank_elements, RankerWeights};
use crate::spatial::{neighbors, NeighborSource};
use crate::visual::FeatureGrid;

pub use chooser::{
    train_chooser, ChooserTrainConfig, ChooserTrainOutcome, ChooserWeights, NONE_TEXT,
};
pub use election::{
    elect_element, Election, ElementChooser, GtChooser, LexicalChooser, NoneChooser, RoundRecord,
};
pub use op_head::{
    predict_operation, train_op_head, OpHead, OpTrainConfig, OpTrainOutcome, OperationPredictor,
    OracleOpPredictor, OP_CLASSES,
};
pub use snippet::{candidate_block, partition_groups, CandidateOption, Snippet, SnippetOption};
pub use text_encoder::{TextEncoder, TextEncoderConfig};

/// Whether option blocks carry visually-nearest-neighbor context or just
/// the element's own text (the no-neighbor ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorMode {
    DualVcr,
    Bare,
}

impl PredictorMode {
    pub fn name(self) -> &'static str {
        match self {
            PredictorMode::DualVcr => "dualvcr",
            PredictorMode::Bare => "bare",
        }
    }
}

impl FromStr for PredictorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dualvcr" => Ok(PredictorMode::DualVcr),
            "bare" => Ok(PredictorMode::Bare),
            other => Err(Error::Config(format!(
                "unknown predictor mode {other:?} (expected dualvcr or bare)"
            ))),
        }
    }
}

/// Option text for one element: bare HTML text, or the neighbor-augmented
/// block in dual-view mode.
pub fn block_for(
    doc: &HtmlDocument,
    element_id: &str,
    m: usize,
    source: NeighborSource,
    seed: u64,
    mode: PredictorMode,
) -> Result<String> {
    match mode {
        PredictorMode::Bare => Ok(element_html_text(doc.require(element_id)?)),
        PredictorMode::DualVcr => {
            let nbrs = neighbors(doc, element_id, m, source, seed)?;
            Ok(candidate_block(doc, doc.require(element_id)?, &nbrs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSettings {
    /// Candidates forwarded from the ranker into the election.
    pub k: usize,
    /// Neighbors per option block.
    pub m: usize,
    pub group_size: usize,
    pub max_rounds: usize,
    pub mode: PredictorMode,
    pub neighbor_source: NeighborSource,
}

impl Default for PredictorSettings {
    fn default() -> Self {
        PredictorSettings {
            k: 50,
            m: 5,
            group_size: 5,
            max_rounds: 10,
            mode: PredictorMode::DualVcr,
            neighbor_source: NeighborSource::Visual,
        }
    }
}

/// Everything one step produced: the ranked candidates, the election
/// transcript, and the final action (None when the election abstained).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ranked: Vec<(String, f64)>,
    pub election: Election,
    pub action: Option<Action>,
}

/// Full pipeline for one step: rank candidates, build option blocks, elect
/// the target element, then predict its operation. Neighbor lists reuse the
/// ranker's per-element seeds so ranking and blocks agree.
pub fn predict_action(
    step: &Step,
    instruction: &str,
    grid: Option<&FeatureGrid>,
    ranker: &RankerWeights,
    chooser: &dyn ElementChooser,
    op: &dyn OperationPredictor,
    settings: &PredictorSettings,
) -> Result<Prediction> {
    let ranked = rank_elements(step, instruction, grid, ranker, settings.k, settings.neighbor_source)?;
    predict_from_ranked(step, instruction, ranked, chooser, op, settings)
}

/// Election + operation prediction over an externally supplied ranking
/// (descending score order). This is `predict_action` minus the ranker, for
/// callers that rank by other means (e.g. a ground-truth-first oracle).
pub fn predict_from_ranked(
    step: &Step,
    instruction: &str,
    ranked: Vec<(String, f64)>,
    chooser: &dyn ElementChooser,
    op: &dyn OperationPredictor,
    settings: &PredictorSettings,
) -> Result<Prediction> {
    let doc = &step.document;
    let mut candidates = Vec::with_capacity(ranked.len());
    for (id, _) in &ranked {
        let text = block_for(
            doc,
            id,
            settings.m,
            settings.neighbor_source,
            neighbor_seed(step.step_id, id),
            settings.mode,
        )?;
        candidates.push(CandidateOption { element_id: id.clone(), text });
    }
    let election = elect_element(
        &candidates,
        chooser,
        instruction,
        &step.history_text,
        settings.group_size,
        settings.max_rounds,
    )?;
    let action = match &election.winner {
        Some(id) => {
            let block = &candidates
                .iter()
                .find(|c| &c.element_id == id)
                .expect("winner comes from the candidate list")
                .text;
            let operation = op.predict(instruction, &step.history_text, block)?;
            Some(Action { element_id: id.clone(), operation })
        }
        None => None,
    };
    Ok(Prediction { ranked, election, action })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{BBox, Element, Operation};
    use crate::ranker::model::RankerConfig;
    use crate::ranker::vocab::build_vocab;
    use crate::document::Task;
    use indexmap::IndexMap;

    fn elem(id: &str, text: &str, x: f64, y: f64) -> Element {
        Element {
            id: id.into(),
            tag: "button".into(),
            text: text.into(),
            attrs: IndexMap::new(),
            bbox: BBox::new(x, y, 10.0, 10.0).unwrap(),
            visible: true,
            actionable: true,
            parent: None,
        }
    }

    fn fixture_step(gt: usize) -> (Step, String) {
        let elements = vec![
            elem("e0", "home", 0.0, 0.0),
            elem("e1", "search flights", 30.0, 0.0),
            elem("e2", "cart", 60.0, 0.0),
        ];
        let gt_id = elements[gt].id.clone();
        let step = Step {
            step_id: 3,
            document: HtmlDocument::new(elements, None).unwrap(),
            gt_action: Action {
                element_id: gt_id.clone(),
                operation: Operation { op: crate::document::OpKind::Type, arg: Some("oslo".into()) },
            },
            history: vec![],
            history_text: vec![],
        };
        (step, gt_id)
    }

    fn fixture_ranker(step: &Step) -> RankerWeights {
        let task = Task {
            task_id: "t".into(),
            instruction: "search flights to oslo".into(),
            website: "w".into(),
            domain: "d".into(),
            steps: vec![step.clone()],
        };
        let cfg = RankerConfig {
            d_model: 16,
            layers: 1,
            heads: 2,
            ffn: 32,
            max_seq: 96,
            m: 2,
            d_v: 8,
            d_h: 16,
            patch: 16,
        };
        RankerWeights::zeros(cfg, build_vocab(std::slice::from_ref(&task), 1))
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in [PredictorMode::DualVcr, PredictorMode::Bare] {
            assert_eq!(mode.name().parse::<PredictorMode>().unwrap(), mode);
        }
        assert!("mindact".parse::<PredictorMode>().is_err());
    }

    #[test]
    fn bare_blocks_drop_neighbors_and_dual_blocks_keep_them() {
        let (step, _) = fixture_step(1);
        let doc = &step.document;
        let bare =
            block_for(doc, "e1", 2, NeighborSource::Visual, 0, PredictorMode::Bare).unwrap();
        assert_eq!(bare, "[button] search flights");
        let dual =
            block_for(doc, "e1", 2, NeighborSource::Visual, 0, PredictorMode::DualVcr).unwrap();
        assert_eq!(dual, "[button] search flights <NBR> [button] home <NBR> [button] cart");
        // m = 0 dual-view degrades to the bare block.
        let m0 = block_for(doc, "e1", 0, NeighborSource::Visual, 0, PredictorMode::DualVcr).unwrap();
        assert_eq!(m0, bare);
    }

    #[test]
    fn gt_chooser_with_oracle_op_reproduces_the_ground_truth_action() {
        let (step, gt_id) = fixture_step(1);
        let ranker = fixture_ranker(&step);
        let chooser = GtChooser { gt_element_id: gt_id };
        let op = OracleOpPredictor { operation: step.gt_action.operation.clone() };
        let pred = predict_action(
            &step,
            "search flights to oslo",
            None,
            &ranker,
            &chooser,
            &op,
            &PredictorSettings { m: 2, ..PredictorSettings::default() },
        )
        .unwrap();
        assert_eq!(pred.ranked.len(), 3);
        assert_eq!(pred.action.as_ref(), Some(&step.gt_action));
    }

    #[test]
    fn empty_candidate_set_yields_no_action() {
        let (mut step, _) = fixture_step(0);
        let elements: Vec<Element> = step
            .document
            .elements()
            .iter()
            .map(|e| Element { actionable: false, ..e.clone() })
            .collect();
        step.document = HtmlDocument::new(elements, None).unwrap();
        let ranker = fixture_ranker(&fixture_step(0).0);
        let pred = predict_action(
            &step,
            "anything",
            None,
            &ranker,
            &NoneChooser,
            &OracleOpPredictor { operation: Operation::click() },
            &PredictorSettings::default(),
        )
        .unwrap();
        assert!(pred.ranked.is_empty());
        assert_eq!(pred.election.winner, None);
        assert_eq!(pred.action, None);
    }

    #[test]
    fn abstaining_chooser_yields_no_action() {
        let (step, _) = fixture_step(0);
        let ranker = fixture_ranker(&step);
        let pred = predict_action(
            &step,
            "anything",
            None,
            &ranker,
            &NoneChooser,
            &OracleOpPredictor { operation: Operation::click() },
            &PredictorSettings::default(),
        )
        .unwrap();
        assert_eq!(pred.election.winner, None);
        assert_eq!(pred.action, None);
    }

    #[test]
    fn prediction_is_deterministic() {
        let (step, gt_id) = fixture_step(2);
        let ranker = fixture_ranker(&step);
        let chooser = GtChooser { gt_element_id: gt_id };
        let op = OracleOpPredictor { operation: step.gt_action.operation.clone() };
        let settings = PredictorSettings { m: 2, ..PredictorSettings::default() };
        let a = predict_action(&step, "x", None, &ranker, &chooser, &op, &settings).unwrap();
        let b = predict_action(&step, "x", None, &ranker, &chooser, &op, &settings).unwrap();
        assert_eq!(a, b);
    }
}
