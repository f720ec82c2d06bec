//! Step-level navigation metrics: Recall@K over the ranker's candidates,
//! element accuracy, token-level operation F1, and step success rate, each
//! step judged independently against ground-truth history.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::document::{Action, Operation, Step, Task};
use crate::error::{Error, Result};
use crate::predictor::{
    predict_action, predict_from_ranked, ChooserWeights, ElementChooser, GtChooser,
    LexicalChooser, NoneChooser, OpHead, OperationPredictor, OracleOpPredictor,
    PredictorSettings,
};
use crate::ranker::model::{candidate_elements, RankerWeights};
use crate::ranker::vocab::tokenize_str;
use crate::visual::FeatureGrid;

/// The Recall@K columns reported everywhere.
pub const RECALL_KS: [usize; 4] = [1, 5, 10, 50];

/// What one evaluated step produced, reduced to exactly what the metrics
/// consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub task_id: String,
    pub step_id: usize,
    /// Ranker candidates, best first, duplicates-free.
    pub ranked_ids: Vec<String>,
    /// `None` when the election abstained.
    pub predicted: Option<Action>,
    pub gt: Action,
}

impl StepOutcome {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for id in &self.ranked_ids {
            if !seen.insert(id) {
                return Err(Error::invariant(
                    format!("{}/{}", self.task_id, self.step_id),
                    format!("duplicate ranked id {id:?}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keyed by K in ascending order.
    pub recall_at: IndexMap<usize, f64>,
    pub element_accuracy: f64,
    pub operation_f1: f64,
    pub step_success_rate: f64,
    pub steps: usize,
    pub tasks: usize,
}

impl EvalReport {
    /// Aligned two-row table mirroring the usual results layout.
    pub fn table(&self) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for (k, v) in &self.recall_at {
            header.push_str(&format!("{:>10}", format!("R@{k}")));
            row.push_str(&format!("{:>10.4}", v));
        }
        for (name, v) in [
            ("Ele.Acc", self.element_accuracy),
            ("Op.F1", self.operation_f1),
            ("StepSR", self.step_success_rate),
        ] {
            header.push_str(&format!("{name:>10}"));
            row.push_str(&format!("{v:>10.4}"));
        }
        header.push_str(&format!("{:>8}{:>8}", "steps", "tasks"));
        row.push_str(&format!("{:>8}{:>8}", self.steps, self.tasks));
        format!("{header}\n{row}\n")
    }
}

/// Compensated (Kahan) sum, so aggregation order cannot leak into results.
fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

fn mean_over<F: Fn(&StepOutcome) -> f64>(outcomes: &[StepOutcome], f: F) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    Ok(kahan_sum(outcomes.iter().map(f)) / outcomes.len() as f64)
}

/// Fraction of steps whose ground-truth element appears among the first
/// `k` ranked candidates.
pub fn recall_at_k(outcomes: &[StepOutcome], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("recall K must be ≥ 1".into()));
    }
    mean_over(outcomes, |o| {
        let top = &o.ranked_ids[..k.min(o.ranked_ids.len())];
        top.contains(&o.gt.element_id) as usize as f64
    })
}

/// Fraction of steps whose predicted element matches the ground truth;
/// abstentions count as wrong.
pub fn element_accuracy(outcomes: &[StepOutcome]) -> Result<f64> {
    mean_over(outcomes, |o| element_hit(o) as usize as f64)
}

fn element_hit(o: &StepOutcome) -> bool {
    o.predicted.as_ref().map(|a| a.element_id == o.gt.element_id).unwrap_or(false)
}

/// Token multiset of an operation's textual form: the op-type token plus
/// the tokenized argument.
pub fn op_tokens(op: &Operation) -> Vec<String> {
    tokenize_str(&op.render())
}

fn multiset_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
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

/// Token-level F1 between a predicted and ground-truth operation, as the
/// multiset Dice score 2·overlap / (|pred| + |gt|) — algebraically equal to
/// 2PR/(P+R) but exact where the textbook form picks up rounding (e.g. the
/// overlap-2-of-3-vs-2 case is exactly 0.8). An abstention scores 0.
pub fn single_op_f1(predicted: Option<&Operation>, gt: &Operation) -> f64 {
    let Some(p) = predicted else { return 0.0 };
    let pt = op_tokens(p);
    let gt_t = op_tokens(gt);
    if pt.is_empty() && gt_t.is_empty() {
        return 1.0; // unreachable in practice: the op token is always present
    }
    2.0 * multiset_overlap(&pt, &gt_t) as f64 / (pt.len() + gt_t.len()) as f64
}

/// Mean per-step operation F1.
pub fn operation_f1(outcomes: &[StepOutcome]) -> Result<f64> {
    mean_over(outcomes, |o| single_op_f1(o.predicted.as_ref().map(|a| &a.operation), &o.gt.operation))
}

/// Fraction of steps where the element matches AND the operation F1 is
/// exactly 1.0.
pub fn step_success_rate(outcomes: &[StepOutcome]) -> Result<f64> {
    mean_over(outcomes, |o| {
        let op_exact =
            single_op_f1(o.predicted.as_ref().map(|a| &a.operation), &o.gt.operation) == 1.0;
        (element_hit(o) && op_exact) as usize as f64
    })
}

/// All four metrics over one outcome set.
pub fn aggregate(outcomes: &[StepOutcome]) -> Result<EvalReport> {
    for o in outcomes {
        o.validate()?;
    }
    let mut recall_at = IndexMap::new();
    for k in RECALL_KS {
        recall_at.insert(k, recall_at_k(outcomes, k)?);
    }
    let tasks = outcomes
        .iter()
        .map(|o| o.task_id.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len();
    Ok(EvalReport {
        recall_at,
        element_accuracy: element_accuracy(outcomes)?,
        operation_f1: operation_f1(outcomes)?,
        step_success_rate: step_success_rate(outcomes)?,
        steps: outcomes.len(),
        tasks,
    })
}

// ---------------------------------------------------------------------
// Corpus-level evaluation.

/// Candidate ranking used during evaluation.
pub enum RankerSpec<'a> {
    Trained(&'a RankerWeights),
    /// Ground truth first, remaining candidates in document order — for
    /// isolating downstream components.
    Oracle,
}

/// Element chooser used during evaluation. Scripted variants re-derive the
/// target per step.
pub enum ChooserSpec<'a> {
    Trained(&'a ChooserWeights),
    Lexical,
    ScriptedGt,
    ScriptedNone,
}

/// Operation predictor used during evaluation.
pub enum OpSpec<'a> {
    Trained(&'a OpHead),
    /// Returns each step's ground-truth operation.
    Oracle,
}

/// The perfect ranking: ground truth first (score 1.0), remaining visible
/// actionables in document order (score 0.0), truncated to `k`.
pub fn oracle_rank(step: &Step, k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = candidate_elements(step)
        .iter()
        .map(|e| {
            let score = (e.id == step.gt_action.element_id) as usize as f64;
            (e.id.clone(), score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    ranked.truncate(k);
    ranked
}

/// Evaluates every step of `tasks` independently (ground-truth history) and
/// aggregates the four metrics. Returns the per-step outcomes alongside the
/// report so callers can inspect or persist them.
pub fn evaluate(
    tasks: &[Task],
    grids: &IndexMap<String, FeatureGrid>,
    ranker: &RankerSpec,
    chooser: &ChooserSpec,
    op: &OpSpec,
    settings: &PredictorSettings,
) -> Result<(EvalReport, Vec<StepOutcome>)> {
    let mut outcomes = Vec::new();
    for task in tasks {
        for step in &task.steps {
            let gt_chooser;
            let step_chooser: &dyn ElementChooser = match chooser {
                ChooserSpec::Trained(w) => *w,
                ChooserSpec::Lexical => &LexicalChooser,
                ChooserSpec::ScriptedGt => {
                    gt_chooser = GtChooser { gt_element_id: step.gt_action.element_id.clone() };
                    &gt_chooser
                }
                ChooserSpec::ScriptedNone => &NoneChooser,
            };
            let oracle_op;
            let step_op: &dyn OperationPredictor = match op {
                OpSpec::Trained(h) => *h,
                OpSpec::Oracle => {
                    oracle_op = OracleOpPredictor { operation: step.gt_action.operation.clone() };
                    &oracle_op
                }
            };
            let prediction = match ranker {
                RankerSpec::Trained(w) => {
                    let grid =
                        step.document.screenshot.as_ref().and_then(|name| grids.get(name));
                    predict_action(step, &task.instruction, grid, w, step_chooser, step_op, settings)?
                }
                RankerSpec::Oracle => predict_from_ranked(
                    step,
                    &task.instruction,
                    oracle_rank(step, settings.k),
                    step_chooser,
                    step_op,
                    settings,
                )?,
            };
            outcomes.push(StepOutcome {
                task_id: task.task_id.clone(),
                step_id: step.step_id,
                ranked_ids: prediction.ranked.into_iter().map(|(id, _)| id).collect(),
                predicted: prediction.action,
                gt: step.gt_action.clone(),
            });
        }
    }
    Ok((aggregate(&outcomes)?, outcomes))
}
