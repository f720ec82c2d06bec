//! Operation prediction: a three-way op-type classifier over the CLS state
//! plus start/end span pointers over the instruction tokens for the
//! argument of TYPE and SELECT.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::document::{OpKind, Operation, Task};
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamSet};
use crate::predictor::text_encoder::{ComposedInput, TextEncoder, TextEncoderConfig};
use crate::predictor::{block_for, PredictorMode};
use crate::ranker::vocab::{build_vocab, tokenize, Vocab};
use crate::seed;
use crate::spatial::NeighborSource;

/// Class order; ties in the classifier resolve to the earliest, so an
/// all-zero head predicts CLICK.
pub const OP_CLASSES: [OpKind; 3] = [OpKind::Click, OpKind::Type, OpKind::Select];

pub fn class_index(op: OpKind) -> usize {
    OP_CLASSES.iter().position(|k| *k == op).expect("every op kind is a class")
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpHead {
    pub enc: TextEncoder,
    /// d_model × 3.
    pub cls_w: Array2<f64>,
    /// 1 × 3.
    pub cls_b: Array2<f64>,
    /// d_model × 1 start-pointer scorer.
    pub start_w: Array2<f64>,
    /// d_model × 1 end-pointer scorer.
    pub end_w: Array2<f64>,
}

impl OpHead {
    pub fn init(rng: &mut impl Rng, cfg: TextEncoderConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        OpHead {
            enc: TextEncoder::init(rng, cfg, vocab),
            cls_w: crate::nn::gaussian(rng, (d, 3)),
            cls_b: Array2::zeros((1, 3)),
            start_w: crate::nn::gaussian(rng, (d, 1)),
            end_w: crate::nn::gaussian(rng, (d, 1)),
        }
    }

    pub fn zeros(cfg: TextEncoderConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        OpHead {
            enc: TextEncoder::zeros(cfg, vocab),
            cls_w: Array2::zeros((d, 3)),
            cls_b: Array2::zeros((1, 3)),
            start_w: Array2::zeros((d, 1)),
            end_w: Array2::zeros((d, 1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.enc.cfg.clone(), self.enc.vocab.clone())
    }
}

impl ParamSet for OpHead {
    fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = self.enc.params();
        out.push(("op.cls_w".to_string(), &self.cls_w));
        out.push(("op.cls_b".to_string(), &self.cls_b));
        out.push(("op.start_w".to_string(), &self.start_w));
        out.push(("op.end_w".to_string(), &self.end_w));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = self.enc.params_mut();
        out.push(("op.cls_w".to_string(), &mut self.cls_w));
        out.push(("op.cls_b".to_string(), &mut self.cls_b));
        out.push(("op.start_w".to_string(), &mut self.start_w));
        out.push(("op.end_w".to_string(), &mut self.end_w));
        out
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Best span (start, end) by `starts[s] + ends[e]` with `s ≤ e`; ties go to
/// the earliest start, then earliest end.
fn best_span(starts: &[f64], ends: &[f64]) -> (usize, usize) {
    debug_assert_eq!(starts.len(), ends.len());
    let mut best = (0usize, 0usize);
    let mut best_score = f64::NEG_INFINITY;
    for (s, sv) in starts.iter().enumerate() {
        for (e, ev) in ends.iter().enumerate().skip(s) {
            let score = sv + ev;
            if score > best_score {
                best_score = score;
                best = (s, e);
            }
        }
    }
    best
}

/// Classifies the op type from the CLS state of
/// `[CLS] instruction [SEP] history [SEP] block`; for TYPE/SELECT, extracts
/// the instruction span maximizing start+end pointer scores as the argument.
/// An empty instruction (no span to point at) degrades to CLICK.
pub fn predict_operation(
    instruction: &str,
    history_text: &[String],
    block: &str,
    head: &OpHead,
) -> Result<Operation> {
    let composed = head.enc.compose(instruction, history_text, block);
    let (out, _) = head.enc.forward(&composed.ids)?;
    let cls = out.row(0);
    let logits: Vec<f64> = (0..3)
        .map(|j| cls.dot(&head.cls_w.column(j)) + head.cls_b[[0, j]])
        .collect();
    let kind = OP_CLASSES[argmax(&logits)];
    if kind == OpKind::Click {
        return Ok(Operation::click());
    }
    if composed.instr_range.is_empty() {
        // Degenerate: TYPE/SELECT without any instruction tokens to draw an
        // argument from falls back to CLICK.
        return Ok(Operation::click());
    }
    let rows: Vec<usize> = composed.instr_range.clone().collect();
    let starts: Vec<f64> = rows.iter().map(|&i| out.row(i).dot(&head.start_w.column(0))).collect();
    let ends: Vec<f64> = rows.iter().map(|&i| out.row(i).dot(&head.end_w.column(0))).collect();
    let (s, e) = best_span(&starts, &ends);
    let arg = composed.instr_tokens[s..=e].join(" ");
    Ok(Operation { op: kind, arg: Some(arg) })
}

/// Anything that can produce the operation for a chosen element.
pub trait OperationPredictor {
    fn predict(&self, instruction: &str, history_text: &[String], block: &str)
        -> Result<Operation>;
}

impl OperationPredictor for OpHead {
    fn predict(
        &self,
        instruction: &str,
        history_text: &[String],
        block: &str,
    ) -> Result<Operation> {
        predict_operation(instruction, history_text, block, self)
    }
}

/// Test/evaluation double that returns a fixed operation (typically the
/// step's ground truth).
#[derive(Debug, Clone)]
pub struct OracleOpPredictor {
    pub operation: Operation,
}

impl OperationPredictor for OracleOpPredictor {
    fn predict(&self, _: &str, _: &[String], _: &str) -> Result<Operation> {
        Ok(self.operation.clone())
    }
}

// ---------------------------------------------------------------------
// Training.

#[derive(Debug, Clone, PartialEq)]
pub struct OpTrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    /// Examples per optimizer step.
    pub batch_size: usize,
    /// Neighbors per block in dual-view mode.
    pub m: usize,
    pub neighbor_source: NeighborSource,
    pub mode: PredictorMode,
    pub vocab_min_count: usize,
    pub model: TextEncoderConfig,
}

impl Default for OpTrainConfig {
    fn default() -> Self {
        OpTrainConfig {
            seed: 7,
            epochs: 5,
            lr: 5e-5,
            batch_size: 32,
            m: 5,
            neighbor_source: NeighborSource::Visual,
            mode: PredictorMode::DualVcr,
            vocab_min_count: 1,
            model: TextEncoderConfig::default(),
        }
    }
}

impl OpTrainConfig {
    pub fn synth_preset() -> Self {
        OpTrainConfig {
            seed: 7,
            epochs: 4,
            lr: 1e-3,
            batch_size: 8,
            m: 3,
            neighbor_source: NeighborSource::Visual,
            mode: PredictorMode::DualVcr,
            vocab_min_count: 1,
            model: TextEncoderConfig { d_model: 32, layers: 1, heads: 2, ffn: 64, max_seq: 128 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpTrainOutcome {
    pub weights: OpHead,
    pub epoch_losses: Vec<f64>,
    pub skipped_steps: usize,
    /// TYPE/SELECT steps whose argument was not found verbatim in the
    /// instruction (class still trained, span loss skipped).
    pub span_misses: usize,
}

#[derive(Debug, Clone)]
struct OpExample {
    instruction: String,
    history: Vec<String>,
    block: String,
    class: usize,
    /// Target (start, end) within the instruction tokens, when the argument
    /// occurs there verbatim.
    span: Option<(usize, usize)>,
}

/// First occurrence of `needle` as a contiguous subsequence of `haystack`.
fn find_subsequence(haystack: &[u32], needle: &[u32]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn precompute_examples(tasks: &[Task], cfg: &OpTrainConfig) -> Result<(Vec<OpExample>, usize, usize)> {
    let seed_str = cfg.seed.to_string();
    let vocab_probe = build_vocab(tasks, cfg.vocab_min_count);
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    let mut span_misses = 0usize;
    for task in tasks {
        for step in &task.steps {
            let doc = &step.document;
            let gt_id = &step.gt_action.element_id;
            let usable = doc.get(gt_id).map(|e| e.visible && e.actionable).unwrap_or(false);
            if !usable {
                skipped += 1;
                continue;
            }
            let step_str = step.step_id.to_string();
            let nbr_seed = seed::derive(&["op-nbr", &seed_str, &task.task_id, &step_str]);
            let block = block_for(doc, gt_id, cfg.m, cfg.neighbor_source, nbr_seed, cfg.mode)?;
            let op = &step.gt_action.operation;
            let span = match &op.arg {
                Some(arg) if op.op != OpKind::Click => {
                    let instr_ids = tokenize(&task.instruction, &vocab_probe);
                    let arg_ids = tokenize(arg, &vocab_probe);
                    match find_subsequence(&instr_ids, &arg_ids) {
                        Some(s) => Some((s, s + arg_ids.len() - 1)),
                        None => {
                            span_misses += 1;
                            None
                        }
                    }
                }
                _ => None,
            };
            examples.push(OpExample {
                instruction: task.instruction.clone(),
                history: step.history_text.clone(),
                block,
                class: class_index(op.op),
                span,
            });
        }
    }
    Ok((examples, skipped, span_misses))
}

/// Loss of one example (class CE plus span CEs when present), gradients
/// accumulated into `grads` scaled by `grad_scale`.
fn example_pass(
    w: &OpHead,
    ex: &OpExample,
    grad_scale: f64,
    grads: Option<&mut OpHead>,
) -> Result<f64> {
    let composed: ComposedInput = w.enc.compose(&ex.instruction, &ex.history, &ex.block);
    let (out, cache) = w.enc.forward(&composed.ids)?;
    let cls = out.row(0).to_owned();
    let logits: Vec<f64> =
        (0..3).map(|j| cls.dot(&w.cls_w.column(j)) + w.cls_b[[0, j]]).collect();
    let probs = softmax(&logits);
    let mut loss = -probs[ex.class].max(1e-300).ln();

    // Span targets can be cut off by truncation; treat that as a miss.
    let rows: Vec<usize> = composed.instr_range.clone().collect();
    let span = ex.span.filter(|&(_, e)| e < rows.len());
    let (mut starts, mut ends) = (Vec::new(), Vec::new());
    if let Some((s, e)) = span {
        starts = rows.iter().map(|&i| out.row(i).dot(&w.start_w.column(0))).collect();
        ends = rows.iter().map(|&i| out.row(i).dot(&w.end_w.column(0))).collect();
        let ps = softmax(&starts);
        let pe = softmax(&ends);
        loss += -ps[s].max(1e-300).ln();
        loss += -pe[e].max(1e-300).ln();
    }

    if let Some(grads) = grads {
        let d = w.enc.cfg.d_model;
        let mut d_out = Array2::zeros((out.nrows(), d));
        // Class head.
        for (j, &p) in probs.iter().enumerate() {
            let dz = (p - ((j == ex.class) as usize as f64)) * grad_scale;
            for k in 0..d {
                grads.cls_w[[k, j]] += cls[k] * dz;
                d_out[[0, k]] += w.cls_w[[k, j]] * dz;
            }
            grads.cls_b[[0, j]] += dz;
        }
        // Span heads.
        if let Some((s_t, e_t)) = span {
            let ps = softmax(&starts);
            let pe = softmax(&ends);
            for (pos, &row) in rows.iter().enumerate() {
                let ds = (ps[pos] - ((pos == s_t) as usize as f64)) * grad_scale;
                let de = (pe[pos] - ((pos == e_t) as usize as f64)) * grad_scale;
                let h = out.row(row);
                for k in 0..d {
                    grads.start_w[[k, 0]] += h[k] * ds;
                    grads.end_w[[k, 0]] += h[k] * de;
                    d_out[[row, k]] += w.start_w[[k, 0]] * ds + w.end_w[[k, 0]] * de;
                }
            }
        }
        w.enc.backward_into(&cache, &d_out, &mut grads.enc);
    }
    Ok(loss)
}

pub fn train_op_head(tasks: &[Task], cfg: &OpTrainConfig) -> Result<OpTrainOutcome> {
    cfg.validate()?;
    let seed_str = cfg.seed.to_string();
    let vocab = build_vocab(tasks, cfg.vocab_min_count);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed::derive(&["op-init", &seed_str]));
    let mut w = OpHead::init(&mut init_rng, cfg.model.clone(), vocab);

    let (examples, skipped_steps, span_misses) = precompute_examples(tasks, cfg)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    if examples.is_empty() {
        return Ok(OpTrainOutcome { weights: w, epoch_losses, skipped_steps, span_misses });
    }

    let mut adam = Adam::new(cfg.lr);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut erng = ChaCha8Rng::seed_from_u64(seed::derive(&[
            "op-epoch", &seed_str, &epoch.to_string(),
        ]));
        order.shuffle(&mut erng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = w.zeros_like();
            let grad_scale = 1.0 / batch.len() as f64;
            for &ei in batch {
                loss_sum += example_pass(&w, &examples[ei], grad_scale, Some(&mut grads))?;
            }
            adam.step(&mut w, &grads);
        }
        epoch_losses.push(loss_sum / examples.len() as f64);
    }
    Ok(OpTrainOutcome { weights: w, epoch_losses, skipped_steps, span_misses })
}
