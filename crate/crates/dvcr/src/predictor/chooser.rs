//! The learned element chooser: the shared text encoder scores every option
//! block (plus the literal "None" option), softmax across the group, trained
//! with cross entropy against the ground-truth option.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::document::Task;
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamSet};
use crate::predictor::election::ElementChooser;
use crate::predictor::snippet::Snippet;
use crate::predictor::text_encoder::{TextEncCache, TextEncoder, TextEncoderConfig};
use crate::predictor::{block_for, PredictorMode};
use crate::ranker::train::sample_negatives;
use crate::ranker::vocab::{build_vocab, Vocab};
use crate::seed;
use crate::spatial::NeighborSource;

/// Surface text of the abstain option.
pub const NONE_TEXT: &str = "None";

#[derive(Debug, Clone, PartialEq)]
pub struct ChooserWeights {
    pub enc: TextEncoder,
    /// d_model × 1.
    pub head_w: Array2<f64>,
    /// 1 × 1.
    pub head_b: Array2<f64>,
}

impl ChooserWeights {
    pub fn init(rng: &mut impl Rng, cfg: TextEncoderConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        ChooserWeights {
            enc: TextEncoder::init(rng, cfg, vocab),
            head_w: crate::nn::gaussian(rng, (d, 1)),
            head_b: Array2::zeros((1, 1)),
        }
    }

    pub fn zeros(cfg: TextEncoderConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        ChooserWeights {
            enc: TextEncoder::zeros(cfg, vocab),
            head_w: Array2::zeros((d, 1)),
            head_b: Array2::zeros((1, 1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.enc.cfg.clone(), self.enc.vocab.clone())
    }

    fn option_logit(
        &self,
        instruction: &str,
        history_text: &[String],
        text: &str,
    ) -> Result<(f64, OptionCache)> {
        let ids = self.enc.compose(instruction, history_text, text).ids;
        let (out, cache) = self.enc.forward(&ids)?;
        let cls = out.row(0).to_owned();
        let logit = cls.dot(&self.head_w.column(0)) + self.head_b[[0, 0]];
        Ok((logit, OptionCache { enc: cache, cls, seq_len: out.nrows() }))
    }

    /// Softmax probabilities over a group's options followed by the "None"
    /// option (always last). Sums to 1 within float error.
    pub fn option_probs(
        &self,
        instruction: &str,
        history_text: &[String],
        snippet: &Snippet,
    ) -> Result<Vec<f64>> {
        let mut logits = Vec::with_capacity(snippet.options.len() + 1);
        for o in &snippet.options {
            logits.push(self.option_logit(instruction, history_text, &o.text)?.0);
        }
        logits.push(self.option_logit(instruction, history_text, NONE_TEXT)?.0);
        Ok(softmax(&logits))
    }

    fn backward_option(&self, cache: &OptionCache, d_logit: f64, grads: &mut ChooserWeights) {
        for (j, g) in grads.head_w.column_mut(0).iter_mut().enumerate() {
            *g += cache.cls[j] * d_logit;
        }
        grads.head_b[[0, 0]] += d_logit;
        let mut d_out = Array2::zeros((cache.seq_len, self.enc.cfg.d_model));
        d_out.row_mut(0).assign(&(&self.head_w.column(0) * d_logit));
        self.enc.backward_into(&cache.enc, &d_out, &mut grads.enc);
    }
}

impl ParamSet for ChooserWeights {
    fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = self.enc.params();
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = self.enc.params_mut();
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }
}

impl ElementChooser for ChooserWeights {
    fn choose(
        &self,
        instruction: &str,
        history_text: &[String],
        snippet: &Snippet,
    ) -> Result<Option<usize>> {
        let probs = self.option_probs(instruction, history_text, snippet)?;
        let best = argmax(&probs);
        Ok((best < snippet.options.len()).then_some(best))
    }
}

#[derive(Debug, Clone)]
struct OptionCache {
    enc: TextEncCache,
    cls: Array1<f64>,
    seq_len: usize,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// First index of the maximum (ties resolve to the earliest option).
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------
// Training.

#[derive(Debug, Clone, PartialEq)]
pub struct ChooserTrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    /// Groups per optimizer step.
    pub batch_size: usize,
    pub group_size: usize,
    /// Neighbors per option block in dual-view mode.
    pub m: usize,
    pub neighbor_source: NeighborSource,
    pub mode: PredictorMode,
    pub vocab_min_count: usize,
    pub model: TextEncoderConfig,
}

impl Default for ChooserTrainConfig {
    fn default() -> Self {
        ChooserTrainConfig {
            seed: 7,
            epochs: 5,
            lr: 5e-5,
            batch_size: 32,
            group_size: 5,
            m: 5,
            neighbor_source: NeighborSource::Visual,
            mode: PredictorMode::DualVcr,
            vocab_min_count: 1,
            model: TextEncoderConfig::default(),
        }
    }
}

impl ChooserTrainConfig {
    /// Small-and-fast settings for the synthetic benchmark.
    pub fn synth_preset() -> Self {
        ChooserTrainConfig {
            seed: 7,
            epochs: 4,
            lr: 1e-3,
            batch_size: 8,
            group_size: 5,
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
        if self.batch_size == 0 || self.group_size == 0 {
            return Err(Error::Config("batch_size and group_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChooserTrainOutcome {
    pub weights: ChooserWeights,
    pub epoch_losses: Vec<f64>,
    pub skipped_steps: usize,
}

/// One training group: option texts (None excluded) and the target index;
/// `target == option_texts.len()` selects the None option.
#[derive(Debug, Clone)]
struct ChooserExample {
    instruction: String,
    history: Vec<String>,
    option_texts: Vec<String>,
    target: usize,
}

fn precompute_groups(
    tasks: &[Task],
    cfg: &ChooserTrainConfig,
) -> Result<(Vec<ChooserExample>, usize)> {
    let seed_str = cfg.seed.to_string();
    let mut groups = Vec::new();
    let mut skipped = 0usize;
    for task in tasks {
        for step in &task.steps {
            let doc = &step.document;
            let gt_id = &step.gt_action.element_id;
            let usable = doc.get(gt_id).map(|e| e.visible && e.actionable).unwrap_or(false);
            if !usable {
                skipped += 1;
                continue;
            }
            let pool: Vec<&str> = doc
                .elements()
                .iter()
                .filter(|e| e.visible && e.actionable && &e.id != gt_id)
                .map(|e| e.id.as_str())
                .collect();
            if pool.is_empty() {
                skipped += 1;
                continue;
            }
            let step_str = step.step_id.to_string();
            let block = |id: &str| -> Result<String> {
                let nbr_seed =
                    seed::derive(&["chooser-nbr", &seed_str, &task.task_id, &step_str, id]);
                block_for(doc, id, cfg.m, cfg.neighbor_source, nbr_seed, cfg.mode)
            };

            // Positive group: GT plus sampled negatives, order shuffled so
            // the target position carries no signal.
            let negs = sample_negatives(
                &pool,
                cfg.group_size - 1,
                &["cpos", &seed_str, &task.task_id, &step_str],
            );
            let mut ids: Vec<&str> = Vec::with_capacity(negs.len() + 1);
            ids.push(gt_id);
            ids.extend(negs.iter().map(|s| s.as_str()));
            let mut order_rng = ChaCha8Rng::seed_from_u64(seed::derive(&[
                "cshuffle", &seed_str, &task.task_id, &step_str,
            ]));
            ids.shuffle(&mut order_rng);
            let target = ids.iter().position(|id| id == gt_id).expect("gt stays in its group");
            let mut option_texts = Vec::with_capacity(ids.len());
            for id in &ids {
                option_texts.push(block(id)?);
            }
            groups.push(ChooserExample {
                instruction: task.instruction.clone(),
                history: step.history_text.clone(),
                option_texts,
                target,
            });

            // Abstain group: negatives only; the right answer is "None".
            let none_ids = sample_negatives(
                &pool,
                cfg.group_size,
                &["cnone", &seed_str, &task.task_id, &step_str],
            );
            let mut option_texts = Vec::with_capacity(none_ids.len());
            for id in &none_ids {
                option_texts.push(block(id)?);
            }
            groups.push(ChooserExample {
                instruction: task.instruction.clone(),
                history: step.history_text.clone(),
                target: option_texts.len(),
                option_texts,
            });
        }
    }
    Ok((groups, skipped))
}

/// Cross-entropy loss of one group, with gradients accumulated into `grads`
/// scaled by `grad_scale` (used for batch averaging).
fn group_pass(
    w: &ChooserWeights,
    g: &ChooserExample,
    grad_scale: f64,
    grads: Option<&mut ChooserWeights>,
) -> Result<f64> {
    let mut logits = Vec::with_capacity(g.option_texts.len() + 1);
    let mut caches = Vec::with_capacity(g.option_texts.len() + 1);
    for text in g.option_texts.iter().map(String::as_str).chain([NONE_TEXT]) {
        let (logit, cache) = w.option_logit(&g.instruction, &g.history, text)?;
        logits.push(logit);
        caches.push(cache);
    }
    let probs = softmax(&logits);
    let loss = -probs[g.target].max(1e-300).ln();
    if let Some(grads) = grads {
        for (i, cache) in caches.iter().enumerate() {
            let indicator = (i == g.target) as usize as f64;
            w.backward_option(cache, (probs[i] - indicator) * grad_scale, grads);
        }
    }
    Ok(loss)
}

pub fn train_chooser(tasks: &[Task], cfg: &ChooserTrainConfig) -> Result<ChooserTrainOutcome> {
    cfg.validate()?;
    let seed_str = cfg.seed.to_string();
    let vocab = build_vocab(tasks, cfg.vocab_min_count);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed::derive(&["chooser-init", &seed_str]));
    let mut w = ChooserWeights::init(&mut init_rng, cfg.model.clone(), vocab);

    let (groups, skipped_steps) = precompute_groups(tasks, cfg)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    if groups.is_empty() {
        return Ok(ChooserTrainOutcome { weights: w, epoch_losses, skipped_steps });
    }

    let mut adam = Adam::new(cfg.lr);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..groups.len()).collect();
        let mut erng = ChaCha8Rng::seed_from_u64(seed::derive(&[
            "chooser-epoch", &seed_str, &epoch.to_string(),
        ]));
        order.shuffle(&mut erng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = w.zeros_like();
            let grad_scale = 1.0 / batch.len() as f64;
            for &gi in batch {
                loss_sum += group_pass(&w, &groups[gi], grad_scale, Some(&mut grads))?;
            }
            adam.step(&mut w, &grads);
        }
        epoch_losses.push(loss_sum / groups.len() as f64);
    }
    Ok(ChooserTrainOutcome { weights: w, epoch_losses, skipped_steps })
}
