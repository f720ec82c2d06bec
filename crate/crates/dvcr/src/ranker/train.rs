//! Ranker training: binary cross entropy over (ground-truth, sampled
//! negative) candidates, one step per batch, Adam updates.
//!
//! Everything that depends only on the corpus — vocabulary, neighbor lists,
//! assembled inputs, negative choices — is fixed up front from the run seed,
//! so the weight trajectory is a pure function of (corpus, config).

use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::document::Task;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::ranker::assemble::{assemble, DualViewInput};
use crate::ranker::model::{bce_with_logit, RankerConfig, RankerWeights};
use crate::ranker::vocab::build_vocab;
use crate::seed;
use crate::spatial::{neighbors, NeighborSource};
use crate::visual::{load_image, patch_featurize, FeatureGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    /// Negatives sampled per step; steps with no negative candidate are
    /// skipped entirely.
    pub negatives: usize,
    /// Tokens below this corpus frequency stay out of the vocabulary.
    pub vocab_min_count: usize,
    pub neighbor_source: NeighborSource,
    pub model: RankerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 5,
            lr: 3e-5,
            negatives: 5,
            vocab_min_count: 1,
            neighbor_source: NeighborSource::Visual,
            model: RankerConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale setup for the synthetic benchmark: a smaller encoder and a
    /// larger learning rate, tuned so a few epochs separate planted signal
    /// from noise.
    pub fn synth_preset() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 6,
            lr: 1e-3,
            negatives: 4,
            vocab_min_count: 1,
            neighbor_source: NeighborSource::Visual,
            model: RankerConfig {
                d_model: 32,
                layers: 2,
                heads: 2,
                ffn: 64,
                max_seq: 128,
                m: 3,
                d_v: 8,
                d_h: 16,
                patch: 16,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives per step must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: RankerWeights,
    /// Mean per-batch loss, one entry per epoch (empty when every step was
    /// skipped).
    pub epoch_losses: Vec<f64>,
    /// Steps dropped for lacking a usable positive or any negative.
    pub skipped_steps: usize,
}

/// Loads and patch-featurizes every screenshot referenced by `tasks`,
/// keyed by the reference string as it appears in the corpus.
pub fn load_grids(
    dir: &Path,
    tasks: &[Task],
    patch: usize,
    d_v: usize,
) -> Result<IndexMap<String, FeatureGrid>> {
    let mut grids = IndexMap::new();
    for task in tasks {
        for step in &task.steps {
            let Some(name) = &step.document.screenshot else { continue };
            if grids.contains_key(name) {
                continue;
            }
            let img = load_image(dir.join(name))?;
            grids.insert(name.clone(), patch_featurize(&img, patch, d_v));
        }
    }
    Ok(grids)
}

/// One training batch: every scored candidate of one step.
struct StepBatch {
    /// (assembled input, label): the ground-truth element first, then the
    /// sampled negatives.
    inputs: Vec<(DualViewInput, f64)>,
}

/// Sampled negative candidates for one step: visible actionable non-ground-
/// truth element ids, without replacement, at most `want`.
pub(crate) fn sample_negatives(
    pool: &[&str],
    want: usize,
    seed_parts: &[&str],
) -> Vec<String> {
    let mut ids: Vec<String> = pool.iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_parts));
    ids.shuffle(&mut rng);
    ids.truncate(want);
    ids
}

fn precompute_batches(
    tasks: &[Task],
    grids: &IndexMap<String, FeatureGrid>,
    cfg: &TrainConfig,
    weights: &RankerWeights,
) -> Result<(Vec<StepBatch>, usize)> {
    let seed_str = cfg.seed.to_string();
    let params = cfg.model.assemble_params();
    let mut batches = Vec::new();
    let mut skipped = 0usize;
    for task in tasks {
        for step in &task.steps {
            let doc = &step.document;
            let gt_id = &step.gt_action.element_id;
            let usable = |id: &str| doc.get(id).map(|e| e.visible && e.actionable).unwrap_or(false);
            if !usable(gt_id) {
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
            let negs = sample_negatives(
                &pool,
                cfg.negatives,
                &["neg", &seed_str, &task.task_id, &step_str],
            );
            let grid = doc.screenshot.as_ref().and_then(|s| grids.get(s));
            let mut inputs = Vec::with_capacity(1 + negs.len());
            for (id, label) in std::iter::once((gt_id.as_str(), 1.0))
                .chain(negs.iter().map(|n| (n.as_str(), 0.0)))
            {
                let nbr_seed =
                    seed::derive(&["train-nbr", &seed_str, &task.task_id, &step_str, id]);
                let nbrs = neighbors(doc, id, cfg.model.m, cfg.neighbor_source, nbr_seed)?;
                let input = assemble(
                    doc,
                    doc.require(id)?,
                    &nbrs,
                    &task.instruction,
                    &step.history_text,
                    grid,
                    &params,
                    &weights.vocab,
                )?;
                inputs.push((input, label));
            }
            batches.push(StepBatch { inputs });
        }
    }
    Ok((batches, skipped))
}

/// Mean loss over one batch, with gradients accumulated into `grads`.
fn batch_pass(w: &RankerWeights, batch: &StepBatch, grads: &mut RankerWeights) -> Result<f64> {
    let scale = 1.0 / batch.inputs.len() as f64;
    let mut loss_sum = 0.0;
    for (input, label) in &batch.inputs {
        let (_, cache) = w.score_cached(input)?;
        let (loss, d_logit) = bce_with_logit(cache.logit(), *label);
        loss_sum += loss;
        w.backward_into(&cache, d_logit * scale, grads);
    }
    Ok(loss_sum * scale)
}

/// Mean loss only — the forward half of [`batch_pass`].
#[cfg(test)]
fn batch_loss(w: &RankerWeights, batch: &StepBatch) -> Result<f64> {
    let mut loss_sum = 0.0;
    for (input, label) in &batch.inputs {
        let (_, cache) = w.score_cached(input)?;
        loss_sum += bce_with_logit(cache.logit(), *label).0;
    }
    Ok(loss_sum / batch.inputs.len() as f64)
}

pub fn train_ranker(
    tasks: &[Task],
    grids: &IndexMap<String, FeatureGrid>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seed_str = cfg.seed.to_string();
    let vocab = build_vocab(tasks, cfg.vocab_min_count);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed::derive(&["init", &seed_str]));
    let mut w = RankerWeights::init(&mut init_rng, cfg.model.clone(), vocab);

    let (batches, skipped_steps) = precompute_batches(tasks, grids, cfg, &w)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    if batches.is_empty() {
        return Ok(TrainOutcome { weights: w, epoch_losses, skipped_steps });
    }

    let mut adam = Adam::new(cfg.lr);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..batches.len()).collect();
        let mut erng =
            ChaCha8Rng::seed_from_u64(seed::derive(&["epoch", &seed_str, &epoch.to_string()]));
        order.shuffle(&mut erng);

        let mut loss_sum = 0.0;
        for &bi in &order {
            let mut grads = w.zeros_like();
            loss_sum += batch_pass(&w, &batches[bi], &mut grads)?;
            adam.step(&mut w, &grads);
        }
        epoch_losses.push(loss_sum / batches.len() as f64);
    }
    Ok(TrainOutcome { weights: w, epoch_losses, skipped_steps })
}
