//! The candidate ranker: token/position/rank embeddings plus the visual
//! projection feed the encoder; the CLS state through a sigmoid head gives
//! the candidate's relevance score.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::document::Element;
use crate::error::{Error, Result};
use crate::nn::{Encoder, EncoderCache, ParamSet};
use crate::ranker::assemble::{assemble, AssembleParams, DualViewInput, Slot};
use crate::ranker::vocab::Vocab;
use crate::spatial::{neighbors, NeighborSource};
use crate::visual::{FeatureGrid, Projection, ProjectionCache};
use crate::{document::Step, seed};

/// Architecture and geometry knobs, frozen into saved weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_seq: usize,
    /// Neighbor count M; rank ids run 0..=M plus the no-element rank M+1.
    pub m: usize,
    pub d_v: usize,
    pub d_h: usize,
    pub patch: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            d_model: 64,
            layers: 2,
            heads: 2,
            ffn: 128,
            max_seq: 256,
            m: 5,
            d_v: 8,
            d_h: 32,
            patch: 16,
        }
    }
}

impl RankerConfig {
    /// Rank id for CLS, SEP, query, and history positions.
    pub fn none_rank(&self) -> usize {
        self.m + 1
    }

    pub fn assemble_params(&self) -> AssembleParams {
        AssembleParams {
            m: self.m,
            max_seq: self.max_seq,
            patch: self.patch,
            d_v: self.d_v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.d_model,
            self.layers,
            self.heads,
            self.ffn,
            self.max_seq,
            self.d_v,
            self.d_h,
            self.patch,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.d_v < 6 {
            return Err(Error::Config("d_v must be at least 6".into()));
        }
        Ok(())
    }
}

/// All trainable state of the ranker plus its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerWeights {
    pub cfg: RankerConfig,
    pub vocab: Vocab,
    /// V × d_model.
    pub token_emb: Array2<f64>,
    /// max_seq × d_model.
    pub pos_emb: Array2<f64>,
    /// (M+2) × d_model: ranks 0..=M plus the no-element rank.
    pub rank_emb: Array2<f64>,
    pub proj: Projection,
    pub encoder: Encoder,
    /// d_model × 1.
    pub head_w: Array2<f64>,
    /// 1 × 1.
    pub head_b: Array2<f64>,
}

impl RankerWeights {
    pub fn init(rng: &mut impl Rng, cfg: RankerConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        RankerWeights {
            token_emb: crate::nn::gaussian(rng, (vocab.len(), d)),
            pos_emb: crate::nn::gaussian(rng, (cfg.max_seq, d)),
            rank_emb: crate::nn::gaussian(rng, (cfg.m + 2, d)),
            proj: Projection::init(rng, cfg.d_v, cfg.d_h, d),
            encoder: Encoder::init(rng, d, cfg.layers, cfg.heads, cfg.ffn),
            head_w: crate::nn::gaussian(rng, (d, 1)),
            head_b: Array2::zeros((1, 1)),
            cfg,
            vocab,
        }
    }

    pub fn zeros(cfg: RankerConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        RankerWeights {
            token_emb: Array2::zeros((vocab.len(), d)),
            pos_emb: Array2::zeros((cfg.max_seq, d)),
            rank_emb: Array2::zeros((cfg.m + 2, d)),
            proj: Projection::zeros(cfg.d_v, cfg.d_h, d),
            encoder: Encoder::zeros(d, cfg.layers, cfg.heads, cfg.ffn),
            head_w: Array2::zeros((d, 1)),
            head_b: Array2::zeros((1, 1)),
            cfg,
            vocab,
        }
    }

    /// Same-shape zero gradients (config and vocab ride along unchanged).
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg.clone(), self.vocab.clone())
    }

    fn embed(&self, input: &DualViewInput) -> Result<(Array2<f64>, Vec<RowInfo>)> {
        let slots = input.layout(self.cfg.none_rank());
        let n = slots.len();
        if n > self.cfg.max_seq {
            return Err(Error::ShapeMismatch {
                context: format!("sequence length {n} exceeds max_seq {}", self.cfg.max_seq),
            });
        }
        let d = self.cfg.d_model;
        let mut x = Array2::zeros((n, d));
        let mut rows = Vec::with_capacity(n);
        for (i, slot) in slots.iter().enumerate() {
            let info = match slot {
                Slot::Visual(vi) => {
                    let vt = &input.visual[*vi];
                    let (out, cache) = self.proj.forward_cached(&vt.feat)?;
                    x.row_mut(i).assign(&out);
                    RowInfo { token: None, rank: vt.rank, proj: Some(cache) }
                }
                other => {
                    let id = crate::ranker::assemble::slot_token_id(other)
                        .expect("non-visual slots carry a token id");
                    if id as usize >= self.token_emb.nrows() {
                        return Err(Error::ShapeMismatch {
                            context: format!("token id {id} outside vocabulary"),
                        });
                    }
                    let rank = match other {
                        Slot::Token(_, r) => *r,
                        _ => self.cfg.none_rank(),
                    };
                    RowInfo { token: Some(id), rank, proj: None }
                }
            };
            if let Some(id) = info.token {
                let mut row = x.row_mut(i);
                row += &self.token_emb.row(id as usize);
            }
            if info.rank >= self.rank_emb.nrows() {
                return Err(Error::ShapeMismatch {
                    context: format!("rank {} outside the rank table", info.rank),
                });
            }
            {
                let mut row = x.row_mut(i);
                row += &self.rank_emb.row(info.rank);
                row += &self.pos_emb.row(i);
            }
            rows.push(info);
        }
        Ok((x, rows))
    }

    /// Relevance probability in (0,1).
    pub fn score(&self, input: &DualViewInput) -> Result<f64> {
        Ok(self.score_cached(input)?.0)
    }

    pub fn score_cached(&self, input: &DualViewInput) -> Result<(f64, ScoreCache)> {
        let (x, rows) = self.embed(input)?;
        let (out, enc_cache) = self.encoder.forward(&x);
        let cls = out.row(0).to_owned();
        let logit = cls.dot(&self.head_w.column(0)) + self.head_b[[0, 0]];
        Ok((
            sigmoid(logit),
            ScoreCache { rows, enc_cache, cls, seq_len: out.nrows(), logit },
        ))
    }

    /// Accumulates dLoss/dParams into `grads` given dLoss/dLogit.
    pub fn backward_into(&self, cache: &ScoreCache, d_logit: f64, grads: &mut RankerWeights) {
        let d = self.cfg.d_model;
        for (j, g) in grads.head_w.column_mut(0).iter_mut().enumerate() {
            *g += cache.cls[j] * d_logit;
        }
        grads.head_b[[0, 0]] += d_logit;

        let mut d_out = Array2::zeros((cache.seq_len, d));
        {
            let mut first = d_out.row_mut(0);
            first.assign(&(&self.head_w.column(0) * d_logit));
        }
        let (enc_grads, d_x) = self.encoder.backward(&cache.enc_cache, &d_out);
        crate::nn::accumulate(&mut grads.encoder, &enc_grads);

        for (i, info) in cache.rows.iter().enumerate() {
            let drow = d_x.row(i);
            match (&info.token, &info.proj) {
                (Some(id), _) => {
                    let mut t = grads.token_emb.row_mut(*id as usize);
                    t += &drow;
                }
                (None, Some(pc)) => {
                    self.proj.backward(pc, &drow.to_owned(), &mut grads.proj);
                }
                _ => unreachable!("every row is a token or a visual slot"),
            }
            let mut r = grads.rank_emb.row_mut(info.rank);
            r += &drow;
            let mut p = grads.pos_emb.row_mut(i);
            p += &drow;
        }
    }
}

impl ParamSet for RankerWeights {
    fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("emb.token".to_string(), &self.token_emb),
            ("emb.pos".to_string(), &self.pos_emb),
            ("emb.rank".to_string(), &self.rank_emb),
        ];
        out.extend(self.proj.params());
        out.extend(self.encoder.params());
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![
            ("emb.token".to_string(), &mut self.token_emb),
            ("emb.pos".to_string(), &mut self.pos_emb),
            ("emb.rank".to_string(), &mut self.rank_emb),
        ];
        out.extend(self.proj.params_mut());
        out.extend(self.encoder.params_mut());
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }
}

/// Per-row provenance so backward can scatter embedding gradients.
#[derive(Debug, Clone)]
struct RowInfo {
    token: Option<u32>,
    rank: usize,
    proj: Option<ProjectionCache>,
}

/// Forward-pass state for one scored input.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    rows: Vec<RowInfo>,
    enc_cache: EncoderCache,
    cls: Array1<f64>,
    seq_len: usize,
    logit: f64,
}

impl ScoreCache {
    /// Pre-sigmoid head output, for loss computation.
    pub fn logit(&self) -> f64 {
        self.logit
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross entropy from the logit. Returns
/// (loss, dLoss/dLogit).
pub fn bce_with_logit(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
    (loss, sigmoid(z) - y)
}

/// The inverse of [`sigmoid`], for recovering logits from probabilities.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Seed for an element's neighbor list at inference time. Ranking and
/// downstream block construction must agree on this so the random-neighbor
/// ablation sees the same lists in both places.
pub fn neighbor_seed(step_id: usize, element_id: &str) -> u64 {
    seed::derive(&["rank-nbr", &step_id.to_string(), element_id])
}

/// Scores every visible actionable element of a step and returns the top
/// `k` by (score desc, document order). Neighbor lists come from `source`;
/// the random source derives its seed from (step id, element id).
pub fn rank_elements(
    step: &Step,
    instruction: &str,
    grid: Option<&FeatureGrid>,
    w: &RankerWeights,
    k: usize,
    source: NeighborSource,
) -> Result<Vec<(String, f64)>> {
    let doc = &step.document;
    let mut scored: Vec<(usize, String, f64)> = Vec::new();
    for (idx, e) in doc
        .elements()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.visible && e.actionable)
    {
        let nbrs = neighbors(doc, &e.id, w.cfg.m, source, neighbor_seed(step.step_id, &e.id))?;
        let input = assemble(
            doc,
            e,
            &nbrs,
            instruction,
            &step.history_text,
            grid,
            &w.cfg.assemble_params(),
            &w.vocab,
        )?;
        scored.push((idx, e.id.clone(), w.score(&input)?));
    }
    scored.sort_by(|a, b| b.2.partial_cmp(&a.2).expect("scores are finite").then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(_, id, s)| (id, s)).collect())
}

/// Convenience wrapper: candidate elements of a step in document order.
pub fn candidate_elements(step: &Step) -> Vec<&Element> {
    step.document
        .elements()
        .iter()
        .filter(|e| e.visible && e.actionable)
        .collect()
}
