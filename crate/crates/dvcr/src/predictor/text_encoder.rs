//! Text-only encoder shared by the trained chooser and the operation head:
//! token + position embeddings into the transformer encoder, over a
//! `[CLS] instruction [SEP] history [SEP] block` sequence.

use std::ops::Range;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Encoder, EncoderCache, ParamSet};
use crate::ranker::vocab::{tokenize, tokenize_str, Vocab, CLS, SEP};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_seq: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig { d_model: 64, layers: 2, heads: 2, ffn: 128, max_seq: 256 }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive =
            [self.d_model, self.layers, self.heads, self.ffn].iter().all(|&v| v > 0);
        if !all_positive {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.max_seq < 8 {
            return Err(Error::Config("max_seq must be at least 8".into()));
        }
        Ok(())
    }
}

/// A composed input sequence plus where the instruction tokens sit in it.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedInput {
    pub ids: Vec<u32>,
    /// Rows holding instruction tokens (after truncation).
    pub instr_range: Range<usize>,
    /// The instruction's surface tokens, parallel to `instr_range`, kept for
    /// span detokenization.
    pub instr_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    pub vocab: Vocab,
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub encoder: Encoder,
}

impl TextEncoder {
    pub fn init(rng: &mut impl Rng, cfg: TextEncoderConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        TextEncoder {
            token_emb: crate::nn::gaussian(rng, (vocab.len(), d)),
            pos_emb: crate::nn::gaussian(rng, (cfg.max_seq, d)),
            encoder: Encoder::init(rng, d, cfg.layers, cfg.heads, cfg.ffn),
            cfg,
            vocab,
        }
    }

    pub fn zeros(cfg: TextEncoderConfig, vocab: Vocab) -> Self {
        let d = cfg.d_model;
        TextEncoder {
            token_emb: Array2::zeros((vocab.len(), d)),
            pos_emb: Array2::zeros((cfg.max_seq, d)),
            encoder: Encoder::zeros(d, cfg.layers, cfg.heads, cfg.ffn),
            cfg,
            vocab,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cfg.clone(), self.vocab.clone())
    }

    /// `[CLS] instruction [SEP] history [SEP] block`, trimmed to `max_seq`
    /// by dropping the history tail, then the block tail, then the
    /// instruction tail.
    pub fn compose(&self, instruction: &str, history_text: &[String], block: &str) -> ComposedInput {
        let mut instr_tokens = tokenize_str(instruction);
        let mut instr = tokenize(instruction, &self.vocab);
        let mut hist = tokenize(&history_text.join(" ; "), &self.vocab);
        let mut blk = tokenize(block, &self.vocab);
        let fixed = 3; // CLS + two SEPs
        let max = self.cfg.max_seq;
        assert!(max >= fixed, "max_seq cannot hold even the markers");
        let mut over = (fixed + instr.len() + hist.len() + blk.len()).saturating_sub(max);
        for tail in [&mut hist, &mut blk, &mut instr] {
            let cut = over.min(tail.len());
            tail.truncate(tail.len() - cut);
            over -= cut;
        }
        assert_eq!(over, 0, "sequence exceeds max_seq after all trims");
        instr_tokens.truncate(instr.len());

        let mut ids = Vec::with_capacity(fixed + instr.len() + hist.len() + blk.len());
        ids.push(CLS);
        ids.extend_from_slice(&instr);
        ids.push(SEP);
        ids.extend_from_slice(&hist);
        ids.push(SEP);
        ids.extend_from_slice(&blk);
        ComposedInput { instr_range: 1..1 + instr.len(), ids, instr_tokens }
    }

    pub fn forward(&self, ids: &[u32]) -> Result<(Array2<f64>, TextEncCache)> {
        let n = ids.len();
        if n == 0 || n > self.cfg.max_seq {
            return Err(Error::ShapeMismatch {
                context: format!("sequence length {n} outside 1..={}", self.cfg.max_seq),
            });
        }
        let d = self.cfg.d_model;
        let mut x = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= self.token_emb.nrows() {
                return Err(Error::ShapeMismatch {
                    context: format!("token id {id} outside vocabulary"),
                });
            }
            let mut row = x.row_mut(i);
            row += &self.token_emb.row(id as usize);
            row += &self.pos_emb.row(i);
        }
        let (out, enc) = self.encoder.forward(&x);
        Ok((out, TextEncCache { ids: ids.to_vec(), enc }))
    }

    /// Accumulates parameter gradients for dLoss/dOutput into `grads`.
    pub fn backward_into(&self, cache: &TextEncCache, d_out: &Array2<f64>, grads: &mut TextEncoder) {
        let (enc_grads, d_x) = self.encoder.backward(&cache.enc, d_out);
        crate::nn::accumulate(&mut grads.encoder, &enc_grads);
        for (i, &id) in cache.ids.iter().enumerate() {
            let drow = d_x.row(i);
            let mut t = grads.token_emb.row_mut(id as usize);
            t += &drow;
            let mut p = grads.pos_emb.row_mut(i);
            p += &drow;
        }
    }
}

impl ParamSet for TextEncoder {
    fn params(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("emb.token".to_string(), &self.token_emb),
            ("emb.pos".to_string(), &self.pos_emb),
        ];
        out.extend(self.encoder.params());
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![
            ("emb.token".to_string(), &mut self.token_emb),
            ("emb.pos".to_string(), &mut self.pos_emb),
        ];
        out.extend(self.encoder.params_mut());
        out
    }
}

#[derive(Debug, Clone)]
pub struct TextEncCache {
    ids: Vec<u32>,
    enc: EncoderCache,
}
