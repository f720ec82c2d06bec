//! Dual-view candidate ranking: tokenization, input assembly, the scoring
//! model, and the training loop.

pub mod assemble;
pub mod model;
pub mod train;
pub mod vocab;

pub use assemble::{assemble, AssembleParams, DualViewInput, Slot, VisualToken};
pub use model::{
    bce_with_logit, candidate_elements, logit, neighbor_seed, rank_elements, sigmoid,
    RankerConfig, RankerWeights,
};
pub use train::{load_grids, train_ranker, TrainConfig, TrainOutcome};
pub use vocab::{build_vocab, build_vocab_from_strings, tokenize, tokenize_str, Vocab};
