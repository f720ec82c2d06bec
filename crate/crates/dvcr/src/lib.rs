//! Dual-view contextualization for web-agent element ranking and action
//! prediction.
//!
//! The pipeline turns an HTML document plus its screenshot into ranked
//! actionable elements and a predicted next action:
//!
//! 1. [`document`] — documents, steps, tasks, and the canonical text
//!    renderings used everywhere else.
//! 2. [`spatial`] — visually nearest neighbors (plus tree/random baselines).
//! 3. [`visual`] — screenshot patch features and ROI-aligned crops.
//! 4. [`nn`] — a small transformer encoder with manual backprop.
//! 5. [`ranker`] — dual-view candidate scoring and training.
//! 6. [`predictor`] — iterative multiple-choice element election and
//!    operation prediction.
//! 7. [`eval`] — step-level navigation metrics.
//! 8. [`synth`] — a seeded synthetic benchmark with planted signal.
//! 9. [`weights`] — a versioned binary container for trained weights.
//!
//! Everything is deterministic given a seed: corpus generation, training,
//! and serialized weights are byte-stable across runs.

pub mod document;
pub mod error;
pub mod eval;
pub mod nn;
pub mod predictor;
pub mod ranker;
pub mod seed;
pub mod spatial;
pub mod synth;
pub mod visual;
pub mod weights;

pub use document::{
    element_html_text, parse_corpus, render_action, write_corpus, Action, BBox, Element,
    HtmlDocument, OpKind, Operation, Step, Task,
};
pub use error::{Error, Result};
pub use eval::{
    aggregate, element_accuracy, evaluate, operation_f1, oracle_rank, recall_at_k,
    step_success_rate,
    ChooserSpec, EvalReport, OpSpec, RankerSpec, StepOutcome, RECALL_KS,
};
pub use predictor::{
    block_for, candidate_block, elect_element, partition_groups, predict_action,
    predict_from_ranked, predict_operation, train_chooser, train_op_head, CandidateOption,
    ChooserTrainConfig, ChooserWeights, Election, ElementChooser, OpHead, OpTrainConfig,
    OperationPredictor, OracleOpPredictor, Prediction, PredictorMode, PredictorSettings, Snippet,
    TextEncoder, TextEncoderConfig,
};
pub use ranker::{
    assemble, build_vocab, load_grids, rank_elements, tokenize, train_ranker, AssembleParams,
    DualViewInput,
    RankerConfig, RankerWeights, TrainConfig, TrainOutcome, Vocab,
};
pub use spatial::{neighbors, NeighborList, NeighborSource};
pub use synth::{
    default_themes, generate_corpus, generate_page, load_manifest, planted_scan, PageEntry,
    PlantedScan, SplitMode, SynthConfig, SynthCorpus, SynthManifest, SynthPage, Template, Theme,
};
pub use weights::{
    load_chooser, load_op_head, load_ranker, save_chooser, save_op_head, save_ranker,
};
pub use visual::{
    load_image, patch_featurize, roi_align, save_image, whole_image_feature, FeatureGrid, Image,
    Projection,
};
