//! Learned similarity between phone-sequence pronunciations.
//!
//! Two architectures are provided: a Siamese binary classifier that decides
//! whether two pronunciations belong to the same word, and a triplet ranking
//! network that maps a pronunciation to a fixed-size embedding compared by
//! cosine similarity. Both are built from scratch on a small double-precision
//! tensor layer with hand-written backward passes, and both plug into the
//! downstream tasks (lexical access, word neighborhoods, nearest words).
//!
//! Module map:
//!
//! * [`phonology`]: inventories, pronunciations, lexicon/corpus files, and the
//!   exact-lookup and Levenshtein baselines.
//! * [`numerics`]: tensors, parameters, kernels, finite-difference checks.
//! * [`encoder`]: phone embeddings and LSTM stacks (1 layer, 2 layers,
//!   bidirectional 2 layers).
//! * [`models`]: the binary and ranking architectures, plus checkpoints.
//! * [`training`]: negative sampling, Adagrad, the epoch loop.
//! * [`tasks`]: lexical access, WER@k, neighborhoods, 2-D projection.
//! * [`datagen`]: the rule-based synthetic corpus generator.
//! * [`experiments`]: end-to-end pipelines and parameter sweeps.

pub mod datagen;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod models;
pub mod numerics;
pub mod phonology;
pub mod rng;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use phonology::{CorpusExample, Lexicon, LexiconEntry, PhoneId, PhoneInventory, Pronunciation};
pub use numerics::{Parameter, Tensor};
pub use encoder::{EncoderConfig, EncoderKind};
pub use models::{BinaryModel, RankModel, Triplet, LabeledPair};
pub use training::{TrainConfig, TrainReport, NegativeMode};
pub use tasks::{EvalReport, Scorer};
