//! Token classification heads, training and persisted model bundles.

pub mod bundle;
pub mod crf;
pub mod head;
pub mod network;
pub mod train;

pub use bundle::{predict, ModelBundle};
pub use crf::{
    crf_nll, log_partition, marginals, sequence_score, viterbi, CrfParameters, EmissionScores,
};
pub use head::{softmax_nll, ClassifierHead};
pub use network::{
    crf_nll_and_gradients, softmax_nll_and_gradients, Gradients, HeadKind, Network, PostInput,
    TokenSource,
};
pub use train::{seed_sweep, train, Resources, SeedResult, SweepResult, TrainConfig};
