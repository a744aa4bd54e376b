//! The end-to-end score learner φ = η ∘ ψ: a backbone ψ (rectified MLP or
//! strided convolutions with global average pooling) feeding a scoring head
//! η (100 rectified units then one linear unit, or a single linear unit).

mod arch;
mod checkpoint;
mod net;
mod train;

pub use arch::{ArchKind, Architecture, CONV_CHANNELS, HEAD_HIDDEN, MLP_WIDTHS};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use net::{loss, net_init, Gradient, ScoringModel};
pub use train::{
    train, train_observed, train_uniform, training_loss, AnomalySampler, EpochStats, TrainConfig,
    WEIGHT_FLOOR,
};
