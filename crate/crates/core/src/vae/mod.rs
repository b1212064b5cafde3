//! Variational autoencoders over encoded schedules.

mod config;
mod data;
mod model;

pub use config::{Architecture, EncodingKind, ModelConfig};
pub use data::{Batch, EncodedSet};
pub use model::{conv_lengths, duration_mse, kl_divergence, Forward, LossParts, RawDecode, VaeModel};

#[cfg(test)]
mod tests;
