//! Residual-quantized autoencoder that turns item embeddings into
//! hierarchical code tuples.
//!
//! An encoder maps each embedding to a latent vector `z`. Level `l` picks the
//! codeword nearest to the residual `r_{l-1}` (with `r_0 = z`) and passes on
//! `r_l = r_{l-1} - e_{c_l}`. The decoder reconstructs the embedding from
//! `z* = Σ_l e_{c_l}`. Items that end up with the same `L` codes get a
//! trailing disambiguator.

mod checkpoint;
mod codes;
mod kmeans;
mod mlp;
mod model;
mod quantize;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use codes::{resolve_collisions, IndexType, ItemCodeTable};
pub use kmeans::{kmeans_init, within_cluster_sse};
pub use mlp::{Activation, Linear, LinearGrad, Mlp};
pub use model::{
    assign_codes, gradient_check, initialize_rqvae, max_relative_error, reconstruction_loss,
    train_rqvae, train_rqvae_with_history, ForwardOutput, ModelGradients, RqVaeConfig, RqVaeModel,
    TrainingHistory,
};
pub use quantize::{quantize_batch, quantize_residual, BatchQuantization, Codebook, Quantization};
