//! Building blocks for multi-index generative retrieval:
//!
//! * [`dataio`]: interaction logs, k-core filtering, leave-one-out splits,
//!   embedding files.
//! * [`collab`]: collaborative item embeddings from the train split.
//! * [`rqvae`]: residual-quantized autoencoder and collision-free code tables.
//! * [`vocab`]: code tokens, prompt templates, prefix tries.
//! * [`scorer`]: next-token scorers, including a smoothed n-gram reference.
//! * [`retrieval`]: trie-constrained beam search.
//! * [`rerank`]: confidence/consistency fusion of many ranked lists.
//! * [`metrics`]: Hit@K, NDCG@K and complementarity ratios.
//! * [`synthetic`]: seeded generators for tests and demos.

pub mod collab;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod rerank;
pub mod retrieval;
pub mod rqvae;
pub mod scorer;
pub mod synthetic;
pub mod vocab;

pub use error::{Error, Result};
pub use retrieval::{ListKind, RankedList};
pub use rqvae::{IndexType, ItemCodeTable};
