//! Sample-dependent sparse masks over the edit layer's FFN activations, and
//! the database used to route queries to previously edited prompts.
//!
//! A mask is built from the token-mean of a prompt's activations, centered
//! by a frozen reference mean. The `k` largest coordinates are selected and
//! then relocated through a fixed random permutation of `[0, D)`. Similar
//! prompts share most of their top coordinates, so their masks overlap
//! strongly; the permutation spreads the memory columns they occupy away
//! from the always-salient features.

mod database;
mod mask;

pub(crate) use database::{
    decode_centering, decode_permutation, encode_centering, encode_permutation,
};
pub use database::{
    read_mask_database, write_mask_database, MaskDatabase, MaskDatabaseFile, MatchResult,
};
pub use mask::{
    alternative_mask, compute_centering, pooled_key, tophash_mask, topk_indices, CenteringVector,
    Permutation, SelectionStrategy, SparseMask,
};
