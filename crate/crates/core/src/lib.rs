//! Lifelong model editing with a sparse residual memory.
//!
//! A small byte-level decoder-only transformer is pre-trained and frozen.
//! Edits are written into a zero-initialized copy `W_mem` of one FFN output
//! projection, each edit touching only the `k` columns picked by its
//! prompt's sparse mask. At inference a query's mask is matched against
//! the stored masks; below the overlap threshold the memory is skipped and
//! the layer computes exactly what the frozen model computes.
//!
//! Module map: [`backbone`] model and pre-training, [`datagen`] synthetic
//! benchmark, [`tophash`] masks and the mask database, [`memory`] residual
//! memory training and routed inference, [`editor`] edit streams and state
//! files, [`eval`] metrics and ablations.

pub mod backbone;
mod codec;
pub mod datagen;
pub mod editor;
pub mod error;
pub mod eval;
pub mod memory;
pub mod tensor;
pub mod tophash;

pub use backbone::{BackboneConfig, BackboneModel, TokenSequence};
pub use datagen::{BenchmarkSet, EditSample};
pub use editor::{EditorState, EditorStrategy, StrategyKind};
pub use error::{Error, Result};
pub use eval::{AblationAxis, EvalOptions, MetricsReport};
pub use memory::{EditTrainConfig, ResidualMemory, RoutingConfig};
pub use tophash::{MaskDatabase, MatchResult, SelectionStrategy, SparseMask};
