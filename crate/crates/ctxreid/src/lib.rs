//! Context-guided clustering and unpaired-assisted contrastive learning over
//! abstract embedding vectors.
//!
//! The building blocks, bottom to top:
//!
//! * [`core`] — unit-norm embedding matrices, scene catalogs (the weak
//!   labels), cluster assignments, vector primitives.
//! * [`similarity`] — visual/context/hybrid similarity matrices and the
//!   first-neighbor index.
//! * [`cgc`] — link graph, graph partition, and the scene-uniqueness filter:
//!   the full clustering pass.
//! * [`uam`] — paired/unpaired memory banks, softmax contrastive losses with
//!   analytic query gradients, momentum bank updates.
//! * [`trainer`] — a toy linear encoder and the per-epoch self-training
//!   loop (cluster, initialize banks, mini-batch updates).
//! * [`eval`] — ranked retrieval, mAP / top-k (with an IoU gate when boxes
//!   exist), and pairwise-F1 clustering quality.
//! * [`datagen`] — deterministic synthetic worlds with co-traveler structure
//!   and ground-truth labels.
//! * [`pipeline`] — generate/load, cluster, train, evaluate; writes a replay
//!   manifest.
//!
//! Every entry point is deterministic given its seeds. See the `examples/`
//! directory for one runnable walkthrough per capability, and the `ctxreid`
//! binary for the file-based command-line interface.

pub mod cgc;
pub mod core;
pub mod datagen;
mod error;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod similarity;
pub mod trainer;
pub mod uam;

pub use crate::core::{ClusterAssignment, EmbeddingMatrix, SceneCatalog};
pub use crate::error::{Error, Result};
pub use crate::similarity::NeighborMode;
