//! Conflict detection for AI-driven radio access networks.
//!
//! Multiple autonomous agents tune network parameters while watching KPIs;
//! conflicting control decisions surface as structure in a graph over
//! agents, parameters, and KPIs. This crate implements the detection
//! pipeline end to end:
//!
//! 1. **Interaction learning** ([`twotower`]): two feed-forward encoders
//!    project parameter and KPI sample series into a shared latent space;
//!    scaled cosine similarity scores every entity pair.
//! 2. **Graph reconstruction** ([`binarize`], [`graph`]): scores become a
//!    binary adjacency, primarily through row-wise simplex projection
//!    (sparsemax), which needs no tuned threshold; the learned block is
//!    then augmented with the known agent relations.
//! 3. **Conflict identification** ([`identify`]): rule-based search for
//!    direct, indirect, and implicit conflict patterns.
//!
//! [`datagen`] generates synthetic telemetry from a configurable ground-truth
//! conflict model, and [`eval`] houses the metrics and the multi-seed sweep
//! harness comparing binarization strategies.

pub mod binarize;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod identify;
pub mod mat;
pub mod rng;
pub mod twotower;

pub use binarize::{binarize, sparsemax_row, symmetrize, BinarizationMethod, BinarizeOptions};
pub use datagen::{
    default_topology, generate, read_dataset, write_dataset, ConflictModelSpec, Dataset,
};
pub use error::{Error, Result};
pub use graph::{
    blocks, boxplus_augment, validate_full_adjacency, EntityDims, FullAdjacency, KnownRelations,
    LearnedAdjacency, ScoreMatrix,
};
pub use identify::{
    ground_truth_conflicts, identify_conflicts, Conflict, ConflictKind, ConflictSet,
};
pub use twotower::{
    bce_loss, cross_scores, encode, full_score_matrix, gradient_check, l2_normalize_rows, train,
    Embeddings, Hyperparams, ModelParams, Trainer,
};
