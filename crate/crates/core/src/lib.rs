//! Multi-graph node embeddings for customer modeling.
//!
//! Node embeddings are learned separately on each graph (friendship,
//! purchases, seller attributes) by skip-gram training over permuted
//! neighborhood chunks, concatenated per entity, and fed to downstream
//! classifiers. Nodes without a learned embedding get one synthesized from
//! their neighbors.

pub mod classifiers;
pub mod context;
pub mod dataset;
pub mod embedding;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod mimic;
pub mod nn;
pub mod seed;
pub mod skipgram;
pub mod synth;

pub use context::{corpus_to_prediction_pairs, generate_groups, Group, GroupCorpus};
pub use embedding::Embeddings;
pub use graph::{complement_negative_sample, load_edge_list, Graph, GraphBuilder, GraphKind};
pub use skipgram::{train, EmbeddingSet, TrainConfig};
