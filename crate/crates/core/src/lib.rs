//! Tree-based extreme multi-label ranking with ensemble uncertainty.

pub mod binfmt;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod format;
pub mod inference;
mod kmeans;
pub mod label_tree;
pub mod linear_ranker;
pub mod model;
pub mod seed;
pub mod solver;
pub mod sparse;
pub mod uncertainty;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use label_tree::{build_tree, pifa_embeddings, LabelEmbedding, TreeParams, TreeTopology};
pub use model::{train_model, LabelTree, TrainParams};
pub use sparse::{SparseMatrix, SparseVector};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
