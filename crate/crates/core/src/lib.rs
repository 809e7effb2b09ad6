//! Image tag completion by low-rank sparse factorization `D = UV + E`
//! with local linear reconstruction structure preserved in both the
//! feature space (S) and the tag space (T).

pub mod cli;
pub mod error;
pub mod io;
pub mod lasso;
pub mod metrics;
pub mod objective;
pub mod solver;
pub mod sparse;
pub mod structure;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use objective::{objective, objective_terms, ObjectiveTerms};
pub use sparse::SparseMatrix;
pub use types::{FactorModel, FeatureMatrix, Hyperparams, Orientation, StructureMatrix, TagState, TaggingMatrix};
