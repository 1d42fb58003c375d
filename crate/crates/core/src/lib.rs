//! Linear probes for detecting generated images from frozen image embeddings.
//!
//! Datasets are described by a JSON manifest of NPY files. Detectors are bias-free
//! L2 logistic-regression probes or single residual directions; their directions can
//! be read through text lexicons. Greedy feature removal and attention-head ranking
//! look for features that transfer across generators, and transfer matrices
//! summarize cross-generator accuracy.
//!
//! Start with [`dataset::Dataset::open`], then see [`probe`], [`residual`],
//! [`interpret`], [`select`], [`heads`], [`transfer`] and [`geometry`].

pub mod cli;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod heads;
pub mod interpret;
pub mod matrix;
pub mod npy;
pub mod optim;
pub mod probe;
pub mod residual;
pub mod select;
pub mod synth;
pub mod transfer;

pub use dataset::{Cell, Dataset, Domain, DomainKind, HeadTensor, Lexicon, LexiconSpace};
pub use error::{Error, Result};
pub use matrix::EmbeddingMatrix;
pub use probe::{GridSpec, Hyperparams, LabeledSet, LinearModel};
