//! Chat vs NonChat detection for assistant utterances.
//!
//! Base classifiers (a linear SVM over sparse n-gram and embedding features,
//! and a single-layer CNN) are augmented with three external features: the
//! per-character log-probability of the utterance under character language
//! models trained on conversational and search-query text, and a binary
//! query-log presence flag. The [`eval`] module runs the k-fold protocol and
//! its breakdowns.

pub mod classifiers;
pub mod container;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod lm;
pub mod meta;
pub mod optim;
pub mod par;

pub use error::{Error, Result};
