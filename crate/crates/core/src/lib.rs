//! Weakly supervised aspect and sentiment detection with a variational topic
//! model over frozen contextual token states.
//!
//! The pipeline runs `corpus` (vocabulary, bag-of-words, ratings), then
//! `embed_cache` (token state cache and layer pooling). `model` holds the
//! forward pass, `objective` and `grad` the loss and its gradients, and
//! `seeding` and `training` the optimization. `infer` covers prediction and
//! evaluation, and `checkpoint` persists trained models. `synthetic` generates
//! planted-structure corpora for tests and demos.

pub mod checkpoint;
pub mod corpus;
pub mod embed_cache;
pub mod error;
pub mod grad;
pub mod infer;
pub mod model;
pub mod objective;
pub mod seeding;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
