//! Uncertainty analysis for ensembles of LDA topic models.
//!
//! The pipeline runs corpus ingestion ([`corpus`]), Gibbs-sampled LDA
//! ([`lda`]), ensemble generation or MALLET import ([`ensemble`]), topic
//! similarity and uncertainty measures ([`metrics`]), a t-SNE overview
//! layout ([`embedding`]) and the analyst-facing computations in
//! [`analysis`] and [`docviews`]. [`synthbench`] generates corpora with a
//! known ground truth.

pub mod analysis;
pub mod corpus;
pub mod docviews;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod lda;
pub mod metrics;
pub mod synthbench;

pub use ensemble::{Ensemble, TopicRef};
pub use error::{Error, Result};
