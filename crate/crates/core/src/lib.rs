//! Poultry-discourse analytics: text preprocessing, lexicon polarity,
//! LDA topics, and a dual-stream gated cross-attention classifier.

pub mod config;
mod error;
pub mod ingest;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod synthetic;
pub mod topics;
pub mod train_eval;

pub use config::RunConfig;
pub use error::{Error, Result};
