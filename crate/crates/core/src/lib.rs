//! Keyword-contextualized decoder-only speech recognition at desk scale.
//!
//! A synthetic lexicon with homonyms stands in for speech; a linear adapter
//! feeds stacked acoustic frames into a small transformer decoder that is
//! prompted with optional keywords and fine-tuned with AdamW.

pub mod audio;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod model;
pub mod prompt;
pub mod text;
pub mod train;

pub use error::{Error, Result};
