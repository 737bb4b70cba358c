//! Chinese named entity recognition with second-order lexicon knowledge.
//!
//! Characters are encoded with a BiGRU, each position attends over the
//! lexicon words matched by its neighbours, and a linear-chain CRF decodes
//! the tag sequence.

pub mod cli;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod lexicon;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
