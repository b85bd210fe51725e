pub mod allocator;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod prompting;
pub mod recommender;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
