//! Staged research pipeline engine.

pub mod analysis;
pub mod clock;
pub mod control;
pub mod enhance;
pub mod error;
pub mod events;
pub mod idea;
pub mod keywords;
pub mod literature;
pub mod llm;
pub mod methods;
mod net;
pub mod paper;
pub mod pipeline;
pub mod project;
pub mod prompts;
pub mod review;
pub mod runtime;

pub use error::{Error, Result};
