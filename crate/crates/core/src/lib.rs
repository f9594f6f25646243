//! Streaming text+audio generation over eight parallel token layers.
//!
//! One text layer and seven codec layers share a vocabulary. A delay pattern
//! staggers the layers so a single autoregressive pass emits text first and
//! audio columns with a fixed lag. A small transformer with two adapters is
//! trained in three stages and decoded incrementally, either alone or as a
//! batch of two where a text-only twin supplies the text stream.

pub mod bench;
pub mod codec;
pub mod config;
pub mod delay;
pub mod engine;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod grid;
pub mod layout;
pub mod model;
pub mod ops;
pub mod vocab;

pub use error::{Error, Result};
