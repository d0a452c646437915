//! LET: a word-lattice graph transformer for Chinese short text matching.
//!
//! The crate is organized bottom-up: a small reverse-mode autodiff engine,
//! word-lattice construction, a sememe knowledge base, graph attention
//! operators, a character-level transformer encoder, the matching model and a
//! training harness.

pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod gnn;
pub mod harness;
pub mod knowledge;
pub mod lattice;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
