//! Context-aware textual network embeddings.
//!
//! Each node carries a topological vector and a text. When a node is seen
//! next to a neighbor, its text is re-read through the neighbor's text:
//! an entropic optimal-transport plan between the two token sequences
//! drives either local alignment (`Mode::Ot`) or a convolutional parser
//! over the plan that produces global attention weights (`Mode::Ap`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention_parsing;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod evaluator;
pub mod experiments;
pub mod model;
pub mod mutual_attention;
pub mod network_data;
pub mod ot_solver;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
