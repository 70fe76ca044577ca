//! Generative document retrieval through knowledge clues.
//!
//! A knowledge clue is a token span that occurs in exactly one document of
//! the corpus. Decoding generates clues under FM-index constraints, resolves
//! each clue to its document and ranks documents by autoregressive score.

// Float checks are written `!(x > 0.0)` on purpose: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod decoder;
pub mod dualflow;
pub mod eval;
pub mod fm_index;
pub mod sampler;
pub mod scorer;
pub mod seed;
pub mod store;
pub mod synth;
