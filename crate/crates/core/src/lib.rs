//! Isolated-word keyword recognition and keyword-indexed retrieval.

// `!(x > 0.0)` rejects NaN on purpose; numeric kernels index several arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ann;
pub mod audio;
pub mod corpus;
pub mod frontend;
pub mod hmm;
pub mod quantizer;
pub mod recognizer;
pub mod retrieval;
