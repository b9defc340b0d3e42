//! Unsupervised accent correction of discrete acoustic-unit sequences.
//!
//! The crate is `no_std` and needs only `alloc`. It holds every algorithm of
//! the toolkit: run-length grouping of unit sequences, a synthetic accent-shift
//! corpus generator, K-means quantization, a small transformer encoder with
//! hand-written backpropagation and bottleneck adapters, masked unit language
//! models, the iterative mask-and-decode corrector, cluster-to-phone mapping
//! with phone error rates, and adapter-only continual pre-training of an
//! acoustic encoder. File formats, configuration and the command line live in
//! the `unitfix` companion crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adapt;
pub mod corpus;
pub mod corrector;
mod error;
pub mod exec;
pub mod mlm;
pub mod neural;
pub mod phonemap;
pub mod quantizer;
pub mod rng;
pub mod seqcore;

pub use error::{Error, Result};
pub use exec::{Executor, Serial};
pub use seqcore::{ClusterSequence, Group, GroupedSequence, UnitVocab};
