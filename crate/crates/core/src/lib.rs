#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Numerical core of a desk-scale preference-optimization lab.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the
//! closed-form gradient algebra of the DPO and pilot (self-guided)
//! objectives, a small reverse-mode AD engine, a tiny causal policy model,
//! the sub-sequence sampler, both losses, the SFT / preference trainers and
//! the gradient-flow simulator. File formats and the command line live in
//! the std companion crate.

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradflow;
pub mod losses;
pub mod math;
pub mod policy;
pub mod subsequence;
pub mod trainer;

pub use error::{Error, Result};
