//! File formats, experiment drivers and the command-line front end for
//! the `sgdpo-core` preference-optimization lab.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fsutil;
pub mod jsonl;
pub mod output;
pub mod svg;
pub mod verify;

pub use error::{LabError, Result};
