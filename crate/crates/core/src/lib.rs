//! Label-free multi-class out-of-distribution detection over embedding
//! vectors.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod scoring;

pub use error::{Error, Result, Stage};
