//! File formats, evaluation pipeline and command-line front end for
//! mixed-effects neural ODEs.


#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod checkpoint;
pub mod cli;
pub mod compare;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod eval;
pub mod report;

pub use error::{AppError, Result};
