#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aladin;
pub mod cli;
pub mod empc;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod nlp;
pub mod powerflow;
pub mod sim;

pub use error::{Error, Result};
