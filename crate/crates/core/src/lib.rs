#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bv;
pub mod cli;
pub mod cli_io;
pub mod coupled_ibvp;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod optimizer;
pub mod oracles;
pub mod scalar_renewal;
pub mod sir_model;

pub use error::{Error, Result};
