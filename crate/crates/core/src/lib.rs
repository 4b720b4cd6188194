#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod paramspace;
pub mod problem;
pub mod regularizer;
pub mod verify;

pub use error::{Error, Result};
