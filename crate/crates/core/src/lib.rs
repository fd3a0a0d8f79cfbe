#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dp;
pub mod error;
pub mod gibbs;
pub mod llt;
pub mod localization;
pub mod potentials;
pub mod prox;
pub mod quad;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
