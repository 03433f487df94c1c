//! Spatio-temporal embeddings learned from check-in sequences, and the
//! applications built on them: STES location recommendation, functional
//! zone clustering and next-month crime prediction.

pub mod analysis;
pub mod crime;
pub mod data;
pub mod embed;
pub mod error;
pub mod io_util;
pub mod profiles;
pub mod stes;
pub mod synth;

pub use error::{Error, Result};
