//! The book's chapters as doc modules, so `cargo test` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/embeddings.md")]
pub mod embeddings {}
#[doc = include_str!("../../../book/src/profiles.md")]
pub mod profiles {}
#[doc = include_str!("../../../book/src/recommendation.md")]
pub mod recommendation {}
#[doc = include_str!("../../../book/src/zones.md")]
pub mod zones {}
#[doc = include_str!("../../../book/src/crime.md")]
pub mod crime {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
