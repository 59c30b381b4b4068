//! The guide in `book/` has no way to run its own listings, so each chapter
//! is attached here as a module doc and `cargo test` runs them as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/trajectories.md")]
pub mod trajectories {}
#[doc = include_str!("../../../book/src/forward-model.md")]
pub mod forward_model {}
#[doc = include_str!("../../../book/src/inr.md")]
pub mod inr {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
