//! Geometric robustness verification of image classifiers by batched
//! Lipschitzian global optimisation over transformation parameters.
//!
//! The search engine ([`engine`]) trisects a box of transformation factors
//! ([`partition`]), picks potentially optimal subrectangles in batches
//! ([`selection`]) and reports an anytime lower-bound estimate
//! ([`estimator`]). [`geometry`] implements the affine warp, [`objective`]
//! the margin loss, and [`netfwd`] a small inference engine for desk-scale
//! models. [`baselines`] provides the grid-search and random-pick oracles.

pub mod baselines;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod fixtures;
pub mod geometry;
pub mod imageio;
pub mod netfwd;
pub mod objective;
pub mod partition;
pub mod selection;

pub use error::{Error, Result};
