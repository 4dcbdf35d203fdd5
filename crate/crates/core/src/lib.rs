//! Cross-domain drug response prediction with disentangled tumor
//! representations.
//!
//! Cell lines (source) and tumors (target) are encoded into a shared latent
//! space. Tumors get a second, private factor meant to capture the
//! microenvironment. A drug acts additively in the latent space and two
//! heads score the result: one trained on cell lines, one fitted on a few
//! labeled tumors while everything else stays frozen.

// NaN-rejecting checks are written `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod data;
pub mod druggraph;
pub mod error;
pub mod evalkit;
pub mod nets;
pub mod numcore;
pub mod pipeline;
pub mod response;

pub use error::{Error, Result};
