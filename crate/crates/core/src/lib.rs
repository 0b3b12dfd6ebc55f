//! Depth-only 3D facial pose tracking.
//!
//! A statistical multilinear face model is registered to depth frames by
//! minimizing an occlusion-aware ray visibility score, and per-user identity
//! models are adapted online with conjugate Normal-Inverse-Wishart updates.
//! The [`synth`] module renders ground-truth depth sequences for testing.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod face_model;
pub mod geometry;
pub mod identity;
pub mod io;
pub mod synth;
pub mod tracker;
pub mod visibility;

pub use error::{Error, Result};
