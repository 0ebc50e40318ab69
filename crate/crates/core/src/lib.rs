//! Probabilistic bias-field correction for MR slices built on transform-domain
//! filtering in the Walsh-Hadamard basis.
//!
//! The crate carries its own small reverse-mode autodiff engine
//! ([`autodiff`]), the transform and its layers ([`wht`], [`layers`]), the
//! model ([`model`]), training ([`optim`], [`train`]) and synthetic data and
//! volume I/O ([`data`]).

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod image;
pub mod latent;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod real;
pub mod train;
pub mod wht;

pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use real::{Precision, Real};
