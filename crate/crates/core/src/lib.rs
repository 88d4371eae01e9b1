//! GNSS-aided backtracking initial alignment for strapdown inertial
//! navigation with low-cost IMUs.
//!
//! The crate is organised bottom-up:
//!
//! - [`geokin`]: earth model, frames and direction cosine matrices
//! - [`mech`]: forward and reverse strapdown mechanization
//! - [`errmodel`]: 15-state nonlinear and linearized error models
//! - [`ukf`]: unscented and linearized Kalman filtering
//! - [`backtrack`]: alternating forward/backward alignment passes
//! - [`simkit`]: trajectory simulation and Monte-Carlo evaluation
//! - [`formats`], [`config`], [`cli`]: file formats and the command-line front end

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geokin;
pub mod mech;
pub mod errmodel;
pub mod ukf;
pub mod backtrack;
pub mod simkit;
pub mod formats;
pub mod config;
pub mod cli;

pub use error::{Error, ErrorClass, Result};
