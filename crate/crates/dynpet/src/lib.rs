//! Desk-scale dynamic cardiac PET toolkit.
//!
//! The crate simulates dynamic cardiac PET studies on synthetic phantoms,
//! trains an early-to-late frame conversion GAN with temporal (FiLM) and
//! anatomical (mask channel) conditioning, corrects simulated inter-frame
//! motion with a free-form-deformation registration baseline, and quantifies
//! the downstream effect on compartment-model fits and myocardial blood flow.
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//! each major capability has one. The `dynpet` binary drives full
//! config-defined experiment pipelines.

pub mod error;
pub mod interp;
pub mod kinetics;
pub mod nn;
pub mod phantom;
pub mod metrics;
pub mod preprocess;
pub mod stats;
pub mod rng;
pub mod volumes;

pub use error::{Error, Result};
