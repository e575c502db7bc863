//! Adversarial makeup transfer.
//!
//! A generator moves the makeup style of a reference face onto a source face
//! while embedding a targeted identity perturbation that transfers to face
//! recognition models it has never seen. The crate carries everything needed
//! to train and audit that generator at desk scale: a small reverse-mode
//! autodiff engine, region-wise histogram matching, the generator /
//! discriminator / regularizer / embedder networks, the joint training loop,
//! gradient-based baseline attacks and the verification metrics.

pub mod attacks;
pub mod autograd;
pub mod config;
pub mod data;
pub mod diversity;
mod error;
pub mod evaluation;
pub mod experiment;
pub mod histogram;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
