//! Seeded Monte-Carlo simulator of physical-layer wireless signal spoofing.
//!
//! The simulator synthesizes QPSK frames through Rayleigh channels with
//! per-device phase signatures, trains a neural-network authenticator at the
//! defending receiver, and evaluates three attack strategies against it:
//! random transmissions, amplify-and-forward replay, and GAN-synthesized
//! waveforms.

pub mod defender;
pub mod error;
pub mod experiment;
pub mod gan;
pub mod neural;
pub mod rng;
pub mod scenario;
pub mod signal;

pub use error::{Result, SimError};
