//! Multilevel Gaussian process modelling of repeated train-passing strain events.
//!
//! The crate covers the whole chain from raw fibre Bragg grating wavelengths to a
//! monitoring report:
//!
//! - [`ingest`] converts wavelength shifts to micro-strain, filters, maps time to
//!   passing distance and normalizes events onto a common scale.
//! - [`classify`] routes events to train types from weigh-in-motion features.
//! - [`hsgp`] is the reduced-rank Hilbert-space approximation of the Matérn 3/2 kernel.
//! - [`model`] is the joint log density over all events with shared hyperparameters.
//! - [`inference`] samples it with a no-U-turn Hamiltonian Monte Carlo sampler and
//!   summarises the draws.
//! - [`monitor`] correlates posterior mean functions and flags outlying events.
//! - [`simulate`] generates synthetic events from axle influence lines.
//! - [`config`] and [`pipeline`] wire the stages together for the command line tool.

pub mod classify;
pub mod config;
pub mod error;
pub mod hsgp;
pub mod inference;
pub mod ingest;
pub mod model;
pub mod monitor;
pub mod pipeline;
pub mod simulate;
mod stats;

pub use error::{Error, Result};
