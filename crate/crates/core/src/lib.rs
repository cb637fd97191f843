//! Statistically accurate PDF recovery for conditional Gaussian systems.
//!
//! A conditional Gaussian system splits its state into observed variables
//! `u_I` and hidden variables `u_II`. Given one trajectory of `u_I`, the hidden
//! variables are Gaussian with a mean and covariance that obey closed-form
//! filter equations. This crate combines
//!
//! * an ensemble of `L` seeded Euler-Maruyama trajectories ([`simulate`]),
//! * one conditional Gaussian filter per trajectory ([`filter`]),
//! * a plug-in Gaussian kernel density estimate of the observed subspace ([`kde`]),
//!
//! into a block-diagonal Gaussian mixture for the joint density ([`mixture`]),
//! and compares it against Monte Carlo truth with relative entropy ([`metrics`]).

pub mod error;
pub mod filter;
pub mod grid;
pub mod kde;
pub mod metrics;
pub mod mixture;
pub mod models;
pub mod recovery;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use filter::{CgState, FilterInit};
pub use grid::{DensityField, GridAxis, GridSpec};
pub use kde::BandwidthMatrix;
pub use metrics::{KlReport, Moments};
pub use mixture::GaussianMixture;
pub use models::{CgSystem, Coefficients, ModelId};
pub use simulate::{EnsemblePaths, InitialCondition};
