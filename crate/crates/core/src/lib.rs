//! Desk-scale simulator for RIS-assisted multi-user downlink scheduling.
//!
//! The crate covers the whole chain from geometric channel generation to per-slot
//! proportional-fair decisions:
//!
//! - [`channel`]: Rician channels, effective channels and achievable rates.
//! - [`pilots`] and [`estimation`]: uplink pilot protocol and LMMSE estimators.
//! - [`optimize`]: WMMSE beamforming, RCG on the unit-modulus manifold, phase quantization.
//! - [`scheduling`]: PF weights, implicit scheduling, greedy BCD and exhaustive search.
//! - [`gnn`]: forward inference of the scheduling and RIS graph networks.
//! - [`sim`]: episodes over coherence periods, metrics and CSV output.
//!
//! All inner products use the Hermitian convention `h^H w`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod error;
pub mod estimation;
pub mod gnn;
pub mod math;
pub mod optimize;
pub mod pilots;
pub mod scheduling;
pub mod sim;

pub use channel::{BeamMatrix, ChannelRealization, Links, RisConfig};
pub use config::SystemConfig;
pub use error::{Error, Result};
pub use pilots::PilotBlock;
pub use scheduling::{PfState, Schedule};
