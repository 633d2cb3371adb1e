//! Continuous optimizers for the beamformers and the RIS phases.

mod quantize;
mod rcg;
mod wmmse;

pub use quantize::{max_phase_error, quantize_phases};
pub use rcg::{rcg_maximize, rcg_ris_phases, tangent_projection, RcgOptions, RcgReport, RisObjective};
pub use wmmse::{mrt_beams, wmmse_beamformers, wmmse_step, WmmseOptions, WmmseReport};
