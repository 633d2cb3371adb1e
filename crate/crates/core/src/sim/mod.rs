//! Episodes over coherence periods and scheduling slots, metrics and CSV output.

mod episode;
mod metrics;

pub use episode::{run_baseline_episode, run_three_stage_episode, EpisodeOptions, GnnModels};
pub use metrics::{compute_metrics, read_trace, write_cdf, write_summary, write_trace, CdfRow, Metrics};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Where the third stage gets its combined-channel estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotMode {
    /// `D_W` fresh sub-frames of length-`M` pilots per slot under the chosen phases.
    ExtraPilots,
    /// The high-dimensional estimate from the period's uplink block.
    ReusePilots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineScheduler {
    GreedyBcd,
    Exhaustive,
    Random,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiMode {
    Perfect,
    /// LMMSE estimates from `D_H` uplink sub-frames.
    Estimated,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, $($variant:path => $text:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::InvalidArgument(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

text_enum!(PilotMode, "pilot mode", PilotMode::ExtraPilots => "extra_pilots", PilotMode::ReusePilots => "reuse_pilots");
text_enum!(
    BaselineScheduler,
    "scheduler",
    BaselineScheduler::GreedyBcd => "greedy_bcd",
    BaselineScheduler::Exhaustive => "exhaustive",
    BaselineScheduler::Random => "random",
    BaselineScheduler::RoundRobin => "round_robin",
);
text_enum!(CsiMode, "CSI mode", CsiMode::Perfect => "perfect", CsiMode::Estimated => "estimated");

/// One user in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub period: usize,
    pub slot: usize,
    pub user: usize,
    pub scheduled: bool,
    /// PF weight used for the decision.
    pub weight: f64,
    /// Rate realized on the true channel.
    pub rate: f64,
    /// Transmit power of the slot.
    pub slot_power: f64,
    /// Realized weighted sum rate of the slot.
    pub slot_objective: f64,
    /// Pilot symbols spent in the slot's coherence period.
    pub period_pilots: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub metrics: Metrics,
    pub trace: Vec<SlotRecord>,
    /// Overhead per period from the closed-form count.
    pub pilot_overhead: u64,
}
