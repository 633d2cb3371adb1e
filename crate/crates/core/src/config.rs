//! System configuration and the scenario file.
//!
//! A scenario file is a flat TOML key-value document. Powers may be given in dBm
//! (`*_dbm` keys) or watts (`*_w` keys); noise is either given directly in watts or
//! derived from a spectral density and the bandwidth. Unset keys take the defaults
//! of [`SystemConfig::default`], which reproduce the reference deployment:
//!
//! ```toml
//! antennas = 8            # M
//! elements = 128          # N
//! users = 32              # K
//! downlink_power_dbm = 15
//! uplink_power_dbm = 15
//! noise_dbm_per_hz = -170
//! bandwidth_hz = 10e6
//! rician_factor = 10
//! forgetting = 0.01
//! slots_per_period = 50
//! d_theta = 6
//! d_beta = 1
//! d_w = 1
//! # d_h = 6               # baseline estimation sub-frames, defaults to d_theta
//! # phase_bits = 2        # unset means continuous phases
//! bs_pos = [100.0, -100.0, 0.0]
//! ris_pos = [0.0, 0.0, 0.0]
//! user_region = { min = [5.0, -35.0, -20.0], max = [45.0, 70.0, -20.0] }
//! seed = 1
//!
//! [optimizer]
//! wmmse_max_iter = 200
//! wmmse_tol = 1e-8
//! rcg_max_iter = 500
//! rcg_tol = 1e-6
//! rcg_armijo_c = 1e-4
//! rcg_shrink = 0.5
//! improve_rtol = 1e-6
//! bcd_max_outer = 20
//! exhaustive_starts = 4
//! calibration_factor = 10
//! ```

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::dbm_to_watts;

/// Axis-aligned box from which user positions are drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !(self.min[axis].is_finite() && self.max[axis].is_finite()) {
                return Err(Error::config("user_region bounds must be finite"));
            }
            if self.min[axis] > self.max[axis] {
                return Err(Error::config(format!(
                    "user_region axis {axis}: min {} > max {}",
                    self.min[axis], self.max[axis]
                )));
            }
        }
        Ok(())
    }
}

/// Iteration limits and tolerances of the continuous optimizers and the schedulers.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub wmmse_max_iter: usize,
    pub wmmse_tol: f64,
    pub rcg_max_iter: usize,
    pub rcg_tol: f64,
    pub rcg_armijo_c: f64,
    pub rcg_shrink: f64,
    /// Relative objective gain required to accept a greedy addition or continue BCD.
    pub improve_rtol: f64,
    pub bcd_max_outer: usize,
    /// BCD starting points per subset in exhaustive search (the first is shared with greedy).
    pub exhaustive_starts: usize,
    /// Calibration ensemble size as a multiple of the estimated vector's dimension.
    pub calibration_factor: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            wmmse_max_iter: 200,
            wmmse_tol: 1e-8,
            rcg_max_iter: 500,
            rcg_tol: 1e-6,
            rcg_armijo_c: 1e-4,
            rcg_shrink: 0.5,
            improve_rtol: 1e-6,
            bcd_max_outer: 20,
            exhaustive_starts: 4,
            calibration_factor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// BS antennas `M`.
    pub antennas: usize,
    /// RIS elements `N`.
    pub elements: usize,
    /// Users in the scheduling pool `K`.
    pub users: usize,
    /// Downlink power budget `P_d` in watts.
    pub downlink_power: f64,
    /// Uplink pilot power `P_u` in watts.
    pub uplink_power: f64,
    /// Downlink noise power in watts.
    pub noise_down: f64,
    /// Uplink noise power in watts.
    pub noise_up: f64,
    pub bandwidth: f64,
    /// Rician factor; `f64::INFINITY` gives pure line-of-sight reflected links.
    pub rician_factor: f64,
    /// PF forgetting factor `gamma`.
    pub forgetting: f64,
    /// Scheduling slots per coherence period.
    pub slots_per_period: usize,
    pub d_theta: usize,
    pub d_beta: usize,
    pub d_w: usize,
    /// Sub-frames used by the estimate-then-optimize baseline.
    pub d_h: usize,
    pub phase_bits: Option<u32>,
    pub bs_pos: [f64; 3],
    pub ris_pos: [f64; 3],
    pub user_region: Region,
    pub seed: u64,
    pub optimizer: OptimizerSettings,
}

const DEFAULT_NOISE_DBM_PER_HZ: f64 = -170.0;
const DEFAULT_BANDWIDTH_HZ: f64 = 10e6;

impl Default for SystemConfig {
    fn default() -> Self {
        let noise = dbm_to_watts(DEFAULT_NOISE_DBM_PER_HZ + 10.0 * DEFAULT_BANDWIDTH_HZ.log10());
        Self {
            antennas: 8,
            elements: 128,
            users: 32,
            downlink_power: dbm_to_watts(15.0),
            uplink_power: dbm_to_watts(15.0),
            noise_down: noise,
            noise_up: noise,
            bandwidth: DEFAULT_BANDWIDTH_HZ,
            rician_factor: 10.0,
            forgetting: 0.01,
            slots_per_period: 50,
            d_theta: 6,
            d_beta: 1,
            d_w: 1,
            d_h: 6,
            phase_bits: None,
            bs_pos: [100.0, -100.0, 0.0],
            ris_pos: [0.0, 0.0, 0.0],
            user_region: Region {
                min: [5.0, -35.0, -20.0],
                max: [45.0, 70.0, -20.0],
            },
            seed: 1,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl SystemConfig {
    /// Reference deployment scaled down to `(M, N, K)`; everything else keeps its default.
    pub fn toy(antennas: usize, elements: usize, users: usize) -> Self {
        Self {
            antennas,
            elements,
            users,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas < 1 || self.elements < 1 || self.users < 1 {
            return Err(Error::config("antennas, elements and users must all be >= 1"));
        }
        if self.d_beta > self.d_theta {
            return Err(Error::config(format!(
                "d_beta ({}) must not exceed d_theta ({})",
                self.d_beta, self.d_theta
            )));
        }
        if !(0.0..=1.0).contains(&self.forgetting) {
            return Err(Error::config(format!(
                "forgetting factor {} not in [0, 1]",
                self.forgetting
            )));
        }
        for (name, p) in [
            ("downlink_power", self.downlink_power),
            ("uplink_power", self.uplink_power),
            ("noise_down", self.noise_down),
            ("noise_up", self.noise_up),
        ] {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite, got {p}")));
            }
        }
        if self.slots_per_period < 1 {
            return Err(Error::config("slots_per_period must be >= 1"));
        }
        if !(self.rician_factor >= 0.0) {
            return Err(Error::config("rician_factor must be >= 0"));
        }
        if let Some(b) = self.phase_bits {
            if !(1..=30).contains(&b) {
                return Err(Error::config(format!("phase_bits must be in 1..=30, got {b}")));
            }
        }
        self.user_region.validate()?;
        let o = &self.optimizer;
        if o.rcg_shrink <= 0.0 || o.rcg_shrink >= 1.0 {
            return Err(Error::config("rcg_shrink must be in (0, 1)"));
        }
        if o.exhaustive_starts < 1 || o.calibration_factor < 1 {
            return Err(Error::config("exhaustive_starts and calibration_factor must be >= 1"));
        }
        Ok(())
    }

    /// Decorrelated uplink noise variance for a pilot of the given length.
    pub fn decorrelated_noise(&self, pilot_len: usize) -> f64 {
        self.noise_up / (pilot_len as f64 * self.uplink_power)
    }

    /// Stable 64-bit digest of everything that shapes the channel distribution.
    pub fn geometry_hash(&self) -> u64 {
        let canonical = format!(
            "M={};N={};K={};eps={:e};bs={:?};ris={:?};region={:?}/{:?};pu={:e};nu={:e}",
            self.antennas,
            self.elements,
            self.users,
            self.rician_factor,
            self.bs_pos,
            self.ris_pos,
            self.user_region.min,
            self.user_region.max,
            self.uplink_power,
            self.noise_up,
        );
        let digest = Sha256::digest(canonical.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)?;
        file.into_config()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(alias = "M")]
    antennas: Option<usize>,
    #[serde(alias = "N")]
    elements: Option<usize>,
    #[serde(alias = "K")]
    users: Option<usize>,
    downlink_power_dbm: Option<f64>,
    downlink_power_w: Option<f64>,
    uplink_power_dbm: Option<f64>,
    uplink_power_w: Option<f64>,
    noise_dbm_per_hz: Option<f64>,
    noise_down_w: Option<f64>,
    noise_up_w: Option<f64>,
    noise_down_dbm: Option<f64>,
    noise_up_dbm: Option<f64>,
    bandwidth_hz: Option<f64>,
    /// `"inf"` is accepted for a pure line-of-sight reflected channel.
    rician_factor: Option<toml::Value>,
    #[serde(alias = "gamma")]
    forgetting: Option<f64>,
    #[serde(alias = "upsilon")]
    slots_per_period: Option<usize>,
    d_theta: Option<usize>,
    d_beta: Option<usize>,
    d_w: Option<usize>,
    d_h: Option<usize>,
    phase_bits: Option<u32>,
    bs_pos: Option<[f64; 3]>,
    ris_pos: Option<[f64; 3]>,
    user_region: Option<Region>,
    seed: Option<u64>,
    optimizer: Option<OptimizerSettings>,
}

fn pick_power(name: &str, dbm: Option<f64>, watts: Option<f64>, default: f64) -> Result<f64> {
    match (dbm, watts) {
        (Some(_), Some(_)) => Err(Error::config(format!("{name}: give either dBm or watts, not both"))),
        (Some(d), None) => Ok(dbm_to_watts(d)),
        (None, Some(w)) => Ok(w),
        (None, None) => Ok(default),
    }
}

impl ScenarioFile {
    fn into_config(self) -> Result<SystemConfig> {
        let d = SystemConfig::default();
        let bandwidth = self.bandwidth_hz.unwrap_or(d.bandwidth);
        let density = self.noise_dbm_per_hz.unwrap_or(DEFAULT_NOISE_DBM_PER_HZ);
        let derived_noise = dbm_to_watts(density + 10.0 * bandwidth.log10());
        let rician_factor = match self.rician_factor {
            None => d.rician_factor,
            Some(toml::Value::Float(f)) => f,
            Some(toml::Value::Integer(i)) => i as f64,
            Some(toml::Value::String(s)) if s.eq_ignore_ascii_case("inf") => f64::INFINITY,
            Some(other) => return Err(Error::config(format!("rician_factor: unsupported value {other}"))),
        };
        let d_theta = self.d_theta.unwrap_or(d.d_theta);
        let cfg = SystemConfig {
            antennas: self.antennas.unwrap_or(d.antennas),
            elements: self.elements.unwrap_or(d.elements),
            users: self.users.unwrap_or(d.users),
            downlink_power: pick_power(
                "downlink_power",
                self.downlink_power_dbm,
                self.downlink_power_w,
                d.downlink_power,
            )?,
            uplink_power: pick_power(
                "uplink_power",
                self.uplink_power_dbm,
                self.uplink_power_w,
                d.uplink_power,
            )?,
            noise_down: pick_power("noise_down", self.noise_down_dbm, self.noise_down_w, derived_noise)?,
            noise_up: pick_power("noise_up", self.noise_up_dbm, self.noise_up_w, derived_noise)?,
            bandwidth,
            rician_factor,
            forgetting: self.forgetting.unwrap_or(d.forgetting),
            slots_per_period: self.slots_per_period.unwrap_or(d.slots_per_period),
            d_theta,
            d_beta: self.d_beta.unwrap_or(d.d_beta),
            d_w: self.d_w.unwrap_or(d.d_w),
            d_h: self.d_h.unwrap_or(d_theta),
            phase_bits: self.phase_bits,
            bs_pos: self.bs_pos.unwrap_or(d.bs_pos),
            ris_pos: self.ris_pos.unwrap_or(d.ris_pos),
            user_region: self.user_region.unwrap_or(d.user_region),
            seed: self.seed.unwrap_or(d.seed),
            optimizer: self.optimizer.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_noise_is_minus_100_dbm() {
        let cfg = SystemConfig::default();
        assert!((cfg.noise_down - 1e-13).abs() < 1e-25);
        assert_eq!(cfg.noise_down, cfg.noise_up);
        cfg.validate().unwrap();
    }

    #[test]
    fn parses_dbm_and_aliases() {
        let cfg = SystemConfig::from_toml_str(
            r#"
            M = 2
            N = 8
            K = 4
            downlink_power_dbm = 30
            uplink_power_w = 0.5
            gamma = 0.1
            upsilon = 5
            d_theta = 3
            rician_factor = "inf"
            phase_bits = 2
            user_region = { min = [0.0, 0.0, -1.0], max = [1.0, 1.0, -1.0] }
            [optimizer]
            rcg_max_iter = 50
            "#,
        )
        .unwrap();
        assert_eq!((cfg.antennas, cfg.elements, cfg.users), (2, 8, 4));
        assert!((cfg.downlink_power - 1.0).abs() < 1e-12);
        assert_eq!(cfg.uplink_power, 0.5);
        assert_eq!(cfg.forgetting, 0.1);
        assert_eq!(cfg.slots_per_period, 5);
        assert_eq!(cfg.d_h, 3);
        assert!(cfg.rician_factor.is_infinite());
        assert_eq!(cfg.phase_bits, Some(2));
        assert_eq!(cfg.optimizer.rcg_max_iter, 50);
        assert_eq!(cfg.optimizer.wmmse_max_iter, 200);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(SystemConfig::from_toml_str("d_beta = 7\nd_theta = 6").is_err());
        assert!(SystemConfig::from_toml_str("forgetting = 1.5").is_err());
        assert!(SystemConfig::from_toml_str("users = 0").is_err());
        assert!(SystemConfig::from_toml_str("uplink_power_w = -1.0").is_err());
        assert!(SystemConfig::from_toml_str("downlink_power_w = 1.0\ndownlink_power_dbm = 30").is_err());
        assert!(SystemConfig::from_toml_str("unknown_key = 3").is_err());
    }

    #[test]
    fn geometry_hash_tracks_geometry_only() {
        let a = SystemConfig::default();
        let mut b = a.clone();
        b.seed = 99;
        b.slots_per_period = 5;
        assert_eq!(a.geometry_hash(), b.geometry_hash());
        b.elements = 64;
        assert_ne!(a.geometry_hash(), b.geometry_hash());
    }
}
