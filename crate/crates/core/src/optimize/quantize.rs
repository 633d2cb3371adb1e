use std::f64::consts::TAU;

use crate::channel::RisConfig;
use crate::error::{Error, Result};

/// Maps every phase to the centre of its cell in a uniform `2^bits` partition of
/// `[0, 2 pi)`.
pub fn quantize_phases(theta: &RisConfig, bits: u32) -> Result<RisConfig> {
    if !(1..=30).contains(&bits) {
        return Err(Error::arg(format!("quantization bits must be in 1..=30, got {bits}")));
    }
    let cells = 1u64 << bits;
    let width = TAU / cells as f64;
    let phases: Vec<f64> = theta
        .phases()
        .into_iter()
        .map(|p| {
            let p = p.rem_euclid(TAU);
            let cell = ((p / width).floor() as u64).min(cells - 1);
            (cell as f64 + 0.5) * width
        })
        .collect();
    RisConfig::from_phases(&phases)
}

/// Largest wrapped phase distance between two configurations.
pub fn max_phase_error(a: &RisConfig, b: &RisConfig) -> f64 {
    a.as_vector()
        .iter()
        .zip(b.as_vector().iter())
        .map(|(x, y)| (x * y.conj()).arg().abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn phase_of(t: &RisConfig) -> f64 {
        t.phases()[0].rem_euclid(TAU)
    }

    #[test]
    fn two_bit_cells() {
        let q = quantize_phases(&RisConfig::from_phases(&[0.3]).unwrap(), 2).unwrap();
        assert!((phase_of(&q) - PI / 4.0).abs() < 1e-12);
        let q = quantize_phases(&RisConfig::from_phases(&[3.2]).unwrap(), 2).unwrap();
        assert!((phase_of(&q) - 5.0 * PI / 4.0).abs() < 1e-12);
        let q = quantize_phases(&RisConfig::from_phases(&[-0.1]).unwrap(), 2).unwrap();
        assert!((phase_of(&q) - 7.0 * PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn error_bound_and_rejection() {
        let t = RisConfig::from_phases(&[0.1, 1.0, 2.5, 4.0, 6.2]).unwrap();
        for b in 1..12 {
            let q = quantize_phases(&t, b).unwrap();
            assert!(max_phase_error(&t, &q) <= PI / f64::from(1u32 << b) + 1e-12);
        }
        assert!(quantize_phases(&t, 0).is_err());
    }
}
