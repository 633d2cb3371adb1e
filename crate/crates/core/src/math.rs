//! Complex linear-algebra aliases, Gaussian sampling and seeded stream derivation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

/// Draws one sample of CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Vector of i.i.d. CN(0, 1) entries.
pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVec {
    CVec::from_fn(len, |_, _| complex_normal(rng))
}

/// Matrix of i.i.d. CN(0, 1) entries, filled column by column.
pub fn complex_normal_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_normal(rng);
        }
    }
    m
}

/// Uniform phase on the unit circle.
pub fn unit_phasor<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    C64::from_polar(1.0, phase)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// `h^H w`.
pub fn inner(h: &CVec, w: &CVec) -> C64 {
    h.dotc(w)
}

pub fn all_finite_vec(v: &CVec) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn all_finite_mat(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Independent random streams used by the simulator.
///
/// Every stream is a ChaCha8 generator keyed by `(seed, domain)` and positioned on
/// stream `index`, so results never depend on thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Channels = 1,
    Pilots = 2,
    Decisions = 3,
    Calibration = 4,
    ModelInit = 5,
    SlotPilots = 6,
}

pub fn stream_rng(seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
