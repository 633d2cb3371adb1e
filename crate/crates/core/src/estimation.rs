//! LMMSE estimation from decorrelated pilots, with moments taken from a seeded
//! calibration ensemble.
//!
//! The high-dimensional target is `H_k = [h_d,k, A_k]`, estimated one row at a time:
//! row `m` observed in sub-frame `d` is `H_k[m, :] q^(d)` plus noise, with
//! `q^(d) = [1; theta^(d)]`. The low-dimensional target is the combined channel
//! `h_c,k` under fixed phases.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Cholesky;
use rayon::prelude::*;

use crate::channel::{generate_channels, ChannelRealization, LinkSet, RisConfig};
use crate::config::SystemConfig;
use crate::error::{check_dim, Error, Result};
use crate::math::{all_finite_mat, stream_rng, CMat, CVec, StreamDomain, C64};
use crate::pilots::PilotBlock;

/// Relative ridge added to a prior covariance before it is used.
pub const REGULARIZATION: f64 = 1e-8;

/// Sample mean and covariance of a complex random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: CVec,
    pub cov: CMat,
}

impl Moments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Unbiased sample moments. Needs at least `dim` samples (and at least two).
    pub fn fit(samples: &[CVec]) -> Result<Self> {
        let dim = samples.first().ok_or(Error::Empty("calibration samples"))?.len();
        let required = dim.max(2);
        if samples.len() < required {
            return Err(Error::InsufficientSamples {
                samples: samples.len(),
                required,
            });
        }
        let mut mean = CVec::zeros(dim);
        for s in samples {
            check_dim("calibration sample length", dim, s.len())?;
            mean += s;
        }
        mean /= C64::from(samples.len() as f64);
        if samples.iter().all(|s| s == &samples[0]) {
            return Ok(Self {
                mean: samples[0].clone(),
                cov: CMat::zeros(dim, dim),
            });
        }
        let mut cov = CMat::zeros(dim, dim);
        for s in samples {
            let c = s - &mean;
            cov += &c * c.adjoint();
        }
        cov /= C64::from((samples.len() - 1) as f64);
        Ok(Self { mean, cov })
    }

    fn regularized_cov(&self) -> CMat {
        let tr = self.cov.trace().re;
        let mut c = self.cov.clone();
        if tr > 0.0 {
            let eps = REGULARIZATION * tr / self.dim() as f64;
            for i in 0..self.dim() {
                c[(i, i)] += C64::from(eps);
            }
        }
        c
    }
}

/// What a set of moments describes.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Rows of `[h_d,k, A_k]`, one block per antenna.
    HighDim,
    /// `h_c,k` under the given phases, a single block.
    Combined(RisConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsKind {
    HighDim,
    Combined,
}

/// Identifies a calibration run in the binary cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsKey {
    pub geometry_hash: u64,
    pub seed: u64,
    pub ensemble_size: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmseStats {
    pub kind: StatsKind,
    pub blocks: Vec<Moments>,
    /// Samples behind every block.
    pub ensemble_size: usize,
}

/// Samples of row `m` of `[h_d,k, A_k]` as a column vector of length `N + 1`.
fn high_dim_row(real: &ChannelRealization, k: usize, m: usize) -> CVec {
    let n = real.elements();
    let mut x = CVec::zeros(n + 1);
    x[0] = real.h_d[k][m];
    for i in 0..n {
        x[i + 1] = real.a[k][(m, i)];
    }
    x
}

/// Fits moments from a calibration ensemble, pooling every user of every realization.
pub fn fit_lmmse_stats(ensemble: &[ChannelRealization], target: &Target) -> Result<LmmseStats> {
    let first = ensemble.first().ok_or(Error::Empty("calibration ensemble"))?;
    let (m, n) = (first.antennas(), first.elements());
    for r in ensemble {
        check_dim("calibration antennas", m, r.antennas())?;
        check_dim("calibration elements", n, r.elements())?;
    }
    match target {
        Target::HighDim => {
            let blocks = (0..m)
                .into_par_iter()
                .map(|row| {
                    let samples: Vec<CVec> = ensemble
                        .iter()
                        .flat_map(|r| (0..r.users()).map(move |k| high_dim_row(r, k, row)))
                        .collect();
                    Moments::fit(&samples)
                })
                .collect::<Result<Vec<_>>>()?;
            let ensemble_size = ensemble.iter().map(|r| r.users()).sum();
            Ok(LmmseStats {
                kind: StatsKind::HighDim,
                blocks,
                ensemble_size,
            })
        }
        Target::Combined(theta) => {
            check_dim("RIS phase vector length", n, theta.len())?;
            let samples: Vec<CVec> = ensemble
                .iter()
                .flat_map(|r| (0..r.users()).map(move |k| r.links().effective(k, theta.as_vector())))
                .collect();
            Ok(LmmseStats {
                kind: StatsKind::Combined,
                blocks: vec![Moments::fit(&samples)?],
                ensemble_size: samples.len(),
            })
        }
    }
}

impl LmmseStats {
    pub fn antennas(&self) -> usize {
        match self.kind {
            StatsKind::HighDim => self.blocks.len(),
            StatsKind::Combined => self.blocks[0].dim(),
        }
    }

    /// Combined-channel moments implied by row moments and phases `theta`: per-antenna
    /// mean `q^T mu_m` and variance `q^T C_m conj(q)`, no cross-antenna covariance.
    pub fn combined_from_high_dim(&self, theta: &RisConfig) -> Result<LmmseStats> {
        if self.kind != StatsKind::HighDim {
            return Err(Error::arg("row moments required"));
        }
        let q = theta.augmented();
        check_dim("augmented phase length", self.blocks[0].dim(), q.len())?;
        let m = self.blocks.len();
        let mut mean = CVec::zeros(m);
        let mut cov = CMat::zeros(m, m);
        for (i, b) in self.blocks.iter().enumerate() {
            mean[i] = q.dot(&b.mean);
            cov[(i, i)] = C64::from((q.transpose() * &b.cov * q.conjugate())[(0, 0)].re);
        }
        Ok(LmmseStats {
            kind: StatsKind::Combined,
            blocks: vec![Moments { mean, cov }],
            ensemble_size: self.ensemble_size,
        })
    }
}

/// Solves `S X = R` for Hermitian positive semidefinite `S`, adding a relative ridge
/// when the plain factorization fails.
fn hpd_solve(s: &CMat, r: &CMat) -> Result<CMat> {
    if let Some(ch) = Cholesky::new(s.clone()) {
        return Ok(ch.solve(r));
    }
    let dim = s.nrows();
    let tr = s.trace().re.max(f64::MIN_POSITIVE);
    let mut eps = REGULARIZATION * tr / dim as f64;
    for _ in 0..20 {
        let mut reg = s.clone();
        for i in 0..dim {
            reg[(i, i)] += C64::from(eps);
        }
        if let Some(ch) = Cholesky::new(reg) {
            return Ok(ch.solve(r));
        }
        eps *= 10.0;
    }
    Err(Error::NonFinite("observation covariance"))
}

/// Per-row LMMSE gains for one set of uplink phases, shared by every user.
#[derive(Debug, Clone)]
pub struct HighDimEstimator {
    /// `B[d, i] = q_i^(d)`.
    b: CMat,
    means: Vec<CVec>,
    /// `C_m B^H S_m^{-1}`, or `None` for a degenerate prior.
    gains: Vec<Option<CMat>>,
}

impl HighDimEstimator {
    pub fn new(stats: &LmmseStats, phases: &[RisConfig], noise_var: f64) -> Result<Self> {
        if stats.kind != StatsKind::HighDim {
            return Err(Error::arg("row moments required"));
        }
        if phases.is_empty() {
            return Err(Error::Empty("uplink phases"));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::arg("noise variance must be non-negative"));
        }
        let dim = stats.blocks[0].dim();
        let d = phases.len();
        let mut b = CMat::zeros(d, dim);
        for (row, t) in phases.iter().enumerate() {
            check_dim("augmented phase length", dim, t.len() + 1)?;
            b.row_mut(row).copy_from(&t.augmented().transpose());
        }
        let gains = stats
            .blocks
            .iter()
            .map(|blk| {
                if blk.cov.trace().re <= 0.0 {
                    return Ok(None);
                }
                let c = blk.regularized_cov();
                let cbh = &c * b.adjoint();
                let mut s = &b * &cbh;
                for i in 0..d {
                    s[(i, i)] += C64::from(noise_var);
                }
                let s = (&s + s.adjoint()) * C64::from(0.5);
                let x = hpd_solve(&s, &cbh.adjoint())?;
                Ok(Some(x.adjoint()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            b,
            means: stats.blocks.iter().map(|blk| blk.mean.clone()).collect(),
            gains,
        })
    }

    pub fn depth(&self) -> usize {
        self.b.nrows()
    }

    /// `obs` is `M x D`; returns the `M x (N + 1)` estimate of `[h_d,k, A_k]`.
    pub fn estimate(&self, obs: &CMat) -> Result<CMat> {
        check_dim("observation rows", self.means.len(), obs.nrows())?;
        check_dim("observation columns", self.depth(), obs.ncols())?;
        if !all_finite_mat(obs) {
            return Err(Error::NonFinite("pilot observations"));
        }
        let dim = self.b.ncols();
        let mut h = CMat::zeros(self.means.len(), dim);
        for (m, (mu, gain)) in self.means.iter().zip(&self.gains).enumerate() {
            let mut x = mu.clone();
            if let Some(g) = gain {
                let innov = obs.row(m).transpose() - &self.b * mu;
                x += g * innov;
            }
            h.row_mut(m).copy_from(&x.transpose());
        }
        Ok(h)
    }
}

/// Estimate of `[h_d,k, A_k]` for one user of a pilot block.
pub fn lmmse_estimate_high_dim(block: &PilotBlock, user: usize, stats: &LmmseStats) -> Result<CMat> {
    if block.depth() < 1 {
        return Err(Error::Empty("pilot block"));
    }
    if user >= block.users() {
        return Err(Error::arg(format!("user {user} not in pilot block")));
    }
    HighDimEstimator::new(stats, &block.uplink_phases, block.noise_var)?.estimate(&block.columns[user])
}

/// Splits an `M x (N + 1)` estimate into its direct channel and cascade.
pub fn split_high_dim(h: &CMat) -> (CVec, CMat) {
    (h.column(0).into_owned(), h.columns(1, h.ncols() - 1).into_owned())
}

/// Estimated links of every user in the block.
pub fn estimate_links(block: &PilotBlock, stats: &LmmseStats) -> Result<LinkSet> {
    let est = HighDimEstimator::new(stats, &block.uplink_phases, block.noise_var)?;
    let parts = block
        .columns
        .par_iter()
        .map(|y| est.estimate(y).map(|h| split_high_dim(&h)))
        .collect::<Result<Vec<_>>>()?;
    let (direct, cascade) = parts.into_iter().unzip();
    Ok(LinkSet { direct, cascade })
}

/// LMMSE estimate of `h_c,k` from `D_W` columns observed under one phase vector.
pub fn lmmse_estimate_combined(obs: &CMat, phases: &[RisConfig], noise_var: f64, stats: &LmmseStats) -> Result<CVec> {
    if stats.kind != StatsKind::Combined {
        return Err(Error::arg("combined-channel moments required"));
    }
    let dw = obs.ncols();
    if dw < 1 {
        return Err(Error::Empty("combined-channel observations"));
    }
    check_dim("phase vectors", dw, phases.len())?;
    if phases.iter().any(|t| t != &phases[0]) {
        return Err(Error::arg(
            "combined-channel observations taken under different RIS phases",
        ));
    }
    let mom = &stats.blocks[0];
    check_dim("observation rows", mom.dim(), obs.nrows())?;
    if !all_finite_mat(obs) {
        return Err(Error::NonFinite("pilot observations"));
    }
    let avg = obs.column_mean();
    if mom.cov.trace().re <= 0.0 {
        return Ok(mom.mean.clone());
    }
    let c = mom.regularized_cov();
    let mut s = c.clone();
    for i in 0..mom.dim() {
        s[(i, i)] += C64::from(noise_var / dw as f64);
    }
    let innov = CMat::from_column_slice(mom.dim(), 1, (avg - &mom.mean).as_slice());
    let x = hpd_solve(&s, &innov)?;
    Ok(&mom.mean + &c * x.column(0))
}

/// Calibration realizations needed for `factor` samples per high-dimensional dimension.
pub fn calibration_realizations(config: &SystemConfig) -> usize {
    let dim = config.elements + 1;
    (config.optimizer.calibration_factor * dim).div_ceil(config.users)
}

/// Independent realizations drawn on the calibration streams of `seed`.
pub fn calibration_ensemble(config: &SystemConfig, seed: u64, realizations: usize) -> Result<Vec<ChannelRealization>> {
    (0..realizations as u64)
        .into_par_iter()
        .map(|i| generate_channels(config, &mut stream_rng(seed, StreamDomain::Calibration, i)))
        .collect()
}

const MAGIC: &[u8; 8] = b"RISLMMSE";
const VERSION: u32 = 1;

/// Binary cache: magic, version, key, kind, then each block's mean and covariance as
/// little-endian `f64` pairs (covariance column-major).
pub fn write_stats<W: Write>(mut out: W, key: &StatsKey, stats: &LmmseStats) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [key.geometry_hash, key.seed, key.ensemble_size] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&[match stats.kind {
        StatsKind::HighDim => 0u8,
        StatsKind::Combined => 1u8,
    }])?;
    out.write_all(&(stats.ensemble_size as u64).to_le_bytes())?;
    out.write_all(&(stats.blocks.len() as u64).to_le_bytes())?;
    for b in &stats.blocks {
        out.write_all(&(b.dim() as u64).to_le_bytes())?;
        for z in b.mean.iter().chain(b.cov.iter()) {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_c64<R: Read>(r: &mut R) -> Result<C64> {
    let re = f64::from_bits(read_u64(r)?);
    let im = f64::from_bits(read_u64(r)?);
    Ok(C64::new(re, im))
}

pub fn read_stats<R: Read>(mut input: R) -> Result<(StatsKey, LmmseStats)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::arg("not an LMMSE statistics cache"));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    if u32::from_le_bytes(v) != VERSION {
        return Err(Error::arg(format!(
            "unsupported cache version {}",
            u32::from_le_bytes(v)
        )));
    }
    let key = StatsKey {
        geometry_hash: read_u64(&mut input)?,
        seed: read_u64(&mut input)?,
        ensemble_size: read_u64(&mut input)?,
    };
    let mut kind = [0u8; 1];
    input.read_exact(&mut kind)?;
    let kind = match kind[0] {
        0 => StatsKind::HighDim,
        1 => StatsKind::Combined,
        k => return Err(Error::arg(format!("unknown statistics kind {k}"))),
    };
    let ensemble_size = read_u64(&mut input)? as usize;
    let nblocks = read_u64(&mut input)? as usize;
    if nblocks == 0 || nblocks > 1 << 16 {
        return Err(Error::arg(format!("implausible block count {nblocks}")));
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let dim = read_u64(&mut input)? as usize;
        if dim == 0 || dim > 1 << 14 {
            return Err(Error::arg(format!("implausible block dimension {dim}")));
        }
        let mean = CVec::from_iterator(dim, (0..dim).map(|_| read_c64(&mut input)).collect::<Result<Vec<_>>>()?);
        let cov = CMat::from_iterator(
            dim,
            dim,
            (0..dim * dim)
                .map(|_| read_c64(&mut input))
                .collect::<Result<Vec<_>>>()?,
        );
        blocks.push(Moments { mean, cov });
    }
    Ok((
        key,
        LmmseStats {
            kind,
            blocks,
            ensemble_size,
        },
    ))
}

/// Reads a cache file if it exists and matches `key`.
pub fn load_cached(path: &Path, key: &StatsKey) -> Result<Option<LmmseStats>> {
    if !path.exists() {
        return Ok(None);
    }
    let (found, stats) = read_stats(std::io::BufReader::new(std::fs::File::open(path)?))?;
    Ok((found == *key).then_some(stats))
}

/// High-dimensional statistics for `config`, fitted on the calibration streams of
/// `seed` or read from `cache` when it holds the same key.
pub fn high_dim_stats(config: &SystemConfig, seed: u64, cache: Option<&Path>) -> Result<(StatsKey, LmmseStats)> {
    let realizations = calibration_realizations(config);
    let key = StatsKey {
        geometry_hash: config.geometry_hash(),
        seed,
        ensemble_size: (realizations * config.users) as u64,
    };
    if let Some(path) = cache {
        if let Some(stats) = load_cached(path, &key)? {
            return Ok((key, stats));
        }
    }
    let ensemble = calibration_ensemble(config, seed, realizations)?;
    let stats = fit_lmmse_stats(&ensemble, &Target::HighDim)?;
    if let Some(path) = cache {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_stats(f, &key, &stats)?;
    }
    Ok((key, stats))
}
