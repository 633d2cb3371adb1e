//! Geometric channel generation, effective channels and achievable rates.
//!
//! All inner products are Hermitian: the signal term of user `k` is `|h_k^H w_k|^2`.
//!
//! Line-of-sight components use a uniform linear BS array along the y axis and a
//! uniform rectangular RIS array in the y-z plane, both with half-wavelength spacing.
//! The steering vector toward unit direction `u` is `exp(j 2 pi p_i . u)` with element
//! positions `p_i` measured in wavelengths. The common propagation phase is dropped.

use rand::Rng;

use crate::config::SystemConfig;
use crate::error::{check_dim, Error, Result};
use crate::math::{complex_normal_mat, complex_normal_vec, unit_phasor, CMat, CVec, C64};
use crate::scheduling::Schedule;

/// Tolerance on `|theta_n| = 1`.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// BS to user.
    Direct,
    /// Any segment through the RIS (BS to RIS, RIS to user).
    Reflected,
}

/// Linear power gain `10^(-PL/10)` of one link segment of length `distance` meters.
pub fn pathloss_gain(distance: f64, path: PathKind) -> Result<f64> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::arg(format!("distance must be positive, got {distance}")));
    }
    let loss_db = match path {
        PathKind::Direct => 32.6 + 36.7 * distance.log10(),
        PathKind::Reflected => 30.0 + 22.0 * distance.log10(),
    };
    Ok(10f64.powf(-loss_db / 10.0))
}

/// RIS reflection coefficients, one unit-modulus phasor per element.
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfig {
    theta: CVec,
}

impl RisConfig {
    pub fn new(theta: CVec) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Empty("RIS phase vector"));
        }
        if let Some((n, z)) = theta
            .iter()
            .enumerate()
            .find(|(_, z)| !((z.norm() - 1.0).abs() <= UNIT_MODULUS_TOL))
        {
            return Err(Error::arg(format!(
                "RIS element {n} has modulus {} (not unit)",
                z.norm()
            )));
        }
        Ok(Self { theta })
    }

    /// Builds from phases in radians.
    pub fn from_phases(phases: &[f64]) -> Result<Self> {
        Self::new(CVec::from_iterator(
            phases.len(),
            phases.iter().map(|&p| C64::from_polar(1.0, p)),
        ))
    }

    /// Normalizes each entry onto the unit circle. Zero entries are nudged by
    /// [`ZERO_MAGNITUDE_NUDGE`] along the real axis first.
    pub fn project(raw: &CVec) -> Result<Self> {
        let theta = raw.map(|z| {
            let z = if z.norm() == 0.0 {
                z + C64::new(ZERO_MAGNITUDE_NUDGE, 0.0)
            } else {
                z
            };
            z / z.norm()
        });
        Self::new(theta)
    }

    pub fn random<R: Rng + ?Sized>(elements: usize, rng: &mut R) -> Self {
        Self {
            theta: CVec::from_fn(elements, |_, _| unit_phasor(rng)),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_vector(&self) -> &CVec {
        &self.theta
    }

    pub fn into_vector(self) -> CVec {
        self.theta
    }

    pub fn phases(&self) -> Vec<f64> {
        self.theta.iter().map(|z| z.arg()).collect()
    }

    /// `[1; theta]`, the combined phase vector multiplying `[h_d, A]`.
    pub fn augmented(&self) -> CVec {
        let mut q = CVec::zeros(self.len() + 1);
        q[0] = C64::new(1.0, 0.0);
        q.rows_mut(1, self.len()).copy_from(&self.theta);
        q
    }

    pub fn max_modulus_error(&self) -> f64 {
        self.theta.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Magnitude added to an all-zero RIS entry before it is normalized.
pub const ZERO_MAGNITUDE_NUDGE: f64 = 1e-12;

/// Beamformers of the scheduled users, one column per entry of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMatrix {
    w: CMat,
}

impl BeamMatrix {
    pub fn new(w: CMat) -> Self {
        Self { w }
    }

    pub fn matrix(&self) -> &CMat {
        &self.w
    }

    pub fn into_matrix(self) -> CMat {
        self.w
    }

    pub fn columns(&self) -> usize {
        self.w.ncols()
    }

    /// Sum of squared column norms in watts.
    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn column_powers(&self) -> Vec<f64> {
        self.w.column_iter().map(|c| c.norm_squared()).collect()
    }
}

/// Borrowed view of per-user direct and cascaded channels, true or estimated.
#[derive(Debug, Clone, Copy)]
pub struct Links<'a> {
    pub direct: &'a [CVec],
    pub cascade: &'a [CMat],
}

impl<'a> Links<'a> {
    pub fn users(&self) -> usize {
        self.direct.len()
    }

    pub fn antennas(&self) -> usize {
        self.direct.first().map_or(0, |h| h.len())
    }

    pub fn elements(&self) -> usize {
        self.cascade.first().map_or(0, |a| a.ncols())
    }

    /// `h_d,k + A_k theta`.
    pub fn effective(&self, user: usize, theta: &CVec) -> CVec {
        &self.direct[user] + &self.cascade[user] * theta
    }

    pub fn effective_all(&self, users: &[usize], theta: &CVec) -> Vec<CVec> {
        users.iter().map(|&k| self.effective(k, theta)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("cascade channel count", self.direct.len(), self.cascade.len())?;
        let m = self.antennas();
        let n = self.elements();
        for (h, a) in self.direct.iter().zip(self.cascade) {
            check_dim("direct channel length", m, h.len())?;
            check_dim("cascade rows", m, a.nrows())?;
            check_dim("cascade columns", n, a.ncols())?;
        }
        Ok(())
    }
}

/// Owned direct/cascade channels, used for estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet {
    pub direct: Vec<CVec>,
    pub cascade: Vec<CMat>,
}

impl LinkSet {
    pub fn links(&self) -> Links<'_> {
        Links {
            direct: &self.direct,
            cascade: &self.cascade,
        }
    }
}

/// One coherence period of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub user_positions: Vec<[f64; 3]>,
    /// Direct BS-to-user channels, `K` vectors of length `M`.
    pub h_d: Vec<CVec>,
    /// RIS-to-user channels, `K` vectors of length `N`.
    pub h_r: Vec<CVec>,
    /// BS-to-RIS channel, `M x N`.
    pub g: CMat,
    /// Cascades `A_k = G diag(h_r,k)`.
    pub a: Vec<CMat>,
}

impl ChannelRealization {
    /// Assembles a realization and derives the cascades from `g` and `h_r`.
    pub fn from_parts(user_positions: Vec<[f64; 3]>, h_d: Vec<CVec>, h_r: Vec<CVec>, g: CMat) -> Result<Self> {
        check_dim("RIS channel count", h_d.len(), h_r.len())?;
        let a = h_r.iter().map(|hr| cascade(&g, hr)).collect::<Result<Vec<_>>>()?;
        let out = Self {
            user_positions,
            h_d,
            h_r,
            g,
            a,
        };
        out.links().validate()?;
        Ok(out)
    }

    pub fn links(&self) -> Links<'_> {
        Links {
            direct: &self.h_d,
            cascade: &self.a,
        }
    }

    pub fn users(&self) -> usize {
        self.h_d.len()
    }

    pub fn antennas(&self) -> usize {
        self.g.nrows()
    }

    pub fn elements(&self) -> usize {
        self.g.ncols()
    }

    pub fn is_finite(&self) -> bool {
        let fin = |z: &C64| z.re.is_finite() && z.im.is_finite();
        self.h_d.iter().all(|v| v.iter().all(fin))
            && self.h_r.iter().all(|v| v.iter().all(fin))
            && self.g.iter().all(fin)
    }

    /// Largest `|A_k - G diag(h_r,k)|_F` over users.
    pub fn cascade_residual(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.h_r)
            .map(|(a, hr)| (a - cascade(&self.g, hr).expect("shapes checked at construction")).norm())
            .fold(0.0, f64::max)
    }
}

/// `G diag(h_r)`.
pub fn cascade(g: &CMat, h_r: &CVec) -> Result<CMat> {
    check_dim("RIS channel length", g.ncols(), h_r.len())?;
    let mut a = g.clone();
    for (mut col, &h) in a.column_iter_mut().zip(h_r.iter()) {
        col *= h;
    }
    Ok(a)
}

fn direction(from: [f64; 3], to: [f64; 3]) -> Result<([f64; 3], f64)> {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if dist == 0.0 {
        return Err(Error::config("co-located nodes: link distance is zero"));
    }
    Ok(([d[0] / dist, d[1] / dist, d[2] / dist], dist))
}

/// BS ULA along y, half-wavelength spacing.
pub fn bs_steering(antennas: usize, u: [f64; 3]) -> CVec {
    CVec::from_fn(antennas, |m, _| {
        C64::from_polar(1.0, std::f64::consts::PI * m as f64 * u[1])
    })
}

/// Rows (along z) and columns (along y) of the RIS grid: the largest divisor of `N`
/// not exceeding `sqrt(N)` gives the row count.
pub fn ris_grid(elements: usize) -> (usize, usize) {
    let mut rows = 1;
    let mut r = 1;
    while r * r <= elements {
        if elements.is_multiple_of(r) {
            rows = r;
        }
        r += 1;
    }
    (rows, elements / rows)
}

/// RIS URA in the y-z plane; element `n` sits at column `n % cols`, row `n / cols`.
pub fn ris_steering(elements: usize, u: [f64; 3]) -> CVec {
    let (_, cols) = ris_grid(elements);
    CVec::from_fn(elements, |n, _| {
        let (iy, iz) = ((n % cols) as f64, (n / cols) as f64);
        C64::from_polar(1.0, std::f64::consts::PI * (iy * u[1] + iz * u[2]))
    })
}

fn rician_weights(epsilon: f64) -> (f64, f64) {
    if epsilon.is_infinite() {
        (1.0, 0.0)
    } else {
        ((epsilon / (1.0 + epsilon)).sqrt(), (1.0 / (1.0 + epsilon)).sqrt())
    }
}

/// Draws one coherence period of channels.
///
/// Random draws happen in a fixed order (user positions, direct channels, the
/// non-line-of-sight part of `G`, then each `h_r,k`), so a seeded generator yields
/// bit-identical realizations.
pub fn generate_channels<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<ChannelRealization> {
    config.validate()?;
    let (m, n, k) = (config.antennas, config.elements, config.users);
    let region = config.user_region;

    let positions: Vec<[f64; 3]> = (0..k)
        .map(|_| {
            std::array::from_fn(|axis| {
                if region.max[axis] > region.min[axis] {
                    rng.random_range(region.min[axis]..region.max[axis])
                } else {
                    region.min[axis]
                }
            })
        })
        .collect();

    let (los_w, nlos_w) = rician_weights(config.rician_factor);

    let mut h_d = Vec::with_capacity(k);
    for p in &positions {
        let (_, dist) = direction(config.bs_pos, *p)?;
        let rho0 = pathloss_gain(dist, PathKind::Direct)?.sqrt();
        h_d.push(complex_normal_vec(rng, m) * C64::from(rho0));
    }

    let (u_bs_ris, d_bs_ris) = direction(config.bs_pos, config.ris_pos)?;
    let (u_ris_bs, _) = direction(config.ris_pos, config.bs_pos)?;
    let rho2 = pathloss_gain(d_bs_ris, PathKind::Reflected)?.sqrt();
    let g_los = bs_steering(m, u_bs_ris) * ris_steering(n, u_ris_bs).transpose();
    let g_nlos = complex_normal_mat(rng, m, n);
    let g = (g_los * C64::from(los_w) + g_nlos * C64::from(nlos_w)) * C64::from(rho2);

    let mut h_r = Vec::with_capacity(k);
    for p in &positions {
        let (u, dist) = direction(config.ris_pos, *p)?;
        let rho1 = pathloss_gain(dist, PathKind::Reflected)?.sqrt();
        let los = ris_steering(n, u);
        let nlos = complex_normal_vec(rng, n);
        h_r.push((los * C64::from(los_w) + nlos * C64::from(nlos_w)) * C64::from(rho1));
    }

    ChannelRealization::from_parts(positions, h_d, h_r, g)
}

/// `h_d,k + A_k theta` with dimension checks. `theta` is not required to be unit-modulus.
pub fn effective_channel(h_d: &CVec, a: &CMat, theta: &CVec) -> Result<CVec> {
    check_dim("cascade rows", h_d.len(), a.nrows())?;
    check_dim("RIS phase vector length", a.ncols(), theta.len())?;
    Ok(h_d + a * theta)
}

/// Rates (bits/s/Hz) of users whose effective channels are `h` and beams are the
/// matching columns of `w`; every column interferes with every user.
pub fn rates_for_set(h: &[CVec], w: &CMat, noise: f64) -> Vec<f64> {
    h.iter()
        .enumerate()
        .map(|(k, hk)| {
            let gains: Vec<f64> = w.column_iter().map(|wj| hk.dotc(&wj).norm_sqr()).collect();
            let total: f64 = gains.iter().sum::<f64>() + noise;
            let interference = total - gains[k];
            (total / interference).log2()
        })
        .collect()
}

pub fn weighted_sum_rate(h: &[CVec], w: &CMat, alpha: &[f64], noise: f64) -> f64 {
    rates_for_set(h, w, noise).iter().zip(alpha).map(|(r, a)| a * r).sum()
}

/// Per-user rates over the whole pool; unscheduled users get zero.
pub fn achievable_rates(
    links: Links<'_>,
    theta: &RisConfig,
    beams: &BeamMatrix,
    schedule: &Schedule,
    noise: f64,
) -> Result<Vec<f64>> {
    if !(noise > 0.0) {
        return Err(Error::arg(format!("noise power must be positive, got {noise}")));
    }
    links.validate()?;
    check_dim("schedule pool size", links.users(), schedule.pool_size())?;
    check_dim("beam columns", schedule.len(), beams.columns())?;
    check_dim("beam rows", links.antennas(), beams.matrix().nrows())?;
    check_dim("RIS phase vector length", links.elements(), theta.len())?;
    let h = links.effective_all(schedule.users(), theta.as_vector());
    let set_rates = rates_for_set(&h, beams.matrix(), noise);
    let mut rates = vec![0.0; links.users()];
    for (&k, r) in schedule.users().iter().zip(set_rates) {
        rates[k] = r;
    }
    Ok(rates)
}
