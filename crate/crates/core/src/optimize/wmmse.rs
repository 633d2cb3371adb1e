use nalgebra::SymmetricEigen;

use crate::channel::{weighted_sum_rate, BeamMatrix};
use crate::config::OptimizerSettings;
use crate::error::{check_dim, Error, Result};
use crate::math::{all_finite_mat, all_finite_vec, CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseOptions {
    pub max_iter: usize,
    /// Absolute change of the weighted sum rate below which iteration stops.
    pub tol: f64,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

impl From<&OptimizerSettings> for WmmseOptions {
    fn from(s: &OptimizerSettings) -> Self {
        Self {
            max_iter: s.wmmse_max_iter,
            tol: s.wmmse_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseReport {
    pub beams: BeamMatrix,
    /// Weighted sum rate of the initial point followed by one entry per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// Multiplier of the power constraint in the last beamformer update.
    pub lambda: f64,
    pub converged: bool,
}

impl WmmseReport {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial point")
    }
}

/// Full-power MRT: `w_k` along `h_k`, total power split evenly.
pub fn mrt_beams(h: &[CVec], power: f64) -> CMat {
    let m = h.first().map_or(0, |v| v.len());
    let mut w = CMat::zeros(m, h.len());
    let per = (power / h.len().max(1) as f64).sqrt();
    for (k, hk) in h.iter().enumerate() {
        let n = hk.norm();
        if n > 0.0 {
            w.set_column(k, &(hk * C64::from(per / n)));
        }
    }
    w
}

/// Weighted sum-rate beamforming for the users whose effective channels are `h`.
///
/// Alternates the MMSE receiver, the MSE weights and the regularized MMSE beamformers.
/// The beamformer multiplier is zero when the unconstrained update already meets the
/// power budget and otherwise found by bisection on the eigen-decomposed power curve.
pub fn wmmse_beamformers(
    h: &[CVec],
    alpha: &[f64],
    power: f64,
    noise: f64,
    init: Option<&CMat>,
    opts: &WmmseOptions,
) -> Result<WmmseReport> {
    if h.is_empty() {
        return Err(Error::Empty("scheduled user set"));
    }
    let m = h[0].len();
    if h.len() > m {
        return Err(Error::arg(format!("{} users exceed {m} antennas", h.len())));
    }
    check_dim("weight vector length", h.len(), alpha.len())?;
    for hk in h {
        check_dim("effective channel length", m, hk.len())?;
        if !all_finite_vec(hk) {
            return Err(Error::NonFinite("effective channel"));
        }
    }
    if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::arg("weights must be positive and finite"));
    }
    if !(power > 0.0 && noise > 0.0) {
        return Err(Error::arg("power budget and noise must be positive"));
    }

    let mut w = match init {
        Some(w0) => {
            check_dim("initial beam rows", m, w0.nrows())?;
            check_dim("initial beam columns", h.len(), w0.ncols())?;
            if !all_finite_mat(w0) {
                return Err(Error::NonFinite("initial beamformers"));
            }
            w0.clone()
        }
        None => mrt_beams(h, power),
    };
    let p0 = w.norm_squared();
    if p0 == 0.0 {
        w = mrt_beams(h, power);
    } else if p0 > power {
        w *= C64::from((power / p0).sqrt());
    }

    let mut trace = vec![weighted_sum_rate(h, &w, alpha, noise)];
    let mut lambda = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (next, lam) = wmmse_step(h, alpha, power, noise, &w);
        w = next;
        lambda = lam;
        iterations += 1;
        let obj = weighted_sum_rate(h, &w, alpha, noise);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if (obj - prev).abs() < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(WmmseReport {
        beams: BeamMatrix::new(w),
        objective_trace: trace,
        iterations,
        lambda,
        converged,
    })
}

/// One receiver / weight / beamformer sweep; returns the new beams and multiplier.
pub fn wmmse_step(h: &[CVec], alpha: &[f64], power: f64, noise: f64, w: &CMat) -> (CMat, f64) {
    let m = w.nrows();
    let mut j = CMat::zeros(m, m);
    let mut rhs = CMat::zeros(m, h.len());
    for (k, hk) in h.iter().enumerate() {
        let gains: Vec<C64> = w.column_iter().map(|wj| hk.dotc(&wj)).collect();
        let total = gains.iter().map(|g| g.norm_sqr()).sum::<f64>() + noise;
        let xi = gains[k].conj() / total;
        let mse = 1.0 - gains[k].norm_sqr() / total;
        let nu = 1.0 / mse.max(f64::MIN_POSITIVE);
        let c = alpha[k] * nu;
        j += (hk * hk.adjoint()) * C64::from(c * xi.norm_sqr());
        rhs.set_column(k, &(hk * (xi.conj() * c)));
    }
    let eig = SymmetricEigen::new(j);
    let e = eig.eigenvalues;
    let u = eig.eigenvectors;
    let b = u.adjoint() * &rhs;
    let emax = e.iter().cloned().fold(0.0_f64, f64::max);
    let floor = emax * 1e-12;
    let c: Vec<f64> = (0..m).map(|i| b.row(i).norm_squared()).collect();
    let active: Vec<bool> = e.iter().map(|&ei| ei > floor).collect();
    let power_at = |lam: f64| -> f64 {
        (0..m)
            .filter(|&i| active[i] || lam > 0.0)
            .map(|i| c[i] / (e[i].max(0.0) + lam).powi(2))
            .sum()
    };

    let lambda = if power_at(0.0) <= power {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = (c.iter().sum::<f64>() / power).sqrt();
        while power_at(hi) > power {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if power_at(mid) > power {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        hi
    };

    let mut scaled = b;
    for i in 0..m {
        let d = e[i].max(0.0) + lambda;
        let f = if lambda == 0.0 && !active[i] { 0.0 } else { 1.0 / d };
        scaled.row_mut(i).scale_mut(f);
    }
    let mut next = u * scaled;
    let p = next.norm_squared();
    if p > power {
        next *= C64::from((power / p).sqrt());
    }
    (next, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::complex_normal_vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_user_is_mrt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let h = vec![complex_normal_vec(&mut rng, 4)];
            let (p, s2) = (2.0, 0.3);
            let rep = wmmse_beamformers(&h, &[1.0], p, s2, None, &WmmseOptions::default()).unwrap();
            let want = (1.0 + p * h[0].norm_squared() / s2).log2();
            assert!((rep.objective() - want).abs() < 1e-6);
            assert!((rep.beams.total_power() - p).abs() < 1e-9);
        }
    }

    #[test]
    fn orthogonal_users_waterfill() {
        let h = vec![
            CVec::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, 0.0)]),
            CVec::from_vec(vec![C64::new(0.0, 0.0), C64::new(0.0, 0.5)]),
        ];
        let (p, s2) = (1.0, 0.1);
        let opts = WmmseOptions {
            max_iter: 5000,
            tol: 1e-14,
        };
        let rep = wmmse_beamformers(&h, &[1.0, 1.0], p, s2, None, &opts).unwrap();
        let w = rep.beams.matrix();
        assert!(h[0].dotc(&w.column(1)).norm_sqr() < 1e-9);
        assert!(h[1].dotc(&w.column(0)).norm_sqr() < 1e-9);
        // water level mu: p_k = mu - s2 / g_k
        let g = [4.0, 0.25];
        let mu = (p + s2 / g[0] + s2 / g[1]) / 2.0;
        let powers = rep.beams.column_powers();
        for k in 0..2 {
            assert!((powers[k] - (mu - s2 / g[k])).abs() < 1e-4, "{powers:?}");
        }
    }

    #[test]
    fn monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let h: Vec<CVec> = (0..3).map(|_| complex_normal_vec(&mut rng, 3)).collect();
            let rep = wmmse_beamformers(&h, &[1.0, 0.5, 2.0], 1.0, 0.05, None, &WmmseOptions::default()).unwrap();
            for pair in rep.objective_trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9);
            }
            assert!(rep.beams.total_power() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn fixed_point_is_self_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Vec<CVec> = (0..2).map(|_| complex_normal_vec(&mut rng, 3)).collect();
        let alpha = [1.0, 1.5];
        let opts = WmmseOptions {
            max_iter: 10_000,
            tol: 1e-15,
        };
        let rep = wmmse_beamformers(&h, &alpha, 1.0, 0.1, None, &opts).unwrap();
        let (again, _) = wmmse_step(&h, &alpha, 1.0, 0.1, rep.beams.matrix());
        let rel = (&again - rep.beams.matrix()).norm() / rep.beams.matrix().norm();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn rejects_bad_input() {
        let opts = WmmseOptions::default();
        assert!(wmmse_beamformers(&[], &[], 1.0, 1.0, None, &opts).is_err());
        let h = vec![CVec::from_element(1, C64::new(1.0, 0.0)); 2];
        assert!(wmmse_beamformers(&h, &[1.0, 1.0], 1.0, 1.0, None, &opts).is_err());
        let h = vec![CVec::from_element(2, C64::new(f64::NAN, 0.0))];
        assert!(matches!(
            wmmse_beamformers(&h, &[1.0], 1.0, 1.0, None, &opts),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn oversized_init_is_scaled_down() {
        let h = vec![CVec::from_element(2, C64::new(1.0, 0.0))];
        let init = CMat::from_element(2, 1, C64::new(10.0, 0.0));
        let opts = WmmseOptions { max_iter: 0, tol: 1e-8 };
        let rep = wmmse_beamformers(&h, &[1.0], 1.0, 1.0, Some(&init), &opts).unwrap();
        assert!((rep.beams.total_power() - 1.0).abs() < 1e-12);
    }
}
