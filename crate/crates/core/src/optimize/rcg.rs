use crate::channel::{Links, RisConfig};
use crate::config::OptimizerSettings;
use crate::error::{check_dim, Error, Result};
use crate::math::{CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgOptions {
    pub max_iter: usize,
    /// Riemannian gradient norm below which iteration stops.
    pub tol: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for RcgOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

impl From<&OptimizerSettings> for RcgOptions {
    fn from(s: &OptimizerSettings) -> Self {
        Self {
            max_iter: s.rcg_max_iter,
            tol: s.rcg_tol,
            armijo_c: s.rcg_armijo_c,
            shrink: s.rcg_shrink,
            ..Self::default()
        }
    }
}

/// Weighted sum rate of a fixed beam set as a function of the RIS phases.
///
/// With `a_kj = A_k^H w_j` and `d_kj = h_d,k^H w_j` the received amplitude of beam `j`
/// at user `k` is `d_kj + theta^H a_kj`, so value and gradient cost `O(|S|^2 N)`.
#[derive(Debug, Clone)]
pub struct RisObjective {
    a: Vec<Vec<CVec>>,
    d: Vec<Vec<C64>>,
    alpha: Vec<f64>,
    noise: f64,
    elements: usize,
}

impl RisObjective {
    /// `users[i]` is served by column `i` of `w` with weight `alpha[i]`.
    pub fn new(links: Links<'_>, users: &[usize], w: &CMat, alpha: &[f64], noise: f64) -> Result<Self> {
        check_dim("beam columns", users.len(), w.ncols())?;
        check_dim("weight vector length", users.len(), alpha.len())?;
        check_dim("beam rows", links.antennas(), w.nrows())?;
        if !(noise > 0.0) {
            return Err(Error::arg("noise power must be positive"));
        }
        let mut a = Vec::with_capacity(users.len());
        let mut d = Vec::with_capacity(users.len());
        for &k in users {
            if k >= links.users() {
                return Err(Error::arg(format!("user {k} outside pool of {}", links.users())));
            }
            let ak = links.cascade[k].adjoint() * w;
            a.push(ak.column_iter().map(|c| c.into_owned()).collect());
            d.push(w.column_iter().map(|wj| links.direct[k].dotc(&wj)).collect());
        }
        Ok(Self {
            a,
            d,
            alpha: alpha.to_vec(),
            noise,
            elements: links.elements(),
        })
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    fn amplitudes(&self, theta: &CVec) -> Vec<Vec<C64>> {
        self.a
            .iter()
            .zip(&self.d)
            .map(|(ak, dk)| ak.iter().zip(dk).map(|(akj, dkj)| dkj + theta.dotc(akj)).collect())
            .collect()
    }

    pub fn value(&self, theta: &CVec) -> f64 {
        let c = self.amplitudes(theta);
        c.iter()
            .enumerate()
            .map(|(k, ck)| {
                let total = ck.iter().map(|z| z.norm_sqr()).sum::<f64>() + self.noise;
                let interference = total - ck[k].norm_sqr();
                self.alpha[k] * (total / interference).log2()
            })
            .sum()
    }

    /// Euclidean gradient `2 df/d(theta*)`: real part is `df/dRe(theta)`, imaginary
    /// part is `df/dIm(theta)`.
    pub fn euclidean_gradient(&self, theta: &CVec) -> CVec {
        let c = self.amplitudes(theta);
        let mut g = CVec::zeros(self.elements);
        let ln2 = std::f64::consts::LN_2;
        for (k, ck) in c.iter().enumerate() {
            let total = ck.iter().map(|z| z.norm_sqr()).sum::<f64>() + self.noise;
            let interference = total - ck[k].norm_sqr();
            for (j, cj) in ck.iter().enumerate() {
                let mut coef = 1.0 / total;
                if j != k {
                    coef -= 1.0 / interference;
                }
                let s = cj.conj() * (2.0 * self.alpha[k] * coef / ln2);
                g.axpy(s, &self.a[k][j], C64::from(1.0));
            }
        }
        g
    }
}

/// Projection onto the tangent space of the unit-modulus manifold at `theta`.
pub fn tangent_projection(v: &CVec, theta: &CVec) -> CVec {
    v.zip_map(theta, |vn, tn| vn - tn * (vn * tn.conj()).re)
}

fn retract(v: &CVec) -> CVec {
    v.map(|z| {
        let n = z.norm();
        if n > 0.0 {
            z / n
        } else {
            C64::new(1.0, 0.0)
        }
    })
}

fn real_inner(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).re
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcgReport {
    pub theta: RisConfig,
    /// Objective at `theta0` followed by one entry per accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// Largest `| |theta_n| - 1 |` seen after any retraction.
    pub max_modulus_error: f64,
    pub converged: bool,
}

impl RcgReport {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial point")
    }
}

/// Riemannian conjugate gradient ascent of [`RisObjective`] from `theta0`.
///
/// Polak-Ribiere+ directions with projection transport, restart to the gradient
/// whenever the direction stops being an ascent direction, Armijo backtracking and
/// element-wise normalization as the retraction.
pub fn rcg_maximize(objective: &RisObjective, theta0: &RisConfig, opts: &RcgOptions) -> Result<RcgReport> {
    check_dim("RIS phase vector length", objective.elements(), theta0.len())?;
    let mut theta = theta0.as_vector().clone();
    let mut f = objective.value(&theta);
    let mut trace = vec![f];
    let mut grad = tangent_projection(&objective.euclidean_gradient(&theta), &theta);
    let mut dir = grad.clone();
    let mut max_err: f64 = theta0.max_modulus_error();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if grad.norm() < opts.tol {
            converged = true;
            break;
        }
        let mut slope = real_inner(&grad, &dir);
        if slope <= 0.0 {
            dir = grad.clone();
            slope = grad.norm_squared();
        }
        let dmax = dir.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut t = 1.0 / dmax;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let cand = retract(&(&theta + &dir * C64::from(t)));
            let fc = objective.value(&cand);
            if fc >= f + opts.armijo_c * t * slope && fc >= f {
                accepted = Some((cand, fc));
                break;
            }
            t *= opts.shrink;
        }
        let Some((next, fnext)) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        for z in next.iter() {
            max_err = max_err.max((z.norm() - 1.0).abs());
        }
        let next_grad = tangent_projection(&objective.euclidean_gradient(&next), &next);
        let old_grad_t = tangent_projection(&grad, &next);
        let old_dir_t = tangent_projection(&dir, &next);
        let beta = (real_inner(&next_grad, &(&next_grad - &old_grad_t)) / grad.norm_squared()).max(0.0);
        dir = &next_grad + old_dir_t * C64::from(beta);
        theta = next;
        f = fnext;
        grad = next_grad;
        trace.push(f);
    }

    Ok(RcgReport {
        theta: RisConfig::new(theta)?,
        objective_trace: trace,
        iterations,
        max_modulus_error: max_err,
        converged,
    })
}

/// Optimizes the RIS phases for scheduled `users` served by the columns of `w`.
pub fn rcg_ris_phases(
    links: Links<'_>,
    users: &[usize],
    w: &CMat,
    alpha: &[f64],
    noise: f64,
    theta0: &RisConfig,
    opts: &RcgOptions,
) -> Result<RcgReport> {
    let objective = RisObjective::new(links, users, w, alpha, noise)?;
    rcg_maximize(&objective, theta0, opts)
}
