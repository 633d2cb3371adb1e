//! Discrete scheduling decisions and proportional-fair weight dynamics.

mod baselines;
mod exhaustive;
mod greedy;

pub use baselines::{optimize_subset, random_schedule, RoundRobin};
pub use exhaustive::{exhaustive_schedule, subset_count, ExhaustiveOutcome, SUBSET_GUARD};
pub use greedy::{greedy_schedule_bcd, GreedyTrace};

use crate::channel::{BeamMatrix, Links, RisConfig};
use crate::config::{OptimizerSettings, SystemConfig};
use crate::error::{Error, Result};
use crate::math::CMat;

/// Ordered set of scheduled users drawn from a pool of `pool_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    users: Vec<usize>,
    pool_size: usize,
}

impl Schedule {
    /// Rejects duplicates, out-of-pool ids and sets larger than `max_len`.
    pub fn new(users: Vec<usize>, pool_size: usize, max_len: usize) -> Result<Self> {
        if users.len() > max_len {
            return Err(Error::arg(format!(
                "{} users scheduled, at most {max_len} allowed",
                users.len()
            )));
        }
        let mut seen = vec![false; pool_size];
        for &k in &users {
            if k >= pool_size {
                return Err(Error::arg(format!("user {k} outside pool of {pool_size}")));
            }
            if seen[k] {
                return Err(Error::arg(format!("user {k} scheduled twice")));
            }
            seen[k] = true;
        }
        Ok(Self { users, pool_size })
    }

    pub fn users(&self) -> &[usize] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn contains(&self, user: usize) -> bool {
        self.users.contains(&user)
    }

    /// The 0/1 indicator `beta` over the pool.
    pub fn indicator(&self) -> Vec<u8> {
        let mut beta = vec![0; self.pool_size];
        for &k in &self.users {
            beta[k] = 1;
        }
        beta
    }

    /// Same users in ascending id order.
    pub fn sorted(&self) -> Schedule {
        let mut users = self.users.clone();
        users.sort_unstable();
        Schedule {
            users,
            pool_size: self.pool_size,
        }
    }
}

/// One joint decision `(S, theta, W)` with its weighted sum-rate objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub schedule: Schedule,
    pub theta: RisConfig,
    /// Columns follow `schedule.users()`.
    pub beams: BeamMatrix,
    pub objective: f64,
}

/// Everything a per-slot optimizer needs: channels (true or estimated), PF weights
/// of the whole pool and the link budget.
#[derive(Debug, Clone, Copy)]
pub struct SlotProblem<'a> {
    pub links: Links<'a>,
    pub alpha: &'a [f64],
    pub power: f64,
    pub noise: f64,
    pub settings: &'a OptimizerSettings,
}

impl<'a> SlotProblem<'a> {
    pub fn new(links: Links<'a>, alpha: &'a [f64], config: &'a SystemConfig) -> Result<Self> {
        links.validate()?;
        crate::error::check_dim("weight vector length", links.users(), alpha.len())?;
        Ok(Self {
            links,
            alpha,
            power: config.downlink_power,
            noise: config.noise_down,
            settings: &config.optimizer,
        })
    }

    pub fn users(&self) -> usize {
        self.links.users()
    }

    pub fn antennas(&self) -> usize {
        self.links.antennas()
    }

    pub fn max_scheduled(&self) -> usize {
        self.antennas().min(self.users())
    }

    pub(crate) fn alpha_of(&self, users: &[usize]) -> Vec<f64> {
        users.iter().map(|&k| self.alpha[k]).collect()
    }

    /// `a` improves on `b` by more than the relative tolerance.
    pub(crate) fn improves(&self, a: f64, b: f64) -> bool {
        a > b + self.settings.improve_rtol * b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Exponentially weighted average rates and PF weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PfState {
    rbar: Vec<f64>,
    alpha: Vec<f64>,
    slot: u64,
    gamma: f64,
}

/// Floor applied to the average rate before inverting it.
const RBAR_FLOOR: f64 = 1e-12;

impl PfState {
    /// Starts every user at an average rate of 1 bit/s/Hz.
    pub fn new(users: usize, gamma: f64) -> Result<Self> {
        Self::with_initial(vec![1.0; users], gamma)
    }

    pub fn with_initial(rbar: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::arg(format!("forgetting factor {gamma} not in [0, 1]")));
        }
        if rbar.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::arg("average rates must be finite and non-negative"));
        }
        let alpha = rbar.iter().map(|r| 1.0 / r.max(RBAR_FLOOR)).collect();
        Ok(Self {
            rbar,
            alpha,
            slot: 0,
            gamma,
        })
    }

    pub fn rbar(&self) -> &[f64] {
        &self.rbar
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn users(&self) -> usize {
        self.rbar.len()
    }

    /// `Rbar <- (1 - gamma) Rbar + gamma R`, `alpha <- 1 / Rbar`.
    pub fn update(&mut self, rates: &[f64]) -> Result<()> {
        crate::error::check_dim("rate vector length", self.rbar.len(), rates.len())?;
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::arg("rates must be finite and non-negative"));
        }
        for ((rb, a), &r) in self.rbar.iter_mut().zip(&mut self.alpha).zip(rates) {
            *rb = (1.0 - self.gamma) * *rb + self.gamma * r;
            *a = 1.0 / rb.max(RBAR_FLOOR);
        }
        self.slot += 1;
        Ok(())
    }
}

/// Non-mutating form of [`PfState::update`].
pub fn pf_update(state: &PfState, rates: &[f64]) -> Result<PfState> {
    let mut next = state.clone();
    next.update(rates)?;
    Ok(next)
}

/// Picks the `min(M, K)` users whose columns of `w` carry the most power, strongest
/// first; equal powers go to the lower user index.
pub fn implicit_schedule(w: &CMat, antennas: usize) -> Schedule {
    let powers: Vec<f64> = w.column_iter().map(|c| c.norm_squared()).collect();
    top_by_power(&powers, antennas)
}

pub(crate) fn top_by_power(powers: &[f64], antennas: usize) -> Schedule {
    let mut order: Vec<usize> = (0..powers.len()).collect();
    order.sort_by(|&a, &b| powers[b].total_cmp(&powers[a]).then(a.cmp(&b)));
    order.truncate(antennas.min(powers.len()));
    Schedule {
        users: order,
        pool_size: powers.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::C64;

    #[test]
    fn schedule_validation() {
        let s = Schedule::new(vec![2, 0], 4, 2).unwrap();
        assert_eq!(s.indicator(), vec![1, 0, 1, 0]);
        assert!(s.contains(2) && !s.contains(1));
        assert_eq!(s.sorted().users(), &[0, 2]);
        assert!(Schedule::new(vec![0, 1, 2], 4, 2).is_err());
        assert!(Schedule::new(vec![4], 4, 2).is_err());
        assert!(Schedule::new(vec![1, 1], 4, 2).is_err());
    }

    #[test]
    fn pf_arithmetic() {
        let s = PfState::with_initial(vec![2.0], 0.01).unwrap();
        let s = pf_update(&s, &[4.0]).unwrap();
        assert!((s.rbar()[0] - 2.02).abs() < 1e-15);
        assert!((s.alpha()[0] - 1.0 / 2.02).abs() < 1e-15);
        assert_eq!(s.slot(), 1);

        let s = pf_update(&PfState::with_initial(vec![2.0, 3.0], 1.0).unwrap(), &[0.5, 7.0]).unwrap();
        assert_eq!(s.rbar(), &[0.5, 7.0]);

        let s0 = PfState::with_initial(vec![2.0, 3.0], 0.0).unwrap();
        let s1 = pf_update(&s0, &[9.0, 9.0]).unwrap();
        assert_eq!(s1.rbar(), s0.rbar());
        assert_eq!(s1.alpha(), s0.alpha());
        assert_eq!(s1.slot(), 1);

        assert!(PfState::new(3, 1.5).is_err());
        assert!(PfState::new(3, -0.1).is_err());
        assert_eq!(PfState::new(3, 0.1).unwrap().alpha(), &[1.0, 1.0, 1.0]);
    }

    fn columns_with_powers(powers: &[f64]) -> CMat {
        CMat::from_fn(1, powers.len(), |_, k| C64::new(powers[k].sqrt(), 0.0))
    }

    #[test]
    fn implicit_top_m() {
        let s = implicit_schedule(&columns_with_powers(&[0.5, 0.1, 0.9, 0.3]), 2);
        assert_eq!(s.users(), &[2, 0]);
        assert_eq!(implicit_schedule(&columns_with_powers(&[0.2]), 2).users(), &[0]);
        let s = implicit_schedule(&columns_with_powers(&[1.0; 4]), 2);
        assert_eq!(s.users(), &[0, 1]);
    }
}
