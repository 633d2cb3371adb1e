use rand::seq::index::sample;
use rand::Rng;

use super::{Decision, Schedule, SlotProblem};
use crate::channel::RisConfig;
use crate::error::{Error, Result};
use crate::optimize::{rcg_ris_phases, wmmse_beamformers, RcgOptions, WmmseOptions};

/// Block coordinate ascent for a fixed user set: WMMSE at `theta0`, then alternating
/// RCG and warm-started WMMSE until the objective stops improving.
pub fn optimize_subset(problem: &SlotProblem<'_>, users: &[usize], theta0: &RisConfig) -> Result<Decision> {
    if users.is_empty() {
        return Err(Error::Empty("user subset"));
    }
    let schedule = Schedule::new(users.to_vec(), problem.users(), problem.antennas())?;
    let alpha = problem.alpha_of(users);
    let wopts = WmmseOptions::from(problem.settings);
    let ropts = RcgOptions::from(problem.settings);

    let mut theta = theta0.clone();
    let h = problem.links.effective_all(users, theta.as_vector());
    let rep = wmmse_beamformers(&h, &alpha, problem.power, problem.noise, None, &wopts)?;
    let mut obj = rep.objective();
    let mut w = rep.beams;

    for _ in 0..problem.settings.bcd_max_outer {
        let r = rcg_ris_phases(problem.links, users, w.matrix(), &alpha, problem.noise, &theta, &ropts)?;
        let h = problem.links.effective_all(users, r.theta.as_vector());
        let rep = wmmse_beamformers(&h, &alpha, problem.power, problem.noise, Some(w.matrix()), &wopts)?;
        let next = rep.objective();
        let improved = problem.improves(next, obj);
        if next >= obj {
            theta = r.theta;
            w = rep.beams;
            obj = next;
        }
        if !improved {
            break;
        }
    }
    Ok(Decision {
        schedule,
        theta,
        beams: w,
        objective: obj,
    })
}

/// Uniformly random set of `min(M, K)` users, then [`optimize_subset`] from a random
/// phase start. The start is drawn before the set.
pub fn random_schedule<R: Rng + ?Sized>(problem: &SlotProblem<'_>, rng: &mut R) -> Result<Decision> {
    let theta0 = RisConfig::random(problem.links.elements(), rng);
    let mut users = sample(rng, problem.users(), problem.max_scheduled()).into_vec();
    users.sort_unstable();
    optimize_subset(problem, &users, &theta0)
}

/// Cyclic scheduler: each call serves the next `min(M, K)` users after the last one served.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundRobin {
    next: usize,
}

impl RoundRobin {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_users(&mut self, users: usize, antennas: usize) -> Vec<usize> {
        let n = antennas.min(users);
        let out = (0..n).map(|i| (self.next + i) % users).collect();
        self.next = (self.next + n) % users.max(1);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_is_exactly_fair() {
        let mut rr = RoundRobin::new();
        let (k, m) = (5, 2);
        let mut counts = vec![0; k];
        for _ in 0..k * 7 {
            for u in rr.next_users(k, m) {
                counts[u] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 7 * m));
        assert_eq!(RoundRobin::new().next_users(1, 4), vec![0]);
    }
}
