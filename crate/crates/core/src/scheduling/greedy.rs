use rand::Rng;

use super::{Decision, Schedule, SlotProblem};
use crate::channel::{BeamMatrix, RisConfig};
use crate::error::Result;
use crate::optimize::{rcg_ris_phases, wmmse_beamformers, RcgOptions, WmmseOptions};

/// Bookkeeping of one greedy run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GreedyTrace {
    /// Objective after the seed user and after each accepted addition.
    pub accepted: Vec<f64>,
    /// Users in the order they were added.
    pub added: Vec<usize>,
    pub outer_iterations: usize,
}

struct Incumbent {
    users: Vec<usize>,
    theta: RisConfig,
    beams: BeamMatrix,
    objective: f64,
}

/// Greedy user selection with block coordinate descent.
///
/// Draws a random phase start, seeds the set with the best full-power MRT user,
/// greedily adds users while WMMSE improves the weighted sum rate, then alternates
/// RCG, WMMSE and one greedy addition per round until nothing improves.
pub fn greedy_schedule_bcd<R: Rng + ?Sized>(problem: &SlotProblem<'_>, rng: &mut R) -> Result<(Decision, GreedyTrace)> {
    let theta0 = RisConfig::random(problem.links.elements(), rng);
    let wopts = WmmseOptions::from(problem.settings);
    let ropts = RcgOptions::from(problem.settings);
    let mut trace = GreedyTrace::default();

    let h = problem
        .links
        .effective_all(&(0..problem.users()).collect::<Vec<_>>(), theta0.as_vector());
    let single: Vec<f64> = h
        .iter()
        .enumerate()
        .map(|(k, hk)| problem.alpha[k] * (1.0 + problem.power * hk.norm_squared() / problem.noise).log2())
        .collect();
    let seed = (0..single.len()).fold(0, |best, k| if single[k] > single[best] { k } else { best });
    let rep = wmmse_beamformers(
        &h[seed..=seed],
        &[problem.alpha[seed]],
        problem.power,
        problem.noise,
        None,
        &wopts,
    )?;
    let mut inc = Incumbent {
        users: vec![seed],
        theta: theta0,
        objective: rep.objective(),
        beams: rep.beams,
    };
    trace.accepted.push(inc.objective);
    trace.added.push(seed);

    while inc.users.len() < problem.max_scheduled() && try_add(problem, &mut inc, &wopts, &mut trace)? {}

    for _ in 0..problem.settings.bcd_max_outer {
        trace.outer_iterations += 1;
        let start = inc.objective;
        let alpha = problem.alpha_of(&inc.users);
        let r = rcg_ris_phases(
            problem.links,
            &inc.users,
            inc.beams.matrix(),
            &alpha,
            problem.noise,
            &inc.theta,
            &ropts,
        )?;
        let h = problem.links.effective_all(&inc.users, r.theta.as_vector());
        let rep = wmmse_beamformers(
            &h,
            &alpha,
            problem.power,
            problem.noise,
            Some(inc.beams.matrix()),
            &wopts,
        )?;
        if rep.objective() >= inc.objective {
            inc.theta = r.theta;
            inc.objective = rep.objective();
            inc.beams = rep.beams;
        }
        if inc.users.len() < problem.max_scheduled() {
            try_add(problem, &mut inc, &wopts, &mut trace)?;
        }
        if !problem.improves(inc.objective, start) {
            break;
        }
    }

    let schedule = Schedule::new(inc.users, problem.users(), problem.antennas())?;
    Ok((
        Decision {
            schedule,
            theta: inc.theta,
            beams: inc.beams,
            objective: inc.objective,
        },
        trace,
    ))
}

/// Tries every unscheduled user at the current phases; keeps the best if it improves.
fn try_add(
    problem: &SlotProblem<'_>,
    inc: &mut Incumbent,
    wopts: &WmmseOptions,
    trace: &mut GreedyTrace,
) -> Result<bool> {
    let mut best: Option<(usize, BeamMatrix, f64)> = None;
    for k in 0..problem.users() {
        if inc.users.contains(&k) {
            continue;
        }
        let mut cand = inc.users.clone();
        cand.push(k);
        let h = problem.links.effective_all(&cand, inc.theta.as_vector());
        let rep = wmmse_beamformers(&h, &problem.alpha_of(&cand), problem.power, problem.noise, None, wopts)?;
        if best.as_ref().is_none_or(|(_, _, obj)| rep.objective() > *obj) {
            best = Some((k, rep.beams.clone(), rep.objective()));
        }
    }
    match best {
        Some((k, beams, obj)) if problem.improves(obj, inc.objective) => {
            inc.users.push(k);
            inc.beams = beams;
            inc.objective = obj;
            trace.accepted.push(obj);
            trace.added.push(k);
            Ok(true)
        }
        _ => Ok(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Links;
    use crate::config::SystemConfig;
    use crate::math::{complex_normal_mat, complex_normal_vec, CMat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_user_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SystemConfig {
            downlink_power: 1.0,
            noise_down: 0.1,
            ..SystemConfig::toy(2, 3, 1)
        };
        let hd = vec![complex_normal_vec(&mut rng, 2)];
        let a = vec![complex_normal_mat(&mut rng, 2, 3)];
        let p = SlotProblem::new(
            Links {
                direct: &hd,
                cascade: &a,
            },
            &[1.0],
            &cfg,
        )
        .unwrap();
        let (d, trace) = greedy_schedule_bcd(&p, &mut rng).unwrap();
        assert_eq!(d.schedule.users(), &[0]);
        let h = p.links.effective(0, d.theta.as_vector());
        let want = (1.0 + h.norm_squared() / 0.1).log2();
        assert!((d.objective - want).abs() < 1e-6);
        for pair in trace.accepted.windows(2) {
            assert!(pair[1] > pair[0]);
        }
    }

    #[test]
    fn duplicate_users_are_not_both_served() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SystemConfig {
            downlink_power: 1.0,
            noise_down: 1e-4,
            ..SystemConfig::toy(2, 2, 2)
        };
        let h = complex_normal_vec(&mut rng, 2);
        let hd = vec![h.clone(), h];
        let a = vec![CMat::zeros(2, 2); 2];
        let p = SlotProblem::new(
            Links {
                direct: &hd,
                cascade: &a,
            },
            &[1.0, 1.0],
            &cfg,
        )
        .unwrap();
        let (d, _) = greedy_schedule_bcd(&p, &mut rng).unwrap();
        assert_eq!(d.schedule.len(), 1);

        let both = crate::scheduling::optimize_subset(&p, &[0, 1], &d.theta).unwrap();
        assert!(both.objective < d.objective);
    }
}
