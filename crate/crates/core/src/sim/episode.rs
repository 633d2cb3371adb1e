use std::path::PathBuf;

use rayon::prelude::*;

use super::{compute_metrics, BaselineScheduler, CsiMode, EpisodeResult, PilotMode, SlotRecord};
use crate::channel::{achievable_rates, generate_channels, BeamMatrix, ChannelRealization, LinkSet, RisConfig};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::estimation::{estimate_links, high_dim_stats, lmmse_estimate_combined, LmmseStats};
use crate::gnn::{build_features, decode_outputs, gnn_forward, raw_features, Arch, FeatureNorm, GnnModel, Widths};
use crate::math::{stream_rng, CVec, StreamDomain};
use crate::optimize::{quantize_phases, wmmse_beamformers, WmmseOptions};
use crate::pilots::{
    decorrelate_collect, make_pilots, pilot_overhead, receive_block, uplink_receive_subframe, PilotBlock, RawSubframe,
};
use crate::scheduling::{
    exhaustive_schedule, greedy_schedule_bcd, implicit_schedule, optimize_subset, random_schedule, Decision, PfState,
    RoundRobin, Schedule, SlotProblem,
};

#[derive(Debug, Clone, Default)]
pub struct EpisodeOptions {
    pub periods: usize,
    pub seed: u64,
    /// Pre-fitted high-dimensional statistics; fitted on the calibration streams when absent.
    pub stats: Option<LmmseStats>,
    /// Binary cache consulted before fitting.
    pub stats_cache: Option<PathBuf>,
}

impl EpisodeOptions {
    pub fn new(periods: usize, seed: u64) -> Self {
        Self {
            periods,
            seed,
            ..Self::default()
        }
    }

    fn resolve_stats(&self, config: &SystemConfig) -> Result<LmmseStats> {
        match &self.stats {
            Some(s) => Ok(s.clone()),
            None => Ok(high_dim_stats(config, self.seed, self.stats_cache.as_deref())?.1),
        }
    }
}

/// Scheduling network (`D = D_beta`) and RIS network (`D = D_theta`).
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModels {
    pub scheduling: GnnModel,
    pub ris: GnnModel,
}

impl GnnModels {
    /// Random weights on the model-initialization streams of `seed`, with feature
    /// standardization fitted on `sample_periods` simulated uplink blocks.
    pub fn initialize(
        config: &SystemConfig,
        widths: Widths,
        rounds: usize,
        seed: u64,
        sample_periods: usize,
    ) -> Result<Self> {
        config.validate()?;
        let arch = |depth| Arch {
            antennas: config.antennas,
            elements: config.elements,
            depth,
            rounds,
            widths,
        };
        let blocks = (0..sample_periods.max(1) as u64)
            .into_par_iter()
            .map(|p| {
                let ch = generate_channels(config, &mut stream_rng(seed, StreamDomain::ModelInit, 1_000_000 + p))?;
                uplink_block(
                    config,
                    &ch,
                    config.d_theta,
                    &mut stream_rng(seed, StreamDomain::ModelInit, 2_000_000 + p),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let norm_for = |depth: usize| -> Result<FeatureNorm> {
            let mut samples = Vec::new();
            for b in &blocks {
                samples.extend(raw_features(&vec![1.0; b.users()], &b.prefix(depth)?)?);
            }
            FeatureNorm::fit(&samples)
        };
        let scheduling = GnnModel::random(arch(config.d_beta), &mut stream_rng(seed, StreamDomain::ModelInit, 0))?
            .with_norm(norm_for(config.d_beta)?)?;
        let ris = GnnModel::random(arch(config.d_theta), &mut stream_rng(seed, StreamDomain::ModelInit, 1))?
            .with_norm(norm_for(config.d_theta)?)?;
        Ok(Self { scheduling, ris })
    }

    fn check(&self, config: &SystemConfig) -> Result<()> {
        for (model, depth, what) in [
            (&self.scheduling, config.d_beta, "scheduling"),
            (&self.ris, config.d_theta, "RIS"),
        ] {
            let a = model.arch();
            if (a.antennas, a.elements, a.depth) != (config.antennas, config.elements, depth) {
                return Err(Error::config(format!(
                    "{what} model is built for (M, N, D) = ({}, {}, {}), scenario needs ({}, {}, {depth})",
                    a.antennas, a.elements, a.depth, config.antennas, config.elements
                )));
            }
        }
        Ok(())
    }
}

/// `depth` uplink sub-frames of length-`K` pilots, each under fresh random phases.
fn uplink_block<R: rand::Rng + ?Sized>(
    config: &SystemConfig,
    ch: &ChannelRealization,
    depth: usize,
    rng: &mut R,
) -> Result<PilotBlock> {
    let x = make_pilots(config.users, config.uplink_power)?;
    let raw = (0..depth)
        .map(|_| {
            let theta = RisConfig::random(config.elements, rng);
            uplink_receive_subframe(ch.links(), &theta, &x, config.noise_up, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    decorrelate_collect(&raw, &x, config.users)
}

struct Period {
    channels: ChannelRealization,
    block: Option<PilotBlock>,
    estimate: Option<LinkSet>,
}

fn prepare_periods(
    config: &SystemConfig,
    opts: &EpisodeOptions,
    depth: usize,
    stats: Option<&LmmseStats>,
) -> Result<Vec<Period>> {
    (0..opts.periods as u64)
        .into_par_iter()
        .map(|p| {
            let channels = generate_channels(config, &mut stream_rng(opts.seed, StreamDomain::Channels, p))?;
            if depth == 0 {
                return Ok(Period {
                    channels,
                    block: None,
                    estimate: None,
                });
            }
            let block = uplink_block(
                config,
                &channels,
                depth,
                &mut stream_rng(opts.seed, StreamDomain::Pilots, p),
            )?;
            let estimate = stats.map(|s| estimate_links(&block, s)).transpose()?;
            Ok(Period {
                channels,
                block: Some(block),
                estimate,
            })
        })
        .collect()
}

fn slot_index(config: &SystemConfig, period: usize, slot: usize) -> u64 {
    (period * config.slots_per_period + slot) as u64
}

/// Realizes the slot on the true channels, logs it and updates the PF state.
#[allow(clippy::too_many_arguments)]
fn finish_slot(
    config: &SystemConfig,
    ch: &ChannelRealization,
    schedule: &Schedule,
    theta: &RisConfig,
    beams: &BeamMatrix,
    pf: &mut PfState,
    period: usize,
    slot: usize,
    records: &mut Vec<SlotRecord>,
) -> Result<()> {
    let rates = achievable_rates(ch.links(), theta, beams, schedule, config.noise_down)?;
    let alpha = pf.alpha().to_vec();
    let objective: f64 = rates.iter().zip(&alpha).map(|(r, a)| r * a).sum();
    let power = beams.total_power();
    for (k, (&rate, &weight)) in rates.iter().zip(&alpha).enumerate() {
        records.push(SlotRecord {
            period,
            slot,
            user: k,
            scheduled: schedule.contains(k),
            weight,
            rate,
            slot_power: power,
            slot_objective: objective,
            period_pilots: 0,
        });
    }
    pf.update(&rates)
}

fn stamp_pilots(records: &mut [SlotRecord], symbols: u64) {
    for r in records {
        r.period_pilots = symbols;
    }
}

/// `D_W` sub-frames of length-`M` pilots from the scheduled users under `theta`.
fn extra_pilot_block<R: rand::Rng + ?Sized>(
    config: &SystemConfig,
    ch: &ChannelRealization,
    users: &[usize],
    theta: &RisConfig,
    rng: &mut R,
) -> Result<PilotBlock> {
    let x = make_pilots(config.antennas, config.uplink_power)?;
    let effective = ch.links().effective_all(users, theta.as_vector());
    let raw = (0..config.d_w)
        .map(|_| {
            Ok(RawSubframe {
                y: receive_block(&effective, &x, config.noise_up, rng)?,
                theta: theta.clone(),
                noise_var: config.noise_up,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    decorrelate_collect(&raw, &x, users.len())
}

/// Three-stage pipeline: scheduling network on the `D_beta` prefix, RIS network on
/// the scheduled users' `D_theta` block, then WMMSE on estimated combined channels.
pub fn run_three_stage_episode(
    config: &SystemConfig,
    models: &GnnModels,
    mode: PilotMode,
    opts: &EpisodeOptions,
) -> Result<EpisodeResult> {
    config.validate()?;
    models.check(config)?;
    if config.d_theta < 1 {
        return Err(Error::config("the three-stage pipeline needs d_theta >= 1"));
    }
    if mode == PilotMode::ExtraPilots && config.d_w < 1 {
        return Err(Error::config("extra_pilots mode needs d_w >= 1"));
    }
    if opts.periods < 1 {
        return Err(Error::arg("at least one coherence period is required"));
    }
    let stats = opts.resolve_stats(config)?;
    let reuse = mode == PilotMode::ReusePilots;
    let periods = prepare_periods(config, opts, config.d_theta, reuse.then_some(&stats))?;
    let wopts = WmmseOptions::from(&config.optimizer);
    let (k, m) = (config.users, config.antennas);
    let d_w = if reuse { 0 } else { config.d_w };
    let formula = pilot_overhead(
        k as u64,
        config.d_theta as u64,
        m as u64,
        d_w as u64,
        config.slots_per_period as u64,
    );

    let mut pf = PfState::new(k, config.forgetting)?;
    let mut trace = Vec::with_capacity(opts.periods * config.slots_per_period * k);
    for (p, period) in periods.iter().enumerate() {
        let block = period.block.as_ref().expect("uplink block");
        let prefix = block.prefix(config.d_beta)?;
        let mut symbols = (k * config.d_theta) as u64;
        let mut records = Vec::with_capacity(config.slots_per_period * k);
        for t in 0..config.slots_per_period {
            let alpha = pf.alpha().to_vec();
            let feats = build_features(&alpha, &prefix, &models.scheduling)?;
            let (_, w_all) = decode_outputs(&gnn_forward(&models.scheduling, &feats)?, config.downlink_power)?;
            let schedule = implicit_schedule(w_all.matrix(), m);
            let users = schedule.users();
            let alpha_s: Vec<f64> = users.iter().map(|&u| alpha[u]).collect();

            let feats = build_features(&alpha_s, &block.select_users(users), &models.ris)?;
            let (mut theta, _) = decode_outputs(&gnn_forward(&models.ris, &feats)?, config.downlink_power)?;
            if let Some(bits) = config.phase_bits {
                theta = quantize_phases(&theta, bits)?;
            }

            let h: Vec<CVec> = if reuse {
                period
                    .estimate
                    .as_ref()
                    .expect("estimate")
                    .links()
                    .effective_all(users, theta.as_vector())
            } else {
                let mut rng = stream_rng(opts.seed, StreamDomain::SlotPilots, slot_index(config, p, t));
                let obs = extra_pilot_block(config, &period.channels, users, &theta, &mut rng)?;
                symbols += (m * config.d_w) as u64;
                let cstats = stats.combined_from_high_dim(&theta)?;
                obs.columns
                    .iter()
                    .map(|y| lmmse_estimate_combined(y, &obs.uplink_phases, obs.noise_var, &cstats))
                    .collect::<Result<_>>()?
            };
            let rep = wmmse_beamformers(&h, &alpha_s, config.downlink_power, config.noise_down, None, &wopts)?;
            finish_slot(
                config,
                &period.channels,
                &schedule,
                &theta,
                &rep.beams,
                &mut pf,
                p,
                t,
                &mut records,
            )?;
        }
        if symbols != formula {
            return Err(Error::arg(format!(
                "simulated {symbols} pilot symbols, formula gives {formula}"
            )));
        }
        stamp_pilots(&mut records, symbols);
        trace.extend(records);
    }
    Ok(EpisodeResult {
        metrics: compute_metrics(&trace)?,
        trace,
        pilot_overhead: formula,
    })
}

/// Model-based baselines; decisions use true or estimated channels, rates are always
/// realized on the true channels.
pub fn run_baseline_episode(
    config: &SystemConfig,
    scheduler: BaselineScheduler,
    csi: CsiMode,
    opts: &EpisodeOptions,
) -> Result<EpisodeResult> {
    config.validate()?;
    if csi == CsiMode::Estimated && config.d_h < 1 {
        return Err(Error::config("estimated CSI needs d_h >= 1"));
    }
    if opts.periods < 1 {
        return Err(Error::arg("at least one coherence period is required"));
    }
    let stats = match csi {
        CsiMode::Estimated => Some(opts.resolve_stats(config)?),
        CsiMode::Perfect => None,
    };
    let depth = if stats.is_some() { config.d_h } else { 0 };
    let periods = prepare_periods(config, opts, depth, stats.as_ref())?;
    let wopts = WmmseOptions::from(&config.optimizer);
    let k = config.users;
    let formula = pilot_overhead(
        k as u64,
        depth as u64,
        config.antennas as u64,
        0,
        config.slots_per_period as u64,
    );

    let mut pf = PfState::new(k, config.forgetting)?;
    let mut rr = RoundRobin::new();
    let mut trace = Vec::with_capacity(opts.periods * config.slots_per_period * k);
    for (p, period) in periods.iter().enumerate() {
        let links = match &period.estimate {
            Some(est) => est.links(),
            None => period.channels.links(),
        };
        let symbols = period.block.as_ref().map_or(0, |b| (b.users() * b.depth()) as u64);
        let mut records = Vec::with_capacity(config.slots_per_period * k);
        for t in 0..config.slots_per_period {
            let alpha = pf.alpha().to_vec();
            let problem = SlotProblem::new(links, &alpha, config)?;
            let mut rng = stream_rng(opts.seed, StreamDomain::Decisions, slot_index(config, p, t));
            let mut d: Decision = match scheduler {
                BaselineScheduler::GreedyBcd => greedy_schedule_bcd(&problem, &mut rng)?.0,
                BaselineScheduler::Exhaustive => exhaustive_schedule(&problem, &mut rng)?.decision,
                BaselineScheduler::Random => random_schedule(&problem, &mut rng)?,
                BaselineScheduler::RoundRobin => {
                    let theta0 = RisConfig::random(config.elements, &mut rng);
                    let users = rr.next_users(k, config.antennas);
                    optimize_subset(&problem, &users, &theta0)?
                }
            };
            if let Some(bits) = config.phase_bits {
                let theta = quantize_phases(&d.theta, bits)?;
                let users = d.schedule.users();
                let h = links.effective_all(users, theta.as_vector());
                let alpha_s: Vec<f64> = users.iter().map(|&u| alpha[u]).collect();
                let rep = wmmse_beamformers(
                    &h,
                    &alpha_s,
                    config.downlink_power,
                    config.noise_down,
                    Some(d.beams.matrix()),
                    &wopts,
                )?;
                d.theta = theta;
                d.beams = rep.beams;
            }
            finish_slot(
                config,
                &period.channels,
                &d.schedule,
                &d.theta,
                &d.beams,
                &mut pf,
                p,
                t,
                &mut records,
            )?;
        }
        if symbols != formula {
            return Err(Error::arg(format!(
                "simulated {symbols} pilot symbols, formula gives {formula}"
            )));
        }
        stamp_pilots(&mut records, symbols);
        trace.extend(records);
    }
    Ok(EpisodeResult {
        metrics: compute_metrics(&trace)?,
        trace,
        pilot_overhead: formula,
    })
}
