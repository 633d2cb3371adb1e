use ris_sched::gnn::Widths;
use ris_sched::pilots::pilot_overhead;
use ris_sched::sim::{
    run_baseline_episode, run_three_stage_episode, write_trace, BaselineScheduler, CsiMode, EpisodeOptions, GnnModels,
    PilotMode,
};
use ris_sched::SystemConfig;

fn small() -> SystemConfig {
    let mut c = SystemConfig::toy(2, 4, 3);
    c.slots_per_period = 4;
    c.d_theta = 3;
    c.d_beta = 1;
    c.d_w = 2;
    c.d_h = 5;
    c
}

fn models(c: &SystemConfig) -> GnnModels {
    let widths = Widths {
        hidden: 8,
        embed_hidden: 12,
    };
    GnnModels::initialize(c, widths, 2, 11, 4).unwrap()
}

fn trace_bytes(trace: &[ris_sched::sim::SlotRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_trace(&mut out, trace).unwrap();
    out
}

#[test]
fn three_stage_is_deterministic() {
    let c = small();
    let m = models(&c);
    let opts = EpisodeOptions::new(2, 5);
    for mode in [PilotMode::ExtraPilots, PilotMode::ReusePilots] {
        let a = run_three_stage_episode(&c, &m, mode, &opts).unwrap();
        let b = run_three_stage_episode(&c, &m, mode, &opts).unwrap();
        assert_eq!(trace_bytes(&a.trace), trace_bytes(&b.trace));
    }
}

#[test]
fn three_stage_overhead_and_power() {
    let c = small();
    let m = models(&c);
    let opts = EpisodeOptions::new(3, 2);
    let extra = run_three_stage_episode(&c, &m, PilotMode::ExtraPilots, &opts).unwrap();
    assert_eq!(extra.pilot_overhead, 3 * 3 + 2 * 2 * 4);
    assert_eq!(extra.metrics.pilot_symbols, 3 * extra.pilot_overhead);
    assert!(extra.metrics.max_slot_power <= c.downlink_power * (1.0 + 1e-9));
    assert_eq!(extra.metrics.slots, 12);

    let reuse = run_three_stage_episode(&c, &m, PilotMode::ReusePilots, &opts).unwrap();
    assert_eq!(reuse.pilot_overhead, 9);
    for r in &extra.trace {
        assert!(r.rate >= 0.0 && r.rate.is_finite());
        if !r.scheduled {
            assert_eq!(r.rate, 0.0);
        }
    }
    let per_slot = extra.trace.iter().filter(|r| r.scheduled).count();
    assert!(per_slot <= 12 * c.antennas);
}

#[test]
fn model_shape_mismatch_is_rejected() {
    let c = small();
    let m = models(&c);
    let mut other = c.clone();
    other.elements = 5;
    assert!(run_three_stage_episode(&other, &m, PilotMode::ReusePilots, &EpisodeOptions::new(1, 0)).is_err());
}

#[test]
fn baseline_overheads() {
    let c = small();
    let opts = EpisodeOptions::new(2, 3);
    let perfect = run_baseline_episode(&c, BaselineScheduler::Random, CsiMode::Perfect, &opts).unwrap();
    assert_eq!(perfect.pilot_overhead, 0);
    let est = run_baseline_episode(&c, BaselineScheduler::Random, CsiMode::Estimated, &opts).unwrap();
    assert_eq!(est.pilot_overhead, pilot_overhead(3, 5, 2, 0, 4));
    assert_eq!(est.metrics.pilot_symbols, 2 * 15);
}

#[test]
fn round_robin_serves_everyone_equally() {
    let mut c = small();
    c.users = 4;
    let r = run_baseline_episode(
        &c,
        BaselineScheduler::RoundRobin,
        CsiMode::Perfect,
        &EpisodeOptions::new(2, 1),
    )
    .unwrap();
    for f in &r.metrics.sched_fraction {
        assert!((f - 0.5).abs() < 1e-12, "{f}");
    }
}

#[test]
fn estimated_matches_perfect_without_noise() {
    let mut c = small();
    c.noise_up = 1e-30;
    let opts = EpisodeOptions::new(1, 9);
    let p = run_baseline_episode(&c, BaselineScheduler::RoundRobin, CsiMode::Perfect, &opts).unwrap();
    let e = run_baseline_episode(&c, BaselineScheduler::RoundRobin, CsiMode::Estimated, &opts).unwrap();
    for (a, b) in p.metrics.avg_rates.iter().zip(&e.metrics.avg_rates) {
        assert!((a - b).abs() <= 1e-3 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn quantized_baseline_stays_feasible() {
    let mut c = small();
    c.phase_bits = Some(1);
    let r = run_baseline_episode(
        &c,
        BaselineScheduler::GreedyBcd,
        CsiMode::Perfect,
        &EpisodeOptions::new(1, 4),
    )
    .unwrap();
    assert!(r.metrics.max_slot_power <= c.downlink_power * (1.0 + 1e-9));
}

#[test]
fn exhaustive_refuses_large_pools() {
    let c = SystemConfig::toy(8, 4, 32);
    let err = run_baseline_episode(
        &c,
        BaselineScheduler::Exhaustive,
        CsiMode::Perfect,
        &EpisodeOptions::new(1, 0),
    );
    assert!(err.is_err());
}
