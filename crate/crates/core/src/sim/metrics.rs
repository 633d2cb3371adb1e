use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::SlotRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub users: usize,
    pub periods: usize,
    /// Distinct `(period, slot)` pairs.
    pub slots: usize,
    /// Per-user mean realized rate over all slots.
    pub avg_rates: Vec<f64>,
    pub sched_fraction: Vec<f64>,
    /// `sum_k ln(avg_rate_k)`.
    pub utility: f64,
    pub sum_rate: f64,
    /// Pilot symbols of the first period.
    pub pilot_overhead: u64,
    /// Pilot symbols over all periods.
    pub pilot_symbols: u64,
    pub max_slot_power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfRow {
    pub user: usize,
    pub avg_rate: f64,
    pub sched_fraction: f64,
    /// Fraction of users whose average rate is at most this one.
    pub cdf: f64,
}

/// Aggregates a slot trace. Every `(period, slot)` must list the same users.
pub fn compute_metrics(trace: &[SlotRecord]) -> Result<Metrics> {
    if trace.is_empty() {
        return Err(Error::Empty("slot trace"));
    }
    let users = trace.iter().map(|r| r.user).max().unwrap() + 1;
    let mut slots: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut period_pilots: BTreeMap<usize, u64> = BTreeMap::new();
    let mut rate_sum = vec![0.0; users];
    let mut sched = vec![0usize; users];
    let mut max_power: f64 = 0.0;
    for r in trace {
        *slots.entry((r.period, r.slot)).or_default() += 1;
        if let Some(&p) = period_pilots.get(&r.period) {
            if p != r.period_pilots {
                return Err(Error::arg(format!("period {} reports two pilot counts", r.period)));
            }
        }
        period_pilots.insert(r.period, r.period_pilots);
        rate_sum[r.user] += r.rate;
        sched[r.user] += usize::from(r.scheduled);
        max_power = max_power.max(r.slot_power);
    }
    if slots.values().any(|&c| c != users) {
        return Err(Error::arg("every slot must list every user exactly once"));
    }
    let n = slots.len() as f64;
    let avg_rates: Vec<f64> = rate_sum.iter().map(|s| s / n).collect();
    Ok(Metrics {
        users,
        periods: period_pilots.len(),
        slots: slots.len(),
        utility: avg_rates.iter().map(|r| r.ln()).sum(),
        sum_rate: avg_rates.iter().sum(),
        sched_fraction: sched.iter().map(|&c| c as f64 / n).collect(),
        avg_rates,
        pilot_overhead: *period_pilots.values().next().unwrap(),
        pilot_symbols: period_pilots.values().sum(),
        max_slot_power: max_power,
    })
}

impl Metrics {
    /// Users sorted by average rate (ties by id) with empirical CDF levels.
    pub fn cdf(&self) -> Vec<CdfRow> {
        let mut order: Vec<usize> = (0..self.users).collect();
        order.sort_by(|&a, &b| self.avg_rates[a].total_cmp(&self.avg_rates[b]).then(a.cmp(&b)));
        order
            .iter()
            .enumerate()
            .map(|(i, &k)| CdfRow {
                user: k,
                avg_rate: self.avg_rates[k],
                sched_fraction: self.sched_fraction[k],
                cdf: (i + 1) as f64 / self.users as f64,
            })
            .collect()
    }

    fn summary_rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("users", self.users.to_string()),
            ("periods", self.periods.to_string()),
            ("slots", self.slots.to_string()),
            ("utility", self.utility.to_string()),
            ("sum_rate", self.sum_rate.to_string()),
            (
                "min_avg_rate",
                self.avg_rates.iter().cloned().fold(f64::INFINITY, f64::min).to_string(),
            ),
            ("pilot_overhead", self.pilot_overhead.to_string()),
            ("pilot_symbols", self.pilot_symbols.to_string()),
            ("max_slot_power", self.max_slot_power.to_string()),
        ]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    period: usize,
    slot: usize,
    user: usize,
    scheduled: u8,
    weight: f64,
    rate: f64,
    slot_power: f64,
    slot_objective: f64,
    period_pilots: u64,
}

/// Header `period,slot,user,scheduled,weight,rate,slot_power,slot_objective,period_pilots`.
pub fn write_trace<W: Write>(out: W, trace: &[SlotRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in trace {
        wtr.serialize(TraceRow {
            period: r.period,
            slot: r.slot,
            user: r.user,
            scheduled: u8::from(r.scheduled),
            weight: r.weight,
            rate: r.rate,
            slot_power: r.slot_power,
            slot_objective: r.slot_objective,
            period_pilots: r.period_pilots,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<SlotRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|row| {
            let r: TraceRow = row?;
            if r.scheduled > 1 {
                return Err(Error::arg(format!(
                    "scheduled flag must be 0 or 1, got {}",
                    r.scheduled
                )));
            }
            Ok(SlotRecord {
                period: r.period,
                slot: r.slot,
                user: r.user,
                scheduled: r.scheduled == 1,
                weight: r.weight,
                rate: r.rate,
                slot_power: r.slot_power,
                slot_objective: r.slot_objective,
                period_pilots: r.period_pilots,
            })
        })
        .collect()
}

/// Header `metric,value`.
pub fn write_summary<W: Write>(out: W, metrics: &Metrics) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["metric", "value"])?;
    for (k, v) in metrics.summary_rows() {
        wtr.write_record([k, v.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Header `user,avg_rate,sched_fraction,cdf`, ascending in `avg_rate`.
pub fn write_cdf<W: Write>(out: W, metrics: &Metrics) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["user", "avg_rate", "sched_fraction", "cdf"])?;
    for row in metrics.cdf() {
        wtr.write_record([
            row.user.to_string(),
            row.avg_rate.to_string(),
            row.sched_fraction.to_string(),
            row.cdf.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(period: usize, slot: usize, user: usize, rate: f64) -> SlotRecord {
        SlotRecord {
            period,
            slot,
            user,
            scheduled: rate > 0.0,
            weight: 1.0,
            rate,
            slot_power: 0.5,
            slot_objective: 0.0,
            period_pilots: 7,
        }
    }

    #[test]
    fn single_user_constant_rate() {
        let trace: Vec<_> = (0..4).map(|s| rec(0, s, 0, 2.5)).collect();
        let m = compute_metrics(&trace).unwrap();
        assert!((m.utility - 2.5f64.ln()).abs() < 1e-15);
        let cdf = m.cdf();
        assert_eq!(cdf.len(), 1);
        assert_eq!((cdf[0].avg_rate, cdf[0].cdf), (2.5, 1.0));
    }

    #[test]
    fn two_users() {
        let trace = vec![rec(0, 0, 0, 1.0), rec(0, 0, 1, 3.0)];
        let m = compute_metrics(&trace).unwrap();
        assert_eq!(m.sum_rate, 4.0);
        assert!((m.utility - 3f64.ln()).abs() < 1e-15);
        assert_eq!(m.pilot_overhead, 7);
        let cdf = m.cdf();
        assert_eq!((cdf[0].user, cdf[1].user), (0, 1));
        assert_eq!(cdf[0].cdf, 0.5);
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(compute_metrics(&[]).is_err());
        let ragged = vec![rec(0, 0, 0, 1.0), rec(0, 0, 1, 1.0), rec(0, 1, 0, 1.0)];
        assert!(compute_metrics(&ragged).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let trace = vec![
            rec(0, 0, 0, 1.25),
            rec(0, 0, 1, 0.0),
            rec(1, 0, 0, 1e-300),
            rec(1, 0, 1, 3.0),
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("period,slot,user,scheduled,weight,rate,slot_power,slot_objective,period_pilots\n"));
        assert_eq!(read_trace(&buf[..]).unwrap(), trace);
    }
}
