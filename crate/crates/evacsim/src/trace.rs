//! Fixed CSV schemas for episode traces and evaluation summaries.
//!
//! All files are UTF-8 with LF line endings and '.' decimal separators.
//! Floats are written with Rust's shortest round-trip formatting, so a
//! reloaded trace reproduces every metric bit-exactly.

use crate::metrics::RiskMetrics;
use crate::sim::{EpisodeResult, StationRow};
use std::io::{self, Write};
use thiserror::Error;

pub const STATION_HEADER: &str = "time_min,station_id,queue,risk,chargers,serving_mcts";
pub const TRUCK_HEADER: &str = "time_min,truck_id,phase,location,capability_kwh";
pub const SUMMARY_HEADER: &str =
    "scenario,policy,seed,fleet_size,are,psre,asre_l,total_risk,reward_sum,n_evac_ev,arrived,stranded,delivered_truck_kwh,delivered_fixed_kwh";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed trace at line {0}: {1}")]
    Malformed(usize, String),
}

/// Write the per-step station rows of an episode.
pub fn write_station_csv<W: Write>(w: &mut W, ep: &EpisodeResult) -> Result<(), TraceError> {
    writeln!(w, "{STATION_HEADER}")?;
    for step in 0..ep.n_steps {
        for s in 0..ep.n_stations {
            let row = ep.station_row(step, s);
            writeln!(
                w,
                "{},{},{},{},{},{}",
                step as f64 * ep.step_min,
                s,
                row.queue,
                row.risk,
                row.chargers,
                row.serving_mcts
            )?;
        }
    }
    Ok(())
}

/// Write the per-step truck rows of an episode.
pub fn write_truck_csv<W: Write>(w: &mut W, ep: &EpisodeResult) -> Result<(), TraceError> {
    writeln!(w, "{TRUCK_HEADER}")?;
    for row in &ep.truck_trace {
        let location = match row.edge {
            Some((edge, frac)) => format!("edge:{edge}@{frac}"),
            None => format!("node:{}", row.node),
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            row.step as f64 * ep.step_min,
            row.truck,
            row.phase,
            location,
            row.capability_kwh
        )?;
    }
    Ok(())
}

/// Parse a station trace back into rows (step-major), returning
/// `(rows, n_stations, step_min)`.
pub fn read_station_csv(text: &str) -> Result<(Vec<StationRow>, usize, f64), TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == STATION_HEADER => {}
        _ => return Err(TraceError::Malformed(1, "missing station header".into())),
    }
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut n_stations = 0usize;
    for (idx, line) in lines {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(TraceError::Malformed(idx + 1, "expected 6 columns".into()));
        }
        let bad = |what: &str| TraceError::Malformed(idx + 1, format!("bad {what}"));
        let time_min: f64 = parts[0].parse().map_err(|_| bad("time"))?;
        let station: usize = parts[1].parse().map_err(|_| bad("station"))?;
        let queue: u32 = parts[2].parse().map_err(|_| bad("queue"))?;
        let risk: f64 = parts[3].parse().map_err(|_| bad("risk"))?;
        let chargers: u32 = parts[4].parse().map_err(|_| bad("chargers"))?;
        let serving: u32 = parts[5].parse().map_err(|_| bad("serving"))?;
        n_stations = n_stations.max(station + 1);
        times.push(time_min);
        rows.push(StationRow { queue, risk, chargers, serving_mcts: serving });
    }
    if rows.is_empty() {
        return Err(TraceError::Malformed(1, "no data rows".into()));
    }
    let step_min = if rows.len() > n_stations {
        times[n_stations] - times[0]
    } else {
        5.0
    };
    Ok((rows, n_stations, step_min))
}

/// One summary line per (scenario, policy, seed) run.
pub struct SummaryRow<'a> {
    pub ep: &'a EpisodeResult,
    pub metrics: RiskMetrics,
    pub fleet_size: u32,
}

pub fn write_summary_header<W: Write>(w: &mut W) -> Result<(), TraceError> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    Ok(())
}

pub fn write_summary_row<W: Write>(w: &mut W, row: &SummaryRow) -> Result<(), TraceError> {
    let ep = row.ep;
    let reward_sum: f64 = ep.epoch_rewards.iter().sum();
    let delivered_truck: f64 = ep.truck_delivered_kwh.iter().sum();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        ep.scenario_name,
        ep.policy_name,
        ep.seed,
        row.fleet_size,
        row.metrics.are,
        row.metrics.psre,
        row.metrics.asre_l,
        ep.risk_total,
        reward_sum,
        ep.n_evac_ev,
        ep.arrived,
        ep.stranded,
        delivered_truck,
        ep.delivered_fixed_kwh
    )?;
    Ok(())
}
