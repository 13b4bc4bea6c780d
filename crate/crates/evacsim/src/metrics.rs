//! Episode-level evaluation: average risk exposure (ARE), peak station-level
//! risk exposure (PSRE), late-window average station-level risk exposure
//! (ASRE-L), and arrival-forecast deviation (AFD) with mean and Gini.

use crate::sim::{EpisodeResult, StationRow};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("arrival grids are misaligned: {0} vs {1} entries")]
    GridMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskMetrics {
    pub are: f64,
    pub psre: f64,
    pub asre_l: f64,
}

/// Hours in the late evaluation window.
pub const LATE_WINDOW_H: f64 = 12.0;

/// Risk metrics over a step-major station trace.
///
/// ARE is the step-length-weighted total risk per EV evacuee; PSRE the worst
/// single station-step product R_i(t) Q_i(t); ASRE-L the mean positive
/// station-step risk over the last [`LATE_WINDOW_H`] hours (0 when the
/// window has no positive entries).
pub fn risk_metrics(
    rows: &[StationRow],
    n_stations: usize,
    step_min: f64,
    n_evac: u32,
) -> RiskMetrics {
    assert!(n_evac > 0, "risk metrics need at least one EV evacuee");
    assert!(n_stations > 0 && rows.len() % n_stations == 0);
    let n_steps = rows.len() / n_stations;
    let step_h = step_min / 60.0;
    let late_from = n_steps.saturating_sub((LATE_WINDOW_H / step_h).round() as usize);
    let mut total = 0.0;
    let mut psre: f64 = 0.0;
    let mut late_sum = 0.0;
    let mut late_pos = 0u64;
    for step in 0..n_steps {
        for s in 0..n_stations {
            let row = &rows[step * n_stations + s];
            let rq = row.risk * f64::from(row.queue);
            total += rq * step_h;
            psre = psre.max(rq);
            if step >= late_from {
                late_sum += rq;
                if rq > 0.0 {
                    late_pos += 1;
                }
            }
        }
    }
    RiskMetrics {
        are: total / f64::from(n_evac),
        psre,
        asre_l: if late_pos == 0 { 0.0 } else { late_sum / late_pos as f64 },
    }
}

/// Convenience wrapper over a finished episode.
pub fn episode_risk_metrics(ep: &EpisodeResult) -> RiskMetrics {
    risk_metrics(&ep.station_trace, ep.n_stations, ep.step_min, ep.n_evac_ev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AfdReport {
    /// Mean absolute arrival gap per station over the interval grid.
    pub per_station: Vec<f64>,
    pub mean: f64,
    pub gini: f64,
}

/// Arrival forecast deviation per station over aligned interval grids
/// (flat, interval-major), with mean and Gini over stations.
pub fn afd_report(
    real: &[f64],
    pred: &[f64],
    n_stations: usize,
) -> Result<AfdReport, MetricsError> {
    if real.len() != pred.len() {
        return Err(MetricsError::GridMismatch(real.len(), pred.len()));
    }
    assert!(n_stations > 0 && real.len() % n_stations == 0, "grid not station-aligned");
    let h = real.len() / n_stations;
    let mut per_station = vec![0.0; n_stations];
    for interval in 0..h {
        for s in 0..n_stations {
            let idx = interval * n_stations + s;
            per_station[s] += (real[idx] - pred[idx]).abs();
        }
    }
    for v in &mut per_station {
        *v /= h as f64;
    }
    let mean = per_station.iter().sum::<f64>() / n_stations as f64;
    Ok(AfdReport { gini: gini(&per_station), mean, per_station })
}

/// Gini coefficient by the sorted-cumulative formula; 0 when all values are
/// equal (including all zero).
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    assert!(n > 0);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - n as f64 - 1.0) * x)
        .sum();
    weighted / (n as f64 * total)
}
