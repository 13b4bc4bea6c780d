//! Evacuee population generation, sigmoid departure schedule, EV energy
//! model, and charging-station selection.

use crate::network::{costs_from, NodeId, RoadNetwork, StationIdx, Zone};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvacueeStatus {
    Waiting,
    Driving,
    Queuing,
    Charging,
    Arrived,
    Stranded,
}

/// One evacuating household vehicle. Non-EVs only contribute to traffic;
/// EVs carry the battery state and can divert to charging stations.
#[derive(Debug, Clone)]
pub struct Evacuee {
    pub id: usize,
    pub origin: NodeId,
    pub dest: NodeId,
    pub departure_min: f64,
    pub is_ev: bool,
    pub battery_kwh: f64,
    pub soc: f64,
    pub consumption_kwh_per_km: f64,
    pub status: EvacueeStatus,
}

/// Per-zone sigmoid departure parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepartureCurve {
    /// Steepness (1/h).
    pub alpha: f64,
    /// Half-loading time (h).
    pub beta_h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    /// Households per hazard zone, indexed A, B, C.
    pub households: [u32; 3],
    /// Fraction of households that evacuate.
    pub compliance: f64,
    /// Fraction of evacuating vehicles that are EVs.
    pub ev_share: f64,
    /// Departure curves per hazard zone, indexed A, B, C.
    pub curves: [DepartureCurve; 3],
    pub battery_kwh: f64,
    pub consumption_kwh_per_km: f64,
    /// Initial state-of-charge interval.
    pub soc_min: f64,
    pub soc_max: f64,
    /// SoC threshold below which an EV seeks a station.
    pub seek_threshold: f64,
    /// Charging stops once SoC reaches this level.
    pub charge_target: f64,
}

impl Default for DemandSpec {
    fn default() -> Self {
        Self {
            households: [1400, 1600, 1000],
            compliance: 0.65,
            ev_share: 0.15,
            curves: [
                DepartureCurve { alpha: 0.2, beta_h: 15.0 },
                DepartureCurve { alpha: 0.2, beta_h: 21.0 },
                DepartureCurve { alpha: 0.2, beta_h: 24.0 },
            ],
            battery_kwh: 60.0,
            consumption_kwh_per_km: 0.2,
            soc_min: 0.3,
            soc_max: 0.8,
            seek_threshold: 0.2,
            charge_target: 0.8,
        }
    }
}

impl DemandSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.compliance) {
            return Err("demand.compliance must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.ev_share) {
            return Err("demand.ev_share must lie in [0, 1]".into());
        }
        for c in &self.curves {
            if c.alpha <= 0.0 {
                return Err("demand.curves alpha must be positive".into());
            }
        }
        if self.battery_kwh <= 0.0 || self.consumption_kwh_per_km <= 0.0 {
            return Err("demand battery/consumption must be positive".into());
        }
        if !(0.0 <= self.soc_min && self.soc_min <= self.soc_max && self.soc_max <= 1.0) {
            return Err("demand SoC interval must satisfy 0 <= min <= max <= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DemandError {
    #[error("no safe node reachable from origin {0}")]
    NoSafeNode(NodeId),
}

/// Cumulative departure proportion F(t) = 1 / (1 + exp(-alpha (t - beta))).
pub fn departure_fraction(t_h: f64, alpha: f64, beta_h: f64) -> f64 {
    1.0 / (1.0 + (-alpha * (t_h - beta_h)).exp())
}

/// Inverse of [`departure_fraction`].
fn departure_quantile(u: f64, alpha: f64, beta_h: f64) -> f64 {
    beta_h - (1.0 / u - 1.0).ln() / alpha
}

/// Generates the evacuee population for one episode. Departure times are
/// inverse-CDF samples of the zone sigmoid truncated to [0, horizon];
/// destinations are the nearest safe node by the given per-edge base costs
/// (free-flow times with closed links marked unreachable).
///
/// Origins with no reachable safe node produce evacuees that are stranded
/// from the start (network-fragmentation scenarios); they never enter the
/// charging system.
pub fn generate_evacuees<R: Rng>(
    spec: &DemandSpec,
    net: &RoadNetwork,
    base_costs: &[f64],
    horizon_h: f64,
    rng: &mut R,
) -> Vec<Evacuee> {
    let mut out = Vec::new();
    // Nearest safe node per origin, by base travel time.
    let mut nearest_safe: Vec<Option<NodeId>> = vec![None; net.n_nodes()];
    for origin in 0..net.n_nodes() {
        let dist = costs_from(net, base_costs, origin);
        let mut best: Option<(f64, NodeId)> = None;
        for safe in net.safe_nodes() {
            let d = dist[safe];
            if d.is_finite() {
                let better = match best {
                    None => true,
                    Some((bd, bn)) => d < bd || (d == bd && safe < bn),
                };
                if better {
                    best = Some((d, safe));
                }
            }
        }
        nearest_safe[origin] = best.map(|(_, n)| n);
    }

    let mut zone_nodes: [Vec<NodeId>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for n in 0..net.n_nodes() {
        match net.zone(n) {
            Zone::A => zone_nodes[0].push(n),
            Zone::B => zone_nodes[1].push(n),
            Zone::C => zone_nodes[2].push(n),
            Zone::Safe => {}
        }
    }

    let mut id = 0;
    for zi in 0..3 {
        if zone_nodes[zi].is_empty() {
            continue;
        }
        let count = (f64::from(spec.households[zi]) * spec.compliance).round() as usize;
        let curve = spec.curves[zi];
        let f_lo = departure_fraction(0.0, curve.alpha, curve.beta_h);
        let f_hi = departure_fraction(horizon_h, curve.alpha, curve.beta_h);
        for _ in 0..count {
            let origin = zone_nodes[zi][rng.random_range(0..zone_nodes[zi].len())];
            let u = f_lo + rng.random::<f64>() * (f_hi - f_lo);
            let departure_min = departure_quantile(u, curve.alpha, curve.beta_h) * 60.0;
            let is_ev = rng.random::<f64>() < spec.ev_share;
            let soc = if is_ev {
                spec.soc_min + rng.random::<f64>() * (spec.soc_max - spec.soc_min)
            } else {
                1.0
            };
            let (dest, status) = match nearest_safe[origin] {
                Some(d) => (d, EvacueeStatus::Waiting),
                // Stranded before departure; keeps the id sequence stable.
                None => (origin, EvacueeStatus::Stranded),
            };
            out.push(Evacuee {
                id,
                origin,
                dest,
                departure_min: departure_min.clamp(0.0, horizon_h * 60.0),
                is_ev,
                battery_kwh: spec.battery_kwh,
                soc,
                consumption_kwh_per_km: spec.consumption_kwh_per_km,
                status,
            });
            id += 1;
        }
    }
    out
}

/// Station choice for an EV that crossed the seek threshold: among stations
/// whose time-shortest path (under the current snapshot) fits within the
/// remaining driving range, pick the one with minimal travel time, ties by
/// smaller station index. `None` means no station is in range.
pub fn select_station(
    net: &RoadNetwork,
    snapshot: &[f64],
    from: NodeId,
    range_km: f64,
) -> Option<StationIdx> {
    let mut best: Option<(f64, StationIdx)> = None;
    for s in 0..net.n_stations() {
        let target = net.station_node(s);
        let Ok((path, minutes)) = crate::network::shortest_path(net, snapshot, from, target) else {
            continue;
        };
        let km: f64 = path.iter().map(|&e| net.edge(e).length_km).sum();
        if km > range_km + 1e-9 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bt, _)) => minutes < bt,
        };
        if better {
            best = Some((minutes, s));
        }
    }
    best.map(|(_, s)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::testutil::net;
    use crate::network::Zone;

    #[test]
    fn sigmoid_examples() {
        assert_eq!(departure_fraction(15.0, 0.2, 15.0), 0.5);
        let v = departure_fraction(25.0, 0.2, 15.0);
        assert!((v - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!(departure_fraction(-1e6, 0.2, 15.0) < 1e-12);
    }

    fn line_net() -> RoadNetwork {
        net(
            &[
                (0.0, 0.0, Zone::A),
                (10.0, 0.0, Zone::B),
                (20.0, 0.0, Zone::C),
                (30.0, 0.0, Zone::Safe),
            ],
            &[
                (0, 1, 10.0, 8.0, 1000.0),
                (1, 2, 10.0, 8.0, 1000.0),
                (2, 3, 10.0, 8.0, 1000.0),
            ],
            &[1, 2],
        )
    }

    #[test]
    fn zero_compliance_yields_nobody() {
        let spec = DemandSpec { compliance: 0.0, ..Default::default() };
        let mut rng = crate::rng::stream(1, 1);
        assert!(generate_evacuees(&spec, &line_net(), &line_net().free_flow_times(), 48.0, &mut rng).is_empty());
    }

    #[test]
    fn compliance_rounds_household_counts() {
        let spec = DemandSpec {
            households: [100, 0, 0],
            compliance: 0.65,
            ..Default::default()
        };
        let mut rng = crate::rng::stream(1, 1);
        let evs = generate_evacuees(&spec, &line_net(), &line_net().free_flow_times(), 48.0, &mut rng);
        assert_eq!(evs.len(), 65);
        assert!(evs.iter().all(|e| e.origin == 0 && e.dest == 3));
    }

    #[test]
    fn ev_share_is_binomial() {
        let spec = DemandSpec {
            households: [10_000, 0, 0],
            compliance: 1.0,
            ev_share: 0.15,
            ..Default::default()
        };
        let mut rng = crate::rng::stream(5, 1);
        let evs = generate_evacuees(&spec, &line_net(), &line_net().free_flow_times(), 48.0, &mut rng);
        let n = evs.len() as f64;
        let ev_count = evs.iter().filter(|e| e.is_ev).count() as f64;
        let sigma = (n * 0.15 * 0.85).sqrt();
        assert!((ev_count - n * 0.15).abs() <= 3.0 * sigma);
    }

    #[test]
    fn departure_sampling_matches_truncated_sigmoid() {
        let spec = DemandSpec {
            households: [10_000, 0, 0],
            compliance: 1.0,
            ..Default::default()
        };
        let mut rng = crate::rng::stream(9, 1);
        let horizon = 48.0;
        let mut times: Vec<f64> = generate_evacuees(&spec, &line_net(), &line_net().free_flow_times(), horizon, &mut rng)
            .iter()
            .map(|e| e.departure_min / 60.0)
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let c = spec.curves[0];
        let f0 = departure_fraction(0.0, c.alpha, c.beta_h);
        let f1 = departure_fraction(horizon, c.alpha, c.beta_h);
        let mut ks: f64 = 0.0;
        for (i, t) in times.iter().enumerate() {
            let model = (departure_fraction(*t, c.alpha, c.beta_h) - f0) / (f1 - f0);
            let emp_hi = (i + 1) as f64 / times.len() as f64;
            let emp_lo = i as f64 / times.len() as f64;
            ks = ks.max((model - emp_lo).abs()).max((model - emp_hi).abs());
        }
        assert!(ks < 0.02, "Kolmogorov distance {ks}");
    }

    #[test]
    fn unreachable_origin_strands_at_generation() {
        // A safe node exists but is not reachable from node 0.
        let n = net(
            &[(0.0, 0.0, Zone::A), (10.0, 0.0, Zone::Safe), (20.0, 0.0, Zone::Safe)],
            &[(1, 2, 10.0, 8.0, 1000.0)],
            &[1],
        );
        let spec = DemandSpec { households: [10, 0, 0], compliance: 1.0, ..Default::default() };
        let mut rng = crate::rng::stream(3, 1);
        let evs = generate_evacuees(&spec, &n, &n.free_flow_times(), 48.0, &mut rng);
        assert_eq!(evs.len(), 10);
        assert!(evs.iter().all(|e| e.status == EvacueeStatus::Stranded));
    }

    #[test]
    fn station_selection_range_and_time() {
        let n = line_net();
        let snapshot = n.free_flow_times();
        // From node 0 both stations are reachable with generous range;
        // station 0 (node 1) is closer in time.
        assert_eq!(select_station(&n, &snapshot, 0, 100.0), Some(0));
        // Range 15 km only covers station 0 at 10 km.
        assert_eq!(select_station(&n, &snapshot, 0, 15.0), Some(0));
        // Range 5 km covers nothing.
        assert_eq!(select_station(&n, &snapshot, 0, 5.0), None);
    }

    #[test]
    fn station_selection_prefers_travel_time_then_id() {
        // Two stations at equal travel time: smaller index wins.
        let n = net(
            &[
                (0.0, 0.0, Zone::A),
                (10.0, 1.0, Zone::B),
                (10.0, -1.0, Zone::B),
                (30.0, 0.0, Zone::Safe),
            ],
            &[
                (0, 1, 10.0, 9.0, 1000.0),
                (0, 2, 10.0, 9.0, 1000.0),
                (1, 3, 20.0, 15.0, 1000.0),
            ],
            &[1, 2],
        );
        let snapshot = n.free_flow_times();
        assert_eq!(select_station(&n, &snapshot, 0, 100.0), Some(0));
    }
}
