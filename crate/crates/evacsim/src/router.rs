//! Truck routing: a static snapshot router and a predictive rolling-horizon
//! router over time-dependent forecast costs.

use crate::network::{shortest_path, EdgeId, NodeId, RoadNetwork, TravelTimeField};

/// Everything a router may consult when planning one truck leg.
pub struct RouteCtx<'a> {
    pub net: &'a RoadNetwork,
    /// Travel times currently in effect (minutes; closed edges infinite).
    pub snapshot: &'a [f64],
    /// Realized per-step travel-time rows so far.
    pub field: &'a TravelTimeField,
    pub step: usize,
    pub step_min: f64,
    pub from: NodeId,
    pub dest: NodeId,
    /// Absolute departure time in minutes.
    pub depart_min: f64,
}

pub trait TruckRouter {
    fn name(&self) -> &'static str;

    /// Plan a route; `None` means the destination is unreachable and the
    /// truck holds position.
    fn plan(&mut self, ctx: &RouteCtx) -> Option<(Vec<EdgeId>, f64)>;

    /// Whether traveling trucks should re-plan at this step.
    fn replan_now(&self, _step: usize) -> bool {
        false
    }
}

/// Routes on the instantaneous travel-time snapshot and never re-plans.
pub struct SnapshotRouter;

impl TruckRouter for SnapshotRouter {
    fn name(&self) -> &'static str {
        "snapshot"
    }

    fn plan(&mut self, ctx: &RouteCtx) -> Option<(Vec<EdgeId>, f64)> {
        shortest_path(ctx.net, ctx.snapshot, ctx.from, ctx.dest)
            .ok()
            .map(|(path, cost)| (path, ctx.depart_min + cost))
    }
}

/// Time-expanded Dijkstra over piecewise-constant forecast costs.
///
/// Entering edge `e` at absolute minute `s` costs the forecast value in the
/// row covering `s` (rows are `step_min` long, starting at `depart_min`);
/// beyond the horizon of the forecast, the last row is held constant.
/// Traversal is assumed FIFO (non-overtaking), the regime where label
/// setting is exact for piecewise-constant costs. Ties are broken by the
/// lexicographically smallest edge-id sequence.
pub fn plan_route(
    net: &RoadNetwork,
    forecast: &[Vec<f64>],
    step_min: f64,
    depart_min: f64,
    origin: NodeId,
    dest: NodeId,
) -> Option<(Vec<EdgeId>, f64)> {
    assert!(!forecast.is_empty());
    if origin == dest {
        return Some((Vec::new(), depart_min));
    }
    let cost_at = |e: EdgeId, s: f64| -> f64 {
        let idx = ((s - depart_min) / step_min).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(forecast.len() - 1) };
        forecast[idx][e]
    };

    #[derive(Clone)]
    struct Label {
        arrival: f64,
        path: Vec<EdgeId>,
    }

    let mut best: Vec<Option<Label>> = vec![None; net.n_nodes()];
    best[origin] = Some(Label { arrival: depart_min, path: Vec::new() });
    let mut settled = vec![false; net.n_nodes()];
    loop {
        let mut next: Option<NodeId> = None;
        for n in 0..net.n_nodes() {
            if settled[n] {
                continue;
            }
            if let Some(lab) = &best[n] {
                let take = match next {
                    None => true,
                    Some(m) => {
                        let cur = best[m].as_ref().unwrap();
                        lab.arrival < cur.arrival
                            || (lab.arrival == cur.arrival && lab.path < cur.path)
                    }
                };
                if take {
                    next = Some(n);
                }
            }
        }
        let Some(u) = next else { return None };
        if u == dest {
            let lab = best[u].take().unwrap();
            return Some((lab.path, lab.arrival));
        }
        settled[u] = true;
        let u_label = best[u].clone().unwrap();
        for &e in net.out_edges(u) {
            let c = cost_at(e, u_label.arrival);
            if !c.is_finite() {
                continue;
            }
            let v = net.edge(e).head;
            if settled[v] {
                continue;
            }
            let arrival = u_label.arrival + c;
            let mut path = u_label.path.clone();
            path.push(e);
            let replace = match &best[v] {
                None => true,
                Some(cur) => {
                    arrival < cur.arrival || (arrival == cur.arrival && path < cur.path)
                }
            };
            if replace {
                best[v] = Some(Label { arrival, path });
            }
        }
    }
}

/// Arrival time of a fixed path traversed under time-dependent rows, using
/// the same entry-time cost rule as [`plan_route`]. Used to evaluate realized
/// arrivals in tests and experiments.
pub fn traverse_time(
    net: &RoadNetwork,
    rows: &[Vec<f64>],
    step_min: f64,
    base_min: f64,
    depart_min: f64,
    path: &[EdgeId],
) -> f64 {
    let mut t = depart_min;
    for &e in path {
        let idx = ((t - base_min) / step_min).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(rows.len() - 1) };
        let c = rows[idx][e];
        assert!(c.is_finite(), "path crosses a closed edge");
        t += c;
        let _ = net;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::testutil::{enumerate_paths, net};
    use crate::network::Zone;
    use proptest::prelude::*;

    fn two_route_net() -> crate::network::RoadNetwork {
        // Route A: 0 -e0-> 1 -e1-> 3 ; Route B: 0 -e2-> 2 -e3-> 3.
        net(
            &[
                (0.0, 0.0, Zone::A),
                (1.0, 1.0, Zone::B),
                (1.0, -1.0, Zone::B),
                (2.0, 0.0, Zone::Safe),
            ],
            &[
                (0, 1, 10.0, 10.0, 1000.0),
                (1, 3, 10.0, 10.0, 1000.0),
                (0, 2, 10.0, 12.5, 1000.0),
                (2, 3, 10.0, 12.5, 1000.0),
            ],
            &[3],
        )
    }

    #[test]
    fn constant_forecast_matches_static_shortest_path() {
        let n = two_route_net();
        let rows = vec![n.free_flow_times(); 12];
        let (path, arrival) = plan_route(&n, &rows, 5.0, 100.0, 0, 3).unwrap();
        let (static_path, cost) = shortest_path(&n, &n.free_flow_times(), 0, 3).unwrap();
        assert_eq!(path, static_path);
        assert_eq!(arrival, 100.0 + cost);
    }

    #[test]
    fn origin_equals_dest() {
        let n = two_route_net();
        let rows = vec![n.free_flow_times(); 1];
        let (path, arrival) = plan_route(&n, &rows, 5.0, 42.0, 1, 1).unwrap();
        assert!(path.is_empty());
        assert_eq!(arrival, 42.0);
    }

    #[test]
    fn avoids_predicted_jump() {
        // Route A (e0, e1) costs 10+10 under current conditions but e1 jumps
        // to 60 from step 2 onward; route B is constant 12.5+12.5. Entering
        // e1 happens at minute 10 = step 2, so by hand: A arrives at 70,
        // B at 25. The planner must take B.
        let n = two_route_net();
        let mut rows = vec![n.free_flow_times(); 12];
        for (i, row) in rows.iter_mut().enumerate() {
            if i >= 2 {
                row[1] = 60.0;
            }
        }
        let (path, arrival) = plan_route(&n, &rows, 5.0, 0.0, 0, 3).unwrap();
        assert_eq!(path, vec![2, 3]);
        assert_eq!(arrival, 25.0);
    }

    #[test]
    fn beyond_horizon_holds_last_row() {
        let n = two_route_net();
        // One row only: everything after minute 5 still uses it.
        let rows = vec![n.free_flow_times(); 1];
        let (_, arrival) = plan_route(&n, &rows, 5.0, 0.0, 0, 3).unwrap();
        assert_eq!(arrival, 20.0);
    }

    #[test]
    fn unreachable_returns_none() {
        let n = two_route_net();
        let mut row = n.free_flow_times();
        row[1] = f64::INFINITY;
        row[3] = f64::INFINITY;
        assert!(plan_route(&n, &[row], 5.0, 0.0, 0, 3).is_none());
    }

    prop_compose! {
        /// Random digraph plus a FIFO (non-overtaking) forecast: per-edge
        /// cost sequences are non-decreasing, the regime where label-setting
        /// search is exact.
        fn random_case()(seed in any::<u64>(), n in 3usize..8) -> (crate::network::RoadNetwork, Vec<Vec<f64>>) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, 7);
            let mut nodes = Vec::new();
            for i in 0..n {
                nodes.push((i as f64, 0.0, if i == n - 1 { Zone::Safe } else { Zone::B }));
            }
            let mut edges = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if a != b && rng.random::<f64>() < 0.45 {
                        edges.push((a, b, 1.0, 1.0 + rng.random::<f64>() * 9.0, 100.0));
                    }
                }
            }
            if edges.is_empty() {
                edges.push((0, 1, 1.0, 5.0, 100.0));
            }
            let net = net(&nodes, &edges, &[0]);
            let mut rows: Vec<Vec<f64>> = Vec::new();
            let mut current: Vec<f64> = (0..net.n_edges())
                .map(|_| 1.0 + rng.random::<f64>() * 9.0)
                .collect();
            for _ in 0..6 {
                rows.push(current.clone());
                for c in &mut current {
                    *c += rng.random::<f64>() * 4.0;
                }
            }
            (net, rows)
        }
    }

    proptest! {
        /// Under any fixed forecast the planner matches brute force over all
        /// simple paths, evaluated with the same entry-time rule.
        #[test]
        fn planner_matches_brute_force((net, rows) in random_case()) {
            let origin = 0;
            let dest = net.n_nodes() - 1;
            let free = net.free_flow_times();
            let all = enumerate_paths(&net, &free, origin, dest);
            let best_brute = all
                .iter()
                .map(|(p, _)| traverse_time(&net, &rows, 5.0, 0.0, 0.0, p))
                .fold(f64::INFINITY, f64::min);
            match plan_route(&net, &rows, 5.0, 0.0, origin, dest) {
                Some((path, arrival)) => {
                    prop_assert!((arrival - best_brute).abs() < 1e-9,
                        "planner {arrival} vs brute {best_brute}");
                    let replay = traverse_time(&net, &rows, 5.0, 0.0, 0.0, &path);
                    prop_assert!((replay - arrival).abs() < 1e-9);
                }
                None => prop_assert!(all.is_empty()),
            }
        }
    }
}
