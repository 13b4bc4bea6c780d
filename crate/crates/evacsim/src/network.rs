//! Directed road network, congestion-dependent link travel times, static
//! shortest paths, and the edge line-graph used by the travel-time
//! forecaster.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type EdgeId = usize;
/// Index into `RoadNetwork::stations` (not a node id).
pub type StationIdx = usize;

/// Sentinel travel time for closed or disconnected links/paths.
pub const UNREACHABLE: f64 = f64::INFINITY;

/// BPR volume-delay parameters.
const BPR_ALPHA: f64 = 0.15;
const BPR_BETA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    A,
    B,
    C,
    Safe,
}

impl Zone {
    pub const ALL: [Zone; 4] = [Zone::A, Zone::B, Zone::C, Zone::Safe];

    pub fn index(self) -> usize {
        match self {
            Zone::A => 0,
            Zone::B => 1,
            Zone::C => 2,
            Zone::Safe => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub x_km: f64,
    pub y_km: f64,
    pub zone: Zone,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub tail: NodeId,
    pub head: NodeId,
    pub length_km: f64,
    pub free_flow_min: f64,
    pub capacity_vph: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("edge {0} references missing node {1}")]
    MissingNode(EdgeId, NodeId),
    #[error("edge {0} has non-positive {1}")]
    NonPositiveEdgeAttr(EdgeId, &'static str),
    #[error("station list is empty")]
    NoStations,
    #[error("station {0} is not a node")]
    BadStationNode(NodeId),
    #[error("no node is labeled safe")]
    NoSafeNode,
    #[error("no path between the requested endpoints")]
    Unreachable,
}

/// Directed road network with fast charging stations (FCSs) on a subset of
/// nodes and an evacuation-zone label per node.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    /// Node of each station; the position in this list is the station index
    /// used throughout the crate.
    stations: Vec<NodeId>,
    out_edges: Vec<Vec<EdgeId>>,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, stations: Vec<NodeId>) -> Result<Self, NetworkError> {
        for (id, e) in edges.iter().enumerate() {
            if e.tail >= nodes.len() {
                return Err(NetworkError::MissingNode(id, e.tail));
            }
            if e.head >= nodes.len() {
                return Err(NetworkError::MissingNode(id, e.head));
            }
            if e.length_km <= 0.0 {
                return Err(NetworkError::NonPositiveEdgeAttr(id, "length"));
            }
            if e.free_flow_min <= 0.0 {
                return Err(NetworkError::NonPositiveEdgeAttr(id, "free-flow time"));
            }
            if e.capacity_vph <= 0.0 {
                return Err(NetworkError::NonPositiveEdgeAttr(id, "capacity"));
            }
        }
        if stations.is_empty() {
            return Err(NetworkError::NoStations);
        }
        for &s in &stations {
            if s >= nodes.len() {
                return Err(NetworkError::BadStationNode(s));
            }
        }
        if !nodes.iter().any(|n| n.zone == Zone::Safe) {
            return Err(NetworkError::NoSafeNode);
        }
        let mut out_edges = vec![Vec::new(); nodes.len()];
        for (id, e) in edges.iter().enumerate() {
            out_edges[e.tail].push(id);
        }
        Ok(Self { nodes, edges, stations, out_edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn stations(&self) -> &[NodeId] {
        &self.stations
    }

    pub fn station_node(&self, s: StationIdx) -> NodeId {
        self.stations[s]
    }

    pub fn station_zone(&self, s: StationIdx) -> Zone {
        self.nodes[self.stations[s]].zone
    }

    pub fn zone(&self, n: NodeId) -> Zone {
        self.nodes[n].zone
    }

    pub fn out_edges(&self, n: NodeId) -> &[EdgeId] {
        &self.out_edges[n]
    }

    pub fn safe_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.zone == Zone::Safe)
            .map(|(i, _)| i)
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.free_flow_min).collect()
    }

    /// Adjacency and degree of the edge line-graph: entry (e1,e2) is 1 iff
    /// head(e1) = tail(e2) or e1 = e2, so every edge aggregates its own state.
    pub fn line_graph(&self) -> LineGraph {
        let n = self.edges.len();
        let mut adjacency = vec![0.0; n * n];
        for (e1, a) in self.edges.iter().enumerate() {
            for (e2, b) in self.edges.iter().enumerate() {
                if e1 == e2 || a.head == b.tail {
                    adjacency[e1 * n + e2] = 1.0;
                }
            }
        }
        let degree = (0..n)
            .map(|i| adjacency[i * n..(i + 1) * n].iter().sum())
            .collect();
        LineGraph { n, adjacency, degree }
    }
}

/// Edge line-graph: row-major 0/1 adjacency over edges plus the diagonal of
/// the row-sum degree matrix.
#[derive(Debug, Clone)]
pub struct LineGraph {
    pub n: usize,
    pub adjacency: Vec<f64>,
    pub degree: Vec<f64>,
}

/// BPR travel time in minutes for an edge carrying `flow_vph`.
pub fn congested_travel_time(edge: &Edge, flow_vph: f64) -> f64 {
    debug_assert!(flow_vph >= 0.0);
    edge.free_flow_min * (1.0 + BPR_ALPHA * (flow_vph / edge.capacity_vph).powf(BPR_BETA))
}

/// Per-edge, per-step travel times for one episode. Closed edges carry the
/// [`UNREACHABLE`] sentinel.
#[derive(Debug, Clone)]
pub struct TravelTimeField {
    n_edges: usize,
    rows: Vec<Vec<f64>>,
}

impl TravelTimeField {
    pub fn new(n_edges: usize) -> Self {
        Self { n_edges, rows: Vec::new() }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.n_edges);
        self.rows.push(row);
    }

    pub fn n_steps(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.rows[step]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// The trailing window of `len` rows, front-padded by repeating the first
    /// available row when the episode is younger than the window.
    pub fn trailing_window(&self, len: usize) -> Vec<Vec<f64>> {
        assert!(!self.rows.is_empty());
        let mut out = Vec::with_capacity(len);
        for k in 0..len {
            let idx = (self.rows.len() + k).saturating_sub(len);
            out.push(self.rows[idx.min(self.rows.len() - 1)].clone());
        }
        out
    }
}

/// Dijkstra over a per-edge cost snapshot. Ties are broken by the
/// lexicographically smallest edge-id sequence so seeded runs are
/// bit-identical. Returns the edge list and its total cost in minutes.
pub fn shortest_path(
    net: &RoadNetwork,
    costs: &[f64],
    origin: NodeId,
    dest: NodeId,
) -> Result<(Vec<EdgeId>, f64), NetworkError> {
    assert_eq!(costs.len(), net.n_edges());
    if origin == dest {
        return Ok((Vec::new(), 0.0));
    }

    #[derive(Clone)]
    struct Label {
        cost: f64,
        path: Vec<EdgeId>,
    }

    fn better(cost: f64, path: &[EdgeId], than: &Label) -> bool {
        if cost < than.cost {
            return true;
        }
        cost == than.cost && path < than.path.as_slice()
    }

    let mut best: Vec<Option<Label>> = vec![None; net.n_nodes()];
    best[origin] = Some(Label { cost: 0.0, path: Vec::new() });
    let mut settled = vec![false; net.n_nodes()];

    loop {
        // Linear scan keeps the lexicographic tie-break exact; networks here
        // are small enough that a heap buys nothing.
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
                        lab.cost < cur.cost || (lab.cost == cur.cost && lab.path < cur.path)
                    }
                };
                if take {
                    next = Some(n);
                }
            }
        }
        let Some(u) = next else { break };
        if u == dest {
            let lab = best[dest].take().unwrap();
            return Ok((lab.path, lab.cost));
        }
        settled[u] = true;
        let u_label = best[u].clone().unwrap();
        for &e in net.out_edges(u) {
            let c = costs[e];
            if !c.is_finite() {
                continue;
            }
            let cand_cost = u_label.cost + c;
            let v = net.edge(e).head;
            if settled[v] {
                continue;
            }
            let mut cand_path = u_label.path.clone();
            cand_path.push(e);
            let replace = match &best[v] {
                None => true,
                Some(cur) => better(cand_cost, &cand_path, cur),
            };
            if replace {
                best[v] = Some(Label { cost: cand_cost, path: cand_path });
            }
        }
    }
    Err(NetworkError::Unreachable)
}

/// Cost of every node from `origin` under the snapshot (unreachable nodes get
/// the sentinel). Used for candidate-set construction and range checks.
pub fn costs_from(net: &RoadNetwork, costs: &[f64], origin: NodeId) -> Vec<f64> {
    let mut dist = vec![UNREACHABLE; net.n_nodes()];
    dist[origin] = 0.0;
    let mut settled = vec![false; net.n_nodes()];
    loop {
        let mut u = usize::MAX;
        let mut uc = UNREACHABLE;
        for n in 0..net.n_nodes() {
            if !settled[n] && dist[n] < uc {
                u = n;
                uc = dist[n];
            }
        }
        if u == usize::MAX {
            break;
        }
        settled[u] = true;
        for &e in net.out_edges(u) {
            let c = costs[e];
            if !c.is_finite() {
                continue;
            }
            let v = net.edge(e).head;
            if uc + c < dist[v] {
                dist[v] = uc + c;
            }
        }
    }
    dist
}
