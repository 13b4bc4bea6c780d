//! Scenario configuration: the schema-validated TOML file that drives every
//! subsystem (simulation, training, optimization, evaluation), plus the
//! bundled synthetic default network and its disruption variants.

use crate::demand::DemandSpec;
use crate::hazard::HazardModel;
use crate::network::{Edge, Node, NodeId, RoadNetwork, Zone};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSection {
    pub base: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochsSection {
    /// Evacuation horizon in hours.
    pub horizon_h: f64,
    /// Simulation step length in minutes.
    pub step_min: f64,
    /// Decision-epoch interval in minutes.
    pub interval_min: f64,
    /// Observation augmentation period in decision epochs.
    pub aug_period: u32,
    /// Local candidate-set size.
    pub n_local: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    pub trucks: u32,
    pub chargers_per_truck: u32,
    pub capability_kwh: f64,
    pub service_min: f64,
    /// Mobile charger power; defaults to fixed-charger parity.
    pub charger_kw: f64,
    /// Initial truck locations, cycled over the fleet.
    pub depot_nodes: Vec<NodeId>,
    /// Routing re-plan interval for the predictive router, in minutes.
    pub reroute_min: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub node: NodeId,
    pub chargers: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub fixed_charger_kw: f64,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    pub stations: Vec<StationSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub x_km: f64,
    pub y_km: f64,
    pub zone: Zone,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub tail: NodeId,
    pub head: NodeId,
    pub length_km: f64,
    pub free_flow_min: f64,
    pub capacity_vph: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub edge: usize,
    #[serde(default = "one")]
    pub capacity_factor: f64,
    #[serde(default)]
    pub closed: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TogglesSection {
    /// Evacuation-rate override (e.g. 0.75 for higher participation).
    pub compliance_override: Option<f64>,
    /// Departure-curve steepness override applied to every zone.
    pub alpha_override: Option<f64>,
    /// Probability that an entire station is failed at episode start.
    #[serde(default)]
    pub station_failure_prob: f64,
    #[serde(default)]
    pub link_overrides: Vec<LinkOverride>,
}

/// On-disk scenario document. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub seeds: SeedsSection,
    pub epochs: EpochsSection,
    pub hazard: HazardModel,
    pub demand: DemandSpec,
    pub fleet: FleetSection,
    pub network: NetworkSection,
    #[serde(default)]
    pub toggles: TogglesSection,
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Validate and build the runtime scenario.
    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let inv = ScenarioError::Invalid;
        self.hazard.validate().map_err(inv)?;
        self.demand.validate().map_err(ScenarioError::Invalid)?;

        let e = &self.epochs;
        if e.horizon_h <= 0.0 || e.step_min <= 0.0 || e.interval_min <= 0.0 {
            return Err(ScenarioError::Invalid(
                "epochs: horizon, step and interval must be positive".into(),
            ));
        }
        let horizon_min = e.horizon_h * 60.0;
        if (horizon_min / e.step_min).fract().abs() > 1e-9 {
            return Err(ScenarioError::Invalid("epochs: step_min must divide the horizon".into()));
        }
        if (e.interval_min / e.step_min).fract().abs() > 1e-9 {
            return Err(ScenarioError::Invalid("epochs: step_min must divide interval_min".into()));
        }
        if e.aug_period == 0 {
            return Err(ScenarioError::Invalid("epochs: aug_period must be at least 1".into()));
        }
        if e.n_local == 0 {
            return Err(ScenarioError::Invalid("epochs: n_local must be at least 1".into()));
        }

        if self.fleet.capability_kwh < 0.0
            || self.fleet.service_min <= 0.0
            || self.fleet.charger_kw <= 0.0
        {
            return Err(ScenarioError::Invalid(
                "fleet: capability, service_min and charger_kw must be positive".into(),
            ));
        }
        if self.fleet.trucks > 0 && self.fleet.depot_nodes.is_empty() {
            return Err(ScenarioError::Invalid("fleet: depot_nodes required when trucks > 0".into()));
        }
        if self.fleet.reroute_min <= 0.0 {
            return Err(ScenarioError::Invalid("fleet: reroute_min must be positive".into()));
        }
        if self.network.fixed_charger_kw <= 0.0 {
            return Err(ScenarioError::Invalid("network: fixed_charger_kw must be positive".into()));
        }

        if let Some(c) = self.toggles.compliance_override {
            if !(0.0..=1.0).contains(&c) {
                return Err(ScenarioError::Invalid(
                    "toggles: compliance_override must lie in [0, 1]".into(),
                ));
            }
        }
        if let Some(a) = self.toggles.alpha_override {
            if a <= 0.0 {
                return Err(ScenarioError::Invalid("toggles: alpha_override must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.toggles.station_failure_prob) {
            return Err(ScenarioError::Invalid(
                "toggles: station_failure_prob must lie in [0, 1]".into(),
            ));
        }
        for lo in &self.toggles.link_overrides {
            if lo.edge >= self.network.edges.len() {
                return Err(ScenarioError::Invalid(format!(
                    "toggles: link override references missing edge {}",
                    lo.edge
                )));
            }
            if lo.capacity_factor <= 0.0 {
                return Err(ScenarioError::Invalid("toggles: capacity_factor must be positive".into()));
            }
        }

        let nodes: Vec<Node> = self
            .network
            .nodes
            .iter()
            .map(|n| Node { x_km: n.x_km, y_km: n.y_km, zone: n.zone })
            .collect();
        let mut edges: Vec<Edge> = self
            .network
            .edges
            .iter()
            .map(|e| Edge {
                tail: e.tail,
                head: e.head,
                length_km: e.length_km,
                free_flow_min: e.free_flow_min,
                capacity_vph: e.capacity_vph,
            })
            .collect();
        let mut closed_edges = vec![false; edges.len()];
        for lo in &self.toggles.link_overrides {
            edges[lo.edge].capacity_vph *= lo.capacity_factor;
            if lo.closed {
                closed_edges[lo.edge] = true;
            }
        }
        let station_nodes: Vec<NodeId> = self.network.stations.iter().map(|s| s.node).collect();
        let net = RoadNetwork::new(nodes, edges, station_nodes)
            .map_err(|e| ScenarioError::Invalid(format!("network: {e}")))?;
        for d in &self.fleet.depot_nodes {
            if *d >= net.n_nodes() {
                return Err(ScenarioError::Invalid(format!("fleet: depot node {d} does not exist")));
            }
        }
        if self.network.stations.iter().any(|s| s.chargers == 0) {
            return Err(ScenarioError::Invalid(
                "network: every station needs at least one charger".into(),
            ));
        }

        let mut demand = self.demand.clone();
        if let Some(c) = self.toggles.compliance_override {
            demand.compliance = c;
        }
        if let Some(a) = self.toggles.alpha_override {
            for curve in &mut demand.curves {
                curve.alpha = a;
            }
        }

        Ok(Scenario {
            name: self.name.clone(),
            base_seed: self.seeds.base,
            net: Arc::new(net),
            closed_edges,
            hazard: self.hazard.clone(),
            demand,
            fleet: self.fleet.clone(),
            timing: *e,
            station_chargers: self.network.stations.iter().map(|s| s.chargers).collect(),
            fixed_charger_kw: self.network.fixed_charger_kw,
            station_failure_prob: self.toggles.station_failure_prob,
        })
    }
}

/// Validated runtime scenario shared by all subsystems.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub base_seed: u64,
    pub net: Arc<RoadNetwork>,
    /// Closed links keep their edge records but are marked unreachable in
    /// every travel-time snapshot, so toggles stay non-destructive.
    pub closed_edges: Vec<bool>,
    pub hazard: HazardModel,
    pub demand: DemandSpec,
    pub fleet: FleetSection,
    pub timing: EpochsSection,
    pub station_chargers: Vec<u32>,
    pub fixed_charger_kw: f64,
    pub station_failure_prob: f64,
}

impl Scenario {
    pub fn n_steps(&self) -> usize {
        (self.timing.horizon_h * 60.0 / self.timing.step_min).round() as usize
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.timing.interval_min / self.timing.step_min).round() as usize
    }

    /// Number of decision epochs offered: floor(horizon / interval) + 1.
    pub fn n_epochs(&self) -> usize {
        (self.timing.horizon_h * 60.0 / self.timing.interval_min).floor() as usize + 1
    }

    pub fn step_h(&self) -> f64 {
        self.timing.step_min / 60.0
    }

    /// Hour-of-episode at the start of a step.
    pub fn step_time_h(&self, step: usize) -> f64 {
        step as f64 * self.timing.step_min / 60.0
    }

    pub fn with_fleet_size(&self, trucks: u32) -> Scenario {
        let mut out = self.clone();
        out.fleet.trucks = trucks;
        out
    }
}

// ---------------------------------------------------------------------------
// Bundled synthetic default: a 5x5 coastal grid (25 nodes, 64 directed
// edges, 6 stations) standing in for a real regional network. Columns run
// inland (west to east), rows run south to north; the east column and north
// row are the safe zone.
// ---------------------------------------------------------------------------

const GRID: usize = 5;
const COL_X: [f64; GRID] = [0.0, 30.0, 60.0, 100.0, 160.0];
const ROW_Y: [f64; GRID] = [0.0, 20.0, 40.0, 70.0, 110.0];

fn node_id(col: usize, row: usize) -> NodeId {
    row * GRID + col
}

fn grid_zone(col: usize, row: usize) -> Zone {
    if col == GRID - 1 || row == GRID - 1 {
        Zone::Safe
    } else if col <= 1 && row <= 1 {
        Zone::A
    } else if col <= 2 && row <= 2 {
        Zone::B
    } else {
        Zone::C
    }
}

/// Directed edge ids of the horizontal pair between (col,row) and
/// (col+1,row): (eastbound, westbound).
pub fn horizontal_edge_ids(col: usize, row: usize) -> (usize, usize) {
    // Horizontal pairs are emitted first, row-major: 2 ids per gap.
    let pair = row * (GRID - 1) + col;
    (2 * pair, 2 * pair + 1)
}

/// Directed edge ids of the vertical pair between (col,row) and (col,row+1):
/// (northbound, southbound). Vertical edges exist only for col <= 2.
pub fn vertical_edge_ids(col: usize, row: usize) -> (usize, usize) {
    let horizontal = 2 * GRID * (GRID - 1);
    let pair = row * 3 + col;
    (horizontal + 2 * pair, horizontal + 2 * pair + 1)
}

/// The bundled desk-scale default scenario.
pub fn desk_default() -> ScenarioFile {
    let mut nodes = Vec::new();
    for row in 0..GRID {
        for col in 0..GRID {
            nodes.push(NodeSpec { x_km: COL_X[col], y_km: ROW_Y[row], zone: grid_zone(col, row) });
        }
    }
    let mut edges = Vec::new();
    let mut push_pair = |a: NodeId, b: NodeId, length: f64, speed_kmh: f64, cap: f64| {
        let free_flow_min = length / speed_kmh * 60.0;
        edges.push(EdgeSpec { tail: a, head: b, length_km: length, free_flow_min, capacity_vph: cap });
        edges.push(EdgeSpec { tail: b, head: a, length_km: length, free_flow_min, capacity_vph: cap });
    };
    // Horizontal corridors (west-east), row-major.
    for row in 0..GRID {
        for col in 0..GRID - 1 {
            let length = COL_X[col + 1] - COL_X[col];
            let cap = if col >= 2 { 1800.0 } else { 1500.0 };
            push_pair(node_id(col, row), node_id(col + 1, row), length, 90.0, cap);
        }
    }
    // Vertical connectors (south-north) in the three western columns.
    for row in 0..GRID - 1 {
        for col in 0..3 {
            let length = ROW_Y[row + 1] - ROW_Y[row];
            push_pair(node_id(col, row), node_id(col, row + 1), length, 60.0, 800.0);
        }
    }

    let stations = vec![
        StationSpec { node: node_id(1, 1), chargers: 2 },
        StationSpec { node: node_id(2, 0), chargers: 3 },
        StationSpec { node: node_id(2, 2), chargers: 2 },
        StationSpec { node: node_id(3, 1), chargers: 3 },
        StationSpec { node: node_id(2, 3), chargers: 2 },
        StationSpec { node: node_id(3, 3), chargers: 2 },
    ];

    ScenarioFile {
        name: "default".to_string(),
        seeds: SeedsSection { base: 0 },
        epochs: EpochsSection {
            horizon_h: 48.0,
            step_min: 5.0,
            interval_min: 150.0,
            aug_period: 3,
            n_local: 5,
        },
        hazard: HazardModel::default(),
        demand: DemandSpec::default(),
        fleet: FleetSection {
            trucks: 4,
            chargers_per_truck: 3,
            capability_kwh: 3000.0,
            service_min: 120.0,
            charger_kw: 120.0,
            depot_nodes: vec![node_id(3, 2)],
            reroute_min: 15.0,
        },
        network: NetworkSection {
            fixed_charger_kw: 120.0,
            nodes,
            edges,
            stations,
        },
        toggles: TogglesSection::default(),
    }
}

/// All bundled scenario variants, keyed by file stem.
pub fn builtin_scenarios() -> Vec<ScenarioFile> {
    let base = desk_default();
    let mut out = vec![base.clone()];

    let mut named = |name: &str, f: &dyn Fn(&mut ScenarioFile)| {
        let mut s = base.clone();
        s.name = name.to_string();
        f(&mut s);
        out.push(s);
    };

    named("higher_participation", &|s| {
        s.toggles.compliance_override = Some(0.75);
    });
    named("flatter_departure", &|s| {
        s.toggles.alpha_override = Some(0.15);
    });
    named("concentrated_departure", &|s| {
        s.toggles.alpha_override = Some(0.25);
    });
    named("station_failure_15", &|s| s.toggles.station_failure_prob = 0.15);
    named("station_failure_30", &|s| s.toggles.station_failure_prob = 0.30);
    named("station_failure_45", &|s| s.toggles.station_failure_prob = 0.45);

    named("reduced_capacity", &|s| {
        // Halve the main mid-network corridor (col 2 <-> col 3) in every row.
        for row in 0..GRID {
            let (eb, wb) = horizontal_edge_ids(2, row);
            for e in [eb, wb] {
                s.toggles.link_overrides.push(LinkOverride {
                    edge: e,
                    capacity_factor: 0.5,
                    closed: false,
                });
            }
        }
    });
    named("two_components", &|s| {
        // Sever every crossing between columns 1 and 2; the west block keeps
        // its own safe nodes on the north row.
        for row in 0..GRID {
            let (eb, wb) = horizontal_edge_ids(1, row);
            for e in [eb, wb] {
                s.toggles.link_overrides.push(LinkOverride {
                    edge: e,
                    capacity_factor: 1.0,
                    closed: true,
                });
            }
        }
    });
    named("three_components", &|s| {
        for row in 0..GRID {
            let (eb, wb) = horizontal_edge_ids(1, row);
            for e in [eb, wb] {
                s.toggles.link_overrides.push(LinkOverride {
                    edge: e,
                    capacity_factor: 1.0,
                    closed: true,
                });
            }
        }
        // Additionally cut the south-west block off the north row: its
        // evacuees have no reachable safe node and leave the simulation.
        for col in 0..2 {
            let (nb, sb) = vertical_edge_ids(col, 2);
            for e in [nb, sb] {
                s.toggles.link_overrides.push(LinkOverride {
                    edge: e,
                    capacity_factor: 1.0,
                    closed: true,
                });
            }
        }
    });

    out
}

/// Write every bundled scenario into `dir` as `<name>.toml`.
pub fn write_builtin_scenarios(dir: &Path) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir)?;
    for s in builtin_scenarios() {
        std::fs::write(dir.join(format!("{}.toml", s.name)), s.to_toml())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::costs_from;

    #[test]
    fn default_builds_and_has_expected_shape() {
        let s = desk_default().build().unwrap();
        assert_eq!(s.net.n_nodes(), 25);
        assert_eq!(s.net.n_edges(), 64);
        assert_eq!(s.net.n_stations(), 6);
        assert_eq!(s.n_steps(), 576);
        assert_eq!(s.steps_per_epoch(), 30);
        assert_eq!(s.n_epochs(), 20);
    }

    #[test]
    fn toml_roundtrip_preserves_structure() {
        let f = desk_default();
        let text = f.to_toml();
        let parsed = ScenarioFile::from_toml_str(&text).unwrap();
        assert_eq!(parsed.to_toml(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = desk_default().to_toml();
        let with_top = format!("bogus_key = 1\n{text}");
        assert!(ScenarioFile::from_toml_str(&with_top).is_err());
        let nested = text.replace("[epochs]", "[epochs]\nextra = 2");
        assert!(ScenarioFile::from_toml_str(&nested).is_err());
    }

    #[test]
    fn pointed_validation_errors() {
        let mut f = desk_default();
        f.epochs.step_min = 7.0; // does not divide 150
        let err = f.build().unwrap_err().to_string();
        assert!(err.contains("step_min"), "{err}");

        let mut f = desk_default();
        f.toggles.station_failure_prob = 1.5;
        assert!(f.build().is_err());

        let mut f = desk_default();
        f.toggles.link_overrides.push(LinkOverride { edge: 999, capacity_factor: 1.0, closed: true });
        assert!(f.build().is_err());
    }

    #[test]
    fn two_components_scenario_splits_network() {
        let scenarios = builtin_scenarios();
        let two = scenarios.iter().find(|s| s.name == "two_components").unwrap();
        let s = two.build().unwrap();
        let mut costs = s.net.free_flow_times();
        for (e, closed) in s.closed_edges.iter().enumerate() {
            if *closed {
                costs[e] = crate::network::UNREACHABLE;
            }
        }
        // West block cannot reach the east column, but still reaches a safe
        // node on the north row.
        let west = node_id(0, 0);
        let dist = costs_from(&s.net, &costs, west);
        assert!(!dist[node_id(4, 0)].is_finite());
        assert!(dist[node_id(0, 4)].is_finite());
    }

    #[test]
    fn three_components_scenario_strands_southwest() {
        let scenarios = builtin_scenarios();
        let three = scenarios.iter().find(|s| s.name == "three_components").unwrap();
        let s = three.build().unwrap();
        let mut costs = s.net.free_flow_times();
        for (e, closed) in s.closed_edges.iter().enumerate() {
            if *closed {
                costs[e] = crate::network::UNREACHABLE;
            }
        }
        let dist = costs_from(&s.net, &costs, node_id(0, 0));
        for safe in s.net.safe_nodes() {
            assert!(!dist[safe].is_finite(), "south-west block should be cut off");
        }
    }
}
