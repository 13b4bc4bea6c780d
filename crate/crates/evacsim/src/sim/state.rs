//! Mutable world state of one evacuation episode.

use crate::network::{EdgeId, NodeId, StationIdx};
use std::collections::VecDeque;

/// Which charger unit an in-service EV is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotSource {
    Fixed,
    Truck(usize),
}

#[derive(Debug, Clone)]
pub struct ServiceSlot {
    pub evacuee: usize,
    pub remaining_kwh: f64,
    pub source: SlotSource,
}

#[derive(Debug, Clone)]
pub struct StationState {
    /// FIFO queue of waiting evacuee ids.
    pub queue: VecDeque<usize>,
    /// Operational fixed chargers m_i(t); non-increasing over an episode.
    pub operational_chargers: u32,
    /// EVs currently on a charger.
    pub in_service: Vec<ServiceSlot>,
    // Flow-conservation counters.
    pub arrivals_total: u64,
    pub served_total: u64,
}

impl StationState {
    pub fn new(chargers: u32) -> Self {
        Self {
            queue: VecDeque::new(),
            operational_chargers: chargers,
            in_service: Vec::new(),
            arrivals_total: 0,
            served_total: 0,
        }
    }

    pub fn queue_len(&self) -> u32 {
        self.queue.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TruckPhase {
    Idle,
    Traveling { target: StationIdx },
    Serving { station: StationIdx, remaining_min: f64 },
}

/// Where a moving entity (truck or evacuee vehicle) currently is.
#[derive(Debug, Clone)]
pub struct Position {
    pub node: NodeId,
    /// Remaining route; `route[0]` is the edge being traversed when
    /// `frac > 0`, otherwise the vehicle sits at `node`.
    pub route: Vec<EdgeId>,
    /// Fraction of `route[0]` already traversed.
    pub frac: f64,
}

impl Position {
    pub fn at_node(node: NodeId) -> Self {
        Self { node, route: Vec::new(), frac: 0.0 }
    }

    pub fn on_edge(&self) -> bool {
        !self.route.is_empty() && self.frac > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct TruckState {
    pub phase: TruckPhase,
    pub pos: Position,
    /// Remaining charging capability u_k in kWh.
    pub capability_kwh: f64,
    pub delivered_kwh: f64,
    /// Simulation step of the last route (re-)plan.
    pub last_plan_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripGoal {
    Destination,
    Station(StationIdx),
}

/// A vehicle currently on the road.
#[derive(Debug, Clone)]
pub struct ActiveTrip {
    pub evacuee: usize,
    pub pos: Position,
    pub goal: TripGoal,
    /// Set once the EV has crossed the seek threshold and been routed to a
    /// station (or found none and stranded).
    pub diverting: bool,
}

/// One truck's candidate-set entry at a decision epoch.
#[derive(Debug, Clone, Copy)]
pub struct CandidateStation {
    pub station: StationIdx,
    pub queue: u32,
    pub risk: f64,
    pub chargers: u32,
    pub serving_mcts: u32,
    /// Travel time from the truck, minutes; unreachable is `f64::INFINITY`.
    pub travel_min: f64,
}

/// Local observation of one truck at a decision epoch.
#[derive(Debug, Clone)]
pub struct Observation {
    pub epoch: usize,
    pub truck: usize,
    pub global_hazard_h: f64,
    pub capability_kwh: f64,
    pub fleet_size: u32,
    /// Candidate stations in ascending station order.
    pub candidates: Vec<CandidateStation>,
}

impl Observation {
    pub fn candidate_ids(&self) -> Vec<StationIdx> {
        self.candidates.iter().map(|c| c.station).collect()
    }

    pub fn contains(&self, station: StationIdx) -> bool {
        self.candidates.iter().any(|c| c.station == station)
    }
}

/// Global state snapshot at a decision epoch (critic, centralized policies,
/// optimization drivers).
#[derive(Debug, Clone)]
pub struct GlobalState {
    pub epoch: usize,
    pub global_hazard_h: f64,
    /// (queue, risk, chargers, serving) per station.
    pub stations: Vec<CandidateStation>,
    pub trucks: Vec<TruckView>,
}

#[derive(Debug, Clone)]
pub struct TruckView {
    pub idle: bool,
    pub capability_kwh: f64,
    /// Travel time to every station, minutes; unreachable is infinity.
    pub travel_min: Vec<f64>,
}
