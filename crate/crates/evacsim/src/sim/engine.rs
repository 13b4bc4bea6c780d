//! The discrete-time world engine: vehicle movement, congestion feedback,
//! station queues and charging service, truck operations, and risk accrual.

use super::state::*;
use crate::demand::{generate_evacuees, select_station, Evacuee, EvacueeStatus};
use crate::network::{congested_travel_time, costs_from, shortest_path, NodeId, StationIdx, TravelTimeField, UNREACHABLE};
use crate::rng::EpisodeRngs;
use crate::scenario::Scenario;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("truck {truck} chose station {station} outside its candidate set")]
    InvalidAction { truck: usize, station: StationIdx },
}

/// Per-step station trace entry.
#[derive(Debug, Clone, Copy)]
pub struct StationRow {
    pub queue: u32,
    pub risk: f64,
    pub chargers: u32,
    pub serving_mcts: u32,
}

/// Per-step truck trace entry.
#[derive(Debug, Clone)]
pub struct TruckRow {
    pub step: usize,
    pub truck: usize,
    pub phase: &'static str,
    pub node: NodeId,
    /// Edge being traversed and its progress fraction, if mid-edge.
    pub edge: Option<(usize, f64)>,
    pub capability_kwh: f64,
}

pub struct SimWorld {
    pub scenario: Scenario,
    pub step: usize,
    /// Travel times currently in effect, minutes; closed edges are infinite.
    pub snapshot: Vec<f64>,
    /// Realized per-step travel times (one row per completed step).
    pub field: TravelTimeField,
    pub stations: Vec<StationState>,
    pub trucks: Vec<TruckState>,
    pub evacuees: Vec<Evacuee>,
    /// Not-yet-departed evacuee ids, ascending (departure, id).
    pending: Vec<usize>,
    next_pending: usize,
    trips: Vec<ActiveTrip>,
    // Traces, step-major.
    pub station_trace: Vec<StationRow>,
    pub truck_trace: Vec<TruckRow>,
    /// Step risk sums and totals for reward/metrics.
    pub step_risk: Vec<f64>,
    pub risk_total: f64,
    /// Station arrivals per decision epoch, epoch-major.
    pub arrivals_per_epoch: Vec<u32>,
    pub delivered_fixed_kwh: f64,
    /// Per-evacuee energy bookkeeping for conservation checks.
    pub charged_kwh: Vec<f64>,
    pub drained_kwh: Vec<f64>,
    pub initial_soc: Vec<f64>,
}

impl SimWorld {
    pub fn new(scenario: &Scenario, rngs: &mut EpisodeRngs) -> Self {
        let net = &scenario.net;
        let mut snapshot = net.free_flow_times();
        for (e, closed) in scenario.closed_edges.iter().enumerate() {
            if *closed {
                snapshot[e] = UNREACHABLE;
            }
        }
        let evacuees = generate_evacuees(
            &scenario.demand,
            net,
            &snapshot,
            scenario.timing.horizon_h,
            &mut rngs.demand,
        );
        let mut pending: Vec<usize> = evacuees
            .iter()
            .filter(|e| e.status == EvacueeStatus::Waiting)
            .map(|e| e.id)
            .collect();
        pending.sort_by(|&a, &b| {
            evacuees[a]
                .departure_min
                .partial_cmp(&evacuees[b].departure_min)
                .unwrap()
                .then(a.cmp(&b))
        });

        // Whole-station failures drawn once at episode start.
        let mut stations = Vec::with_capacity(net.n_stations());
        for s in 0..net.n_stations() {
            let mut chargers = scenario.station_chargers[s];
            if scenario.station_failure_prob > 0.0 {
                use rand::Rng;
                if rngs.failures.random::<f64>() < scenario.station_failure_prob {
                    chargers = 0;
                }
            }
            stations.push(StationState::new(chargers));
        }

        let trucks = (0..scenario.fleet.trucks as usize)
            .map(|k| {
                let depot = scenario.fleet.depot_nodes[k % scenario.fleet.depot_nodes.len()];
                TruckState {
                    phase: TruckPhase::Idle,
                    pos: Position::at_node(depot),
                    capability_kwh: scenario.fleet.capability_kwh,
                    delivered_kwh: 0.0,
                    last_plan_step: 0,
                }
            })
            .collect();

        let n_ev = evacuees.len();
        let initial_soc = evacuees.iter().map(|e| e.soc).collect();
        SimWorld {
            step: 0,
            snapshot,
            field: TravelTimeField::new(net.n_edges()),
            stations,
            trucks,
            evacuees,
            pending,
            next_pending: 0,
            trips: Vec::new(),
            station_trace: Vec::new(),
            truck_trace: Vec::new(),
            step_risk: Vec::new(),
            risk_total: 0.0,
            arrivals_per_epoch: vec![0; scenario.n_epochs() * scenario.net.n_stations()],
            delivered_fixed_kwh: 0.0,
            charged_kwh: vec![0.0; n_ev],
            drained_kwh: vec![0.0; n_ev],
            initial_soc,
            scenario: scenario.clone(),
        }
    }

    pub fn time_h(&self) -> f64 {
        self.scenario.step_time_h(self.step)
    }

    pub fn n_stations(&self) -> usize {
        self.scenario.net.n_stations()
    }

    fn current_epoch(&self) -> usize {
        (self.step / self.scenario.steps_per_epoch()).min(self.scenario.n_epochs() - 1)
    }

    /// A truck's effective node for travel-time queries, plus the minutes
    /// needed to finish its current edge first.
    pub fn truck_position(&self, k: usize) -> (NodeId, f64) {
        let t = &self.trucks[k];
        if t.pos.on_edge() {
            let e = t.pos.route[0];
            let head = self.scenario.net.edge(e).head;
            let tt = self.snapshot[e];
            (head, (1.0 - t.pos.frac) * tt)
        } else {
            (t.pos.node, 0.0)
        }
    }

    /// Local or full observation for one truck at a decision epoch.
    pub fn observe(&self, k: usize, epoch: usize, full_set: bool) -> Observation {
        let net = &self.scenario.net;
        let (node, extra) = self.truck_position(k);
        let dist = costs_from(net, &self.snapshot, node);
        let t_h = self.time_h();
        let mut all: Vec<CandidateStation> = (0..net.n_stations())
            .map(|s| CandidateStation {
                station: s,
                queue: self.stations[s].queue_len(),
                risk: self.scenario.hazard.per_capita_risk(net.station_zone(s), t_h),
                chargers: self.stations[s].operational_chargers,
                serving_mcts: self.serving_count(s),
                travel_min: extra + dist[net.station_node(s)],
            })
            .collect();
        let aug = epoch % self.scenario.timing.aug_period as usize == 0;
        if !(full_set || aug) && all.len() > self.scenario.timing.n_local {
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.sort_by(|&a, &b| {
                all[a]
                    .travel_min
                    .partial_cmp(&all[b].travel_min)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.truncate(self.scenario.timing.n_local);
            order.sort_unstable();
            all = order.into_iter().map(|i| all[i]).collect();
        }
        Observation {
            epoch,
            truck: k,
            global_hazard_h: self.scenario.hazard.global_hazard(t_h),
            capability_kwh: self.trucks[k].capability_kwh,
            fleet_size: self.scenario.fleet.trucks,
            candidates: all,
        }
    }

    /// Full global state at a decision epoch.
    pub fn observe_global(&self, epoch: usize) -> GlobalState {
        let net = &self.scenario.net;
        let t_h = self.time_h();
        let stations = (0..net.n_stations())
            .map(|s| CandidateStation {
                station: s,
                queue: self.stations[s].queue_len(),
                risk: self.scenario.hazard.per_capita_risk(net.station_zone(s), t_h),
                chargers: self.stations[s].operational_chargers,
                serving_mcts: self.serving_count(s),
                travel_min: 0.0,
            })
            .collect();
        let trucks = (0..self.trucks.len())
            .map(|k| {
                let (node, extra) = self.truck_position(k);
                let dist = costs_from(net, &self.snapshot, node);
                TruckView {
                    idle: self.trucks[k].phase == TruckPhase::Idle,
                    capability_kwh: self.trucks[k].capability_kwh,
                    travel_min: (0..net.n_stations())
                        .map(|s| extra + dist[net.station_node(s)])
                        .collect(),
                }
            })
            .collect();
        GlobalState {
            epoch,
            global_hazard_h: self.scenario.hazard.global_hazard(t_h),
            stations,
            trucks,
        }
    }

    pub fn serving_count(&self, s: StationIdx) -> u32 {
        self.trucks
            .iter()
            .filter(|t| matches!(t.phase, TruckPhase::Serving { station, .. } if station == s))
            .count() as u32
    }

    pub fn idle_flags(&self) -> Vec<bool> {
        self.trucks.iter().map(|t| t.phase == TruckPhase::Idle).collect()
    }

    /// Dispatch an idle truck to a station along a pre-planned route. A truck
    /// already at its target enters service immediately.
    pub fn dispatch_truck(&mut self, k: usize, target: StationIdx, route: Vec<usize>) {
        debug_assert_eq!(self.trucks[k].phase, TruckPhase::Idle);
        let station_node = self.scenario.net.station_node(target);
        let truck = &mut self.trucks[k];
        if truck.pos.node == station_node && route.is_empty() {
            truck.phase = TruckPhase::Serving {
                station: target,
                remaining_min: self.scenario.fleet.service_min,
            };
        } else {
            truck.phase = TruckPhase::Traveling { target };
            truck.pos.route = route;
            truck.pos.frac = 0.0;
            truck.last_plan_step = self.step;
        }
    }

    /// Validate chosen targets against candidate sets and dispatch. Routes
    /// come from the caller (router choice); a `None` route holds the truck.
    pub fn apply_actions(
        &mut self,
        actions: &[(usize, StationIdx, Option<Vec<usize>>)],
        observations: &[Observation],
    ) -> Result<(), SimError> {
        for (k, target, route) in actions {
            let obs = observations
                .iter()
                .find(|o| o.truck == *k)
                .expect("observation missing for actioned truck");
            if !obs.contains(*target) {
                return Err(SimError::InvalidAction { truck: *k, station: *target });
            }
            if let Some(route) = route {
                self.dispatch_truck(*k, *target, route.clone());
            }
        }
        Ok(())
    }

    /// Advance one simulation step.
    pub fn step(&mut self, rngs: &mut EpisodeRngs) {
        let step_min = self.scenario.timing.step_min;
        let t_h = self.time_h();
        let net = self.scenario.net.clone();

        // (1) Release newly departing evacuees into traffic.
        let release_before = (self.step as f64 + 1.0) * step_min;
        while self.next_pending < self.pending.len() {
            let id = self.pending[self.next_pending];
            if self.evacuees[id].departure_min >= release_before {
                break;
            }
            self.next_pending += 1;
            let (origin, dest) = (self.evacuees[id].origin, self.evacuees[id].dest);
            if origin == dest {
                self.evacuees[id].status = EvacueeStatus::Arrived;
                continue;
            }
            match shortest_path(&net, &self.snapshot, origin, dest) {
                Ok((route, _)) => {
                    self.evacuees[id].status = EvacueeStatus::Driving;
                    self.trips.push(ActiveTrip {
                        evacuee: id,
                        pos: Position { node: origin, route, frac: 0.0 },
                        goal: TripGoal::Destination,
                        diverting: false,
                    });
                }
                Err(_) => self.evacuees[id].status = EvacueeStatus::Stranded,
            }
        }

        // (2) Advance driving vehicles and handle arrivals.
        let epoch = self.current_epoch();
        let mut finished = Vec::new();
        for idx in 0..self.trips.len() {
            if let Some(outcome) = self.move_trip(idx, step_min) {
                finished.push((idx, outcome));
            }
        }
        // Apply outcomes in trip order (keeps FIFO queues deterministic),
        // then drop the finished trips back-to-front.
        for (idx, outcome) in &finished {
            let evacuee = self.trips[*idx].evacuee;
            match outcome {
                TripOutcome::ReachedDestination => {
                    self.evacuees[evacuee].status = EvacueeStatus::Arrived;
                }
                TripOutcome::ReachedStation(s) => {
                    self.evacuees[evacuee].status = EvacueeStatus::Queuing;
                    self.stations[*s].queue.push_back(evacuee);
                    self.stations[*s].arrivals_total += 1;
                    let ns = self.scenario.net.n_stations();
                    self.arrivals_per_epoch[epoch * ns + s] += 1;
                }
                TripOutcome::Stranded => {
                    self.evacuees[evacuee].status = EvacueeStatus::Stranded;
                }
            }
        }
        for (idx, _) in finished.iter().rev() {
            self.trips.remove(*idx);
        }

        // Recompute link flows and the travel-time field.
        let mut on_edge = vec![0u32; net.n_edges()];
        for trip in &self.trips {
            if let Some(&e) = trip.pos.route.first() {
                on_edge[e] += 1;
            }
        }
        for e in 0..net.n_edges() {
            if self.scenario.closed_edges[e] {
                self.snapshot[e] = UNREACHABLE;
            } else {
                let edge = net.edge(e);
                let flow_vph = f64::from(on_edge[e]) * 60.0 / edge.free_flow_min;
                self.snapshot[e] = congested_travel_time(edge, flow_vph);
            }
        }
        self.field.push_row(self.snapshot.clone());

        // (3) EVs that crossed the seek threshold pick a station and divert.
        self.divert_low_soc_evs(epoch);

        // (5) Charging service with per-charger energy budgets.
        self.run_charging_service(step_min);

        // (6) Hazard-coupled charger failures.
        for s in 0..self.stations.len() {
            let zone = net.station_zone(s);
            let st = &mut self.stations[s];
            st.operational_chargers = self.scenario.hazard.sample_charger_failures(
                st.operational_chargers,
                zone,
                t_h,
                &mut rngs.failures,
            );
        }

        // (7) Truck service timers and movement.
        self.advance_trucks(step_min);

        // (8) Risk accrual and traces.
        let mut risk_sum = 0.0;
        for s in 0..self.stations.len() {
            let r = self.scenario.hazard.per_capita_risk(net.station_zone(s), t_h);
            let q = self.stations[s].queue_len();
            risk_sum += r * f64::from(q);
            self.station_trace.push(StationRow {
                queue: q,
                risk: r,
                chargers: self.stations[s].operational_chargers,
                serving_mcts: self.serving_count(s),
            });
        }
        self.step_risk.push(risk_sum);
        self.risk_total += risk_sum * self.scenario.step_h();
        for k in 0..self.trucks.len() {
            let t = &self.trucks[k];
            let phase = match t.phase {
                TruckPhase::Idle => "idle",
                TruckPhase::Traveling { .. } => "traveling",
                TruckPhase::Serving { .. } => "serving",
            };
            let edge = if t.pos.on_edge() {
                Some((t.pos.route[0], t.pos.frac))
            } else {
                None
            };
            self.truck_trace.push(TruckRow {
                step: self.step,
                truck: k,
                phase,
                node: t.pos.node,
                edge,
                capability_kwh: t.capability_kwh,
            });
        }

        self.step += 1;
    }

    /// Move one trip by up to `budget_min`; returns its outcome if the trip
    /// ended this step.
    fn move_trip(&mut self, idx: usize, budget_min: f64) -> Option<TripOutcome> {
        let net = self.scenario.net.clone();
        let mut budget = budget_min;
        loop {
            let trip = &mut self.trips[idx];
            if trip.pos.route.is_empty() {
                return Some(self.finish_trip(idx));
            }
            let e = trip.pos.route[0];
            let tt = self.snapshot[e];
            debug_assert!(tt.is_finite(), "routes never contain closed edges");
            let remaining_t = (1.0 - trip.pos.frac) * tt;
            let edge_len = net.edge(e).length_km;
            let ev = &mut self.evacuees[trip.evacuee];
            if remaining_t <= budget + 1e-9 {
                budget -= remaining_t;
                let km = (1.0 - trip.pos.frac) * edge_len;
                if ev.is_ev {
                    ev.soc -= km * ev.consumption_kwh_per_km / ev.battery_kwh;
                    self.drained_kwh[trip.evacuee] += km * ev.consumption_kwh_per_km;
                }
                trip.pos.node = net.edge(e).head;
                trip.pos.route.remove(0);
                trip.pos.frac = 0.0;
                if ev.is_ev && ev.soc <= 0.0 {
                    ev.soc = 0.0;
                    return Some(TripOutcome::Stranded);
                }
                if trip.pos.route.is_empty() {
                    return Some(self.finish_trip(idx));
                }
                if budget <= 1e-9 {
                    return None;
                }
            } else {
                let dfrac = budget / tt;
                let km = dfrac * edge_len;
                trip.pos.frac += dfrac;
                if ev.is_ev {
                    ev.soc -= km * ev.consumption_kwh_per_km / ev.battery_kwh;
                    let id = trip.evacuee;
                    self.drained_kwh[id] += km * ev.consumption_kwh_per_km;
                    if ev.soc <= 0.0 {
                        ev.soc = 0.0;
                        return Some(TripOutcome::Stranded);
                    }
                }
                return None;
            }
        }
    }

    fn finish_trip(&mut self, idx: usize) -> TripOutcome {
        match self.trips[idx].goal {
            TripGoal::Destination => TripOutcome::ReachedDestination,
            TripGoal::Station(s) => TripOutcome::ReachedStation(s),
        }
    }

    fn divert_low_soc_evs(&mut self, epoch: usize) {
        let net = self.scenario.net.clone();
        let seek = self.scenario.demand.seek_threshold;
        let mut newly_queued = Vec::new();
        let mut stranded = Vec::new();
        for idx in 0..self.trips.len() {
            let trip = &self.trips[idx];
            let ev = &self.evacuees[trip.evacuee];
            if !ev.is_ev || trip.diverting || trip.goal != TripGoal::Destination || ev.soc >= seek {
                continue;
            }
            // Selection happens from the node ahead: mid-edge vehicles
            // finish their current edge first.
            let (from, spent_km) = if trip.pos.on_edge() {
                let e = trip.pos.route[0];
                (net.edge(e).head, (1.0 - trip.pos.frac) * net.edge(e).length_km)
            } else {
                (trip.pos.node, 0.0)
            };
            let range_km =
                ev.soc * ev.battery_kwh / ev.consumption_kwh_per_km - spent_km;
            let choice = if range_km > 0.0 {
                select_station(&net, &self.snapshot, from, range_km)
            } else {
                None
            };
            match choice {
                Some(s) => {
                    let station_node = net.station_node(s);
                    let trip = &mut self.trips[idx];
                    let keep_edge = if trip.pos.on_edge() {
                        vec![trip.pos.route[0]]
                    } else {
                        Vec::new()
                    };
                    let (tail, _) = shortest_path(&net, &self.snapshot, from, station_node)
                        .expect("selected station must be reachable");
                    trip.pos.route = keep_edge.into_iter().chain(tail).collect();
                    trip.goal = TripGoal::Station(s);
                    trip.diverting = true;
                    if trip.pos.route.is_empty() {
                        // Already standing at the station node.
                        newly_queued.push((idx, s));
                    }
                }
                None => stranded.push(idx),
            }
        }
        let mut remove: Vec<(usize, TripOutcome)> = Vec::new();
        for (idx, s) in newly_queued {
            remove.push((idx, TripOutcome::ReachedStation(s)));
        }
        for idx in stranded {
            remove.push((idx, TripOutcome::Stranded));
        }
        remove.sort_by_key(|(idx, _)| *idx);
        for (idx, outcome) in &remove {
            let evacuee = self.trips[*idx].evacuee;
            match outcome {
                TripOutcome::ReachedStation(s) => {
                    self.evacuees[evacuee].status = EvacueeStatus::Queuing;
                    self.stations[*s].queue.push_back(evacuee);
                    self.stations[*s].arrivals_total += 1;
                    let ns = self.scenario.net.n_stations();
                    self.arrivals_per_epoch[epoch * ns + s] += 1;
                }
                _ => self.evacuees[evacuee].status = EvacueeStatus::Stranded,
            }
        }
        for (idx, _) in remove.iter().rev() {
            self.trips.remove(*idx);
        }
    }

    /// Charger units process their bound EV and pull from the queue head on
    /// completion, carrying leftover per-step energy over to the next
    /// vehicle. Truck units additionally draw down the truck's onboard
    /// budget; a truck at zero capability contributes nothing.
    fn run_charging_service(&mut self, step_min: f64) {
        let step_h = step_min / 60.0;
        let target = self.scenario.demand.charge_target;
        let fixed_kw = self.scenario.fixed_charger_kw;
        let truck_kw = self.scenario.fleet.charger_kw;
        let cpt = self.scenario.fleet.chargers_per_truck;

        for s in 0..self.stations.len() {
            // Charger units available this step, in deterministic order.
            let mut units: Vec<SlotSource> = Vec::new();
            for _ in 0..self.stations[s].operational_chargers {
                units.push(SlotSource::Fixed);
            }
            let mut serving_trucks: Vec<usize> = (0..self.trucks.len())
                .filter(|&k| {
                    matches!(self.trucks[k].phase, TruckPhase::Serving { station, .. } if station == s)
                        && self.trucks[k].capability_kwh > 1e-9
                })
                .collect();
            serving_trucks.sort_unstable();
            for &k in &serving_trucks {
                for _ in 0..cpt {
                    units.push(SlotSource::Truck(k));
                }
            }

            // Rebind existing in-service EVs to units of the same source
            // kind; EVs whose charger disappeared go back to the queue head
            // in their original service order.
            let prior = std::mem::take(&mut self.stations[s].in_service);
            let mut unit_ev: Vec<Option<(usize, f64)>> = vec![None; units.len()];
            let mut displaced = Vec::new();
            let mut fixed_used = 0usize;
            let mut truck_used: Vec<(usize, u32)> = serving_trucks.iter().map(|&k| (k, 0)).collect();
            'slots: for slot in prior {
                match slot.source {
                    SlotSource::Fixed => {
                        if fixed_used < self.stations[s].operational_chargers as usize {
                            unit_ev[fixed_used] = Some((slot.evacuee, slot.remaining_kwh));
                            fixed_used += 1;
                            continue 'slots;
                        }
                    }
                    SlotSource::Truck(k) => {
                        if let Some(entry) = truck_used.iter_mut().find(|(tk, _)| *tk == k) {
                            if entry.1 < cpt {
                                let base = self.stations[s].operational_chargers as usize;
                                let truck_pos = serving_trucks.iter().position(|&tk| tk == k).unwrap();
                                let unit_idx = base + truck_pos * cpt as usize + entry.1 as usize;
                                unit_ev[unit_idx] = Some((slot.evacuee, slot.remaining_kwh));
                                entry.1 += 1;
                                continue 'slots;
                            }
                        }
                    }
                }
                displaced.push(slot.evacuee);
            }
            for &ev in displaced.iter().rev() {
                self.evacuees[ev].status = EvacueeStatus::Queuing;
                self.stations[s].queue.push_front(ev);
            }

            // Process each unit with its per-step energy budget.
            for (u, source) in units.iter().enumerate() {
                let power = match source {
                    SlotSource::Fixed => fixed_kw,
                    SlotSource::Truck(_) => truck_kw,
                };
                let mut budget = power * step_h;
                loop {
                    if budget <= 1e-12 {
                        break;
                    }
                    let (ev_id, mut remaining) = match unit_ev[u].take() {
                        Some(x) => x,
                        None => match self.stations[s].queue.pop_front() {
                            Some(ev_id) => {
                                let ev = &self.evacuees[ev_id];
                                let need = ((target - ev.soc) * ev.battery_kwh).max(0.0);
                                self.evacuees[ev_id].status = EvacueeStatus::Charging;
                                (ev_id, need)
                            }
                            None => break,
                        },
                    };
                    let mut draw = budget.min(remaining);
                    if let SlotSource::Truck(k) = source {
                        draw = draw.min(self.trucks[*k].capability_kwh);
                        if draw <= 1e-12 {
                            // Mid-service exhaustion: the EV keeps the slot
                            // assignment and is displaced next step.
                            unit_ev[u] = Some((ev_id, remaining));
                            break;
                        }
                        self.trucks[*k].capability_kwh -= draw;
                        self.trucks[*k].delivered_kwh += draw;
                    } else {
                        self.delivered_fixed_kwh += draw;
                    }
                    let ev = &mut self.evacuees[ev_id];
                    ev.soc += draw / ev.battery_kwh;
                    self.charged_kwh[ev_id] += draw;
                    remaining -= draw;
                    budget -= draw;
                    if remaining <= 1e-9 {
                        self.stations[s].served_total += 1;
                        self.resume_trip(ev_id, s);
                    } else {
                        unit_ev[u] = Some((ev_id, remaining));
                    }
                }
            }

            self.stations[s].in_service = unit_ev
                .iter()
                .enumerate()
                .filter_map(|(u, entry)| {
                    entry.map(|(evacuee, remaining_kwh)| ServiceSlot {
                        evacuee,
                        remaining_kwh,
                        source: units[u],
                    })
                })
                .collect();
        }
    }

    /// A fully charged EV leaves the station and resumes its evacuation trip
    /// on the current snapshot.
    fn resume_trip(&mut self, ev_id: usize, s: StationIdx) {
        let net = self.scenario.net.clone();
        let from = net.station_node(s);
        let dest = self.evacuees[ev_id].dest;
        if from == dest {
            self.evacuees[ev_id].status = EvacueeStatus::Arrived;
            return;
        }
        match shortest_path(&net, &self.snapshot, from, dest) {
            Ok((route, _)) => {
                self.evacuees[ev_id].status = EvacueeStatus::Driving;
                self.trips.push(ActiveTrip {
                    evacuee: ev_id,
                    pos: Position { node: from, route, frac: 0.0 },
                    goal: TripGoal::Destination,
                    diverting: false,
                });
            }
            Err(_) => self.evacuees[ev_id].status = EvacueeStatus::Stranded,
        }
    }

    fn advance_trucks(&mut self, step_min: f64) {
        let net = self.scenario.net.clone();
        for k in 0..self.trucks.len() {
            match self.trucks[k].phase.clone() {
                TruckPhase::Idle => {}
                TruckPhase::Serving { station, remaining_min } => {
                    let left = remaining_min - step_min;
                    if left <= 1e-9 {
                        self.trucks[k].phase = TruckPhase::Idle;
                    } else {
                        self.trucks[k].phase = TruckPhase::Serving { station, remaining_min: left };
                    }
                }
                TruckPhase::Traveling { target } => {
                    let mut budget = step_min;
                    loop {
                        let truck = &mut self.trucks[k];
                        if truck.pos.route.is_empty() {
                            truck.phase = TruckPhase::Serving {
                                station: target,
                                remaining_min: self.scenario.fleet.service_min,
                            };
                            break;
                        }
                        let e = truck.pos.route[0];
                        let tt = self.snapshot[e];
                        if !tt.is_finite() {
                            // Current edge became unusable only via closure
                            // toggles, which are static; hold position.
                            break;
                        }
                        let remaining_t = (1.0 - truck.pos.frac) * tt;
                        if remaining_t <= budget + 1e-9 {
                            budget -= remaining_t;
                            truck.pos.node = net.edge(e).head;
                            truck.pos.route.remove(0);
                            truck.pos.frac = 0.0;
                            if truck.pos.route.is_empty() {
                                truck.phase = TruckPhase::Serving {
                                    station: target,
                                    remaining_min: self.scenario.fleet.service_min,
                                };
                                break;
                            }
                            if budget <= 1e-9 {
                                break;
                            }
                        } else {
                            truck.pos.frac += budget / tt;
                            break;
                        }
                    }
                }
            }
        }
    }
}

enum TripOutcome {
    ReachedDestination,
    ReachedStation(StationIdx),
    Stranded,
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::scenario::{
        EpochsSection, FleetSection, NetworkSection, NodeSpec, EdgeSpec, ScenarioFile,
        SeedsSection, StationSpec, TogglesSection,
    };

    /// Line network A --10km-- S0 --10km-- S1 --10km-- safe, stations on the
    /// middle nodes, no household demand (tests inject vehicles directly).
    pub fn tiny_scenario(trucks: u32) -> crate::scenario::Scenario {
        let mut demand = crate::demand::DemandSpec::default();
        demand.households = [0, 0, 0];
        let mut hazard = crate::hazard::HazardModel::default();
        hazard.kappa = 0.0;
        ScenarioFile {
            name: "tiny".into(),
            seeds: SeedsSection { base: 0 },
            epochs: EpochsSection {
                horizon_h: 48.0,
                step_min: 5.0,
                interval_min: 150.0,
                aug_period: 3,
                n_local: 5,
            },
            hazard,
            demand,
            fleet: FleetSection {
                trucks,
                chargers_per_truck: 3,
                capability_kwh: 3000.0,
                service_min: 120.0,
                charger_kw: 120.0,
                depot_nodes: vec![3],
                reroute_min: 15.0,
            },
            network: NetworkSection {
                fixed_charger_kw: 120.0,
                nodes: vec![
                    NodeSpec { x_km: 0.0, y_km: 0.0, zone: crate::network::Zone::A },
                    NodeSpec { x_km: 10.0, y_km: 0.0, zone: crate::network::Zone::B },
                    NodeSpec { x_km: 20.0, y_km: 0.0, zone: crate::network::Zone::C },
                    NodeSpec { x_km: 30.0, y_km: 0.0, zone: crate::network::Zone::Safe },
                ],
                edges: vec![
                    EdgeSpec { tail: 0, head: 1, length_km: 10.0, free_flow_min: 8.0, capacity_vph: 1000.0 },
                    EdgeSpec { tail: 1, head: 2, length_km: 10.0, free_flow_min: 8.0, capacity_vph: 1000.0 },
                    EdgeSpec { tail: 2, head: 3, length_km: 10.0, free_flow_min: 8.0, capacity_vph: 1000.0 },
                    EdgeSpec { tail: 3, head: 2, length_km: 10.0, free_flow_min: 8.0, capacity_vph: 1000.0 },
                    EdgeSpec { tail: 2, head: 1, length_km: 10.0, free_flow_min: 8.0, capacity_vph: 1000.0 },
                    EdgeSpec { tail: 1, head: 0, length_km: 10.0, free_flow_min: 8.0, capacity_vph: 1000.0 },
                ],
                stations: vec![
                    StationSpec { node: 1, chargers: 1 },
                    StationSpec { node: 2, chargers: 2 },
                ],
            },
            toggles: TogglesSection::default(),
        }
        .build()
        .unwrap()
    }

    /// Append an EV standing in a station queue with the given SoC.
    pub fn inject_queued_ev(world: &mut SimWorld, station: usize, soc: f64) -> usize {
        let id = world.evacuees.len();
        world.evacuees.push(crate::demand::Evacuee {
            id,
            origin: 0,
            dest: 3,
            departure_min: 0.0,
            is_ev: true,
            battery_kwh: 60.0,
            soc,
            consumption_kwh_per_km: 0.2,
            status: EvacueeStatus::Queuing,
        });
        world.charged_kwh.push(0.0);
        world.drained_kwh.push(0.0);
        world.initial_soc.push(soc);
        world.stations[station].queue.push_back(id);
        world.stations[station].arrivals_total += 1;
        id
    }
}
