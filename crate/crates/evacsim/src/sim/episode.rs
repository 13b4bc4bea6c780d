//! Episode orchestration: the decision-epoch loop around the world engine.

use super::engine::{SimError, SimWorld, StationRow, TruckRow};
use super::state::TruckPhase;
use crate::demand::EvacueeStatus;
use crate::network::TravelTimeField;
use crate::policies::{DispatchPolicy, ObsScope};
use crate::rng::EpisodeRngs;
use crate::router::{RouteCtx, TruckRouter};
use crate::scenario::Scenario;

/// Everything recorded over one episode.
pub struct EpisodeResult {
    pub scenario_name: String,
    pub policy_name: String,
    pub seed: u64,
    pub n_steps: usize,
    pub n_stations: usize,
    pub step_min: f64,
    /// Step-major station rows: index `step * n_stations + station`.
    pub station_trace: Vec<StationRow>,
    pub truck_trace: Vec<TruckRow>,
    /// Station arrivals per decision epoch, epoch-major.
    pub arrivals_per_epoch: Vec<u32>,
    pub n_epochs: usize,
    /// Shared reward per decision epoch (negative risk over the interval).
    pub epoch_rewards: Vec<f64>,
    /// Total queue-induced risk exposure (hours-weighted).
    pub risk_total: f64,
    /// Number of EV evacuees generated.
    pub n_evac_ev: u32,
    pub arrived: u32,
    pub stranded: u32,
    /// Per-truck delivered energy and final capability.
    pub truck_delivered_kwh: Vec<f64>,
    pub truck_capability_kwh: Vec<f64>,
    pub delivered_fixed_kwh: f64,
    /// Per-station flow conservation counters:
    /// (arrivals, served, queued at end, in service at end).
    pub station_flow: Vec<(u64, u64, u64, u64)>,
    /// Per-evacuee energy bookkeeping for conservation checks.
    pub charged_kwh: Vec<f64>,
    pub drained_kwh: Vec<f64>,
    pub initial_soc: Vec<f64>,
    pub final_soc: Vec<f64>,
    pub is_ev: Vec<bool>,
    /// Realized travel-time rows, one per step.
    pub field: TravelTimeField,
}

impl EpisodeResult {
    pub fn station_row(&self, step: usize, station: usize) -> &StationRow {
        &self.station_trace[step * self.n_stations + station]
    }

    /// Sum of R_i(t) Q_i(t) over stations at one step.
    pub fn step_risk(&self, step: usize) -> f64 {
        (0..self.n_stations)
            .map(|s| {
                let row = self.station_row(step, s);
                row.risk * f64::from(row.queue)
            })
            .sum()
    }
}

/// Run one seeded episode of a scenario under a policy and router.
pub fn run_episode(
    scenario: &Scenario,
    policy: &mut dyn DispatchPolicy,
    router: &mut dyn TruckRouter,
    seed: u64,
) -> Result<EpisodeResult, SimError> {
    let mut rngs = EpisodeRngs::new(seed);
    let mut world = SimWorld::new(scenario, &mut rngs);
    policy.on_episode_start(seed);

    let n_steps = scenario.n_steps();
    let steps_per_epoch = scenario.steps_per_epoch();
    let reroute_steps =
        (scenario.fleet.reroute_min / scenario.timing.step_min).round().max(1.0) as usize;

    for step in 0..n_steps {
        if step % steps_per_epoch == 0 {
            let epoch = step / steps_per_epoch;
            run_epoch(&mut world, policy, router, epoch, &mut rngs)?;
        }
        // Rolling route updates for traveling trucks between epochs.
        if step > 0 && step % reroute_steps == 0 && router.replan_now(step) {
            replan_traveling_trucks(&mut world, router, step);
        }
        world.step(&mut rngs);
    }

    let epoch_rewards = collect_epoch_rewards(&world, scenario);
    policy.on_episode_end(&epoch_rewards);

    let evs = &world.evacuees;
    let arrived = evs.iter().filter(|e| e.status == EvacueeStatus::Arrived).count() as u32;
    let stranded = evs.iter().filter(|e| e.status == EvacueeStatus::Stranded).count() as u32;
    let station_flow = world
        .stations
        .iter()
        .map(|s| {
            (
                s.arrivals_total,
                s.served_total,
                s.queue.len() as u64,
                s.in_service.len() as u64,
            )
        })
        .collect();

    Ok(EpisodeResult {
        scenario_name: scenario.name.clone(),
        policy_name: policy.name().to_string(),
        seed,
        n_steps,
        n_stations: world.n_stations(),
        step_min: scenario.timing.step_min,
        station_trace: world.station_trace,
        truck_trace: world.truck_trace,
        arrivals_per_epoch: world.arrivals_per_epoch,
        n_epochs: scenario.n_epochs(),
        epoch_rewards,
        risk_total: world.risk_total,
        n_evac_ev: evs.iter().filter(|e| e.is_ev).count() as u32,
        arrived,
        stranded,
        truck_delivered_kwh: world.trucks.iter().map(|t| t.delivered_kwh).collect(),
        truck_capability_kwh: world.trucks.iter().map(|t| t.capability_kwh).collect(),
        delivered_fixed_kwh: world.delivered_fixed_kwh,
        station_flow,
        charged_kwh: world.charged_kwh,
        drained_kwh: world.drained_kwh,
        initial_soc: world.initial_soc,
        final_soc: evs.iter().map(|e| e.soc).collect(),
        is_ev: evs.iter().map(|e| e.is_ev).collect(),
        field: world.field,
    })
}

fn run_epoch(
    world: &mut SimWorld,
    policy: &mut dyn DispatchPolicy,
    router: &mut dyn TruckRouter,
    epoch: usize,
    rngs: &mut EpisodeRngs,
) -> Result<(), SimError> {
    if world.trucks.is_empty() {
        return Ok(());
    }
    let full_set = policy.scope() == ObsScope::Global;
    let observations: Vec<_> = (0..world.trucks.len())
        .map(|k| world.observe(k, epoch, full_set))
        .collect();
    let global = world.observe_global(epoch);
    let idle = world.idle_flags();
    let choices = policy.decide(&global, &observations, &idle, &mut rngs.policy);
    debug_assert_eq!(choices.len(), world.trucks.len());

    let mut actions = Vec::new();
    for (k, choice) in choices.iter().enumerate() {
        let Some(target) = choice else { continue };
        if !idle[k] {
            // Traveling/serving trucks keep their commitments.
            continue;
        }
        let from = world.trucks[k].pos.node;
        let dest = world.scenario.net.station_node(*target);
        let route = if from == dest {
            Some(Vec::new())
        } else {
            let ctx = RouteCtx {
                net: &world.scenario.net,
                snapshot: &world.snapshot,
                field: &world.field,
                step: world.step,
                step_min: world.scenario.timing.step_min,
                from,
                dest,
                depart_min: world.step as f64 * world.scenario.timing.step_min,
            };
            router.plan(&ctx).map(|(path, _)| path)
        };
        // An unreachable target holds the truck in place this epoch.
        actions.push((k, *target, route));
    }
    world.apply_actions(&actions, &observations)
}

fn replan_traveling_trucks(world: &mut SimWorld, router: &mut dyn TruckRouter, step: usize) {
    for k in 0..world.trucks.len() {
        let TruckPhase::Traveling { target } = world.trucks[k].phase else {
            continue;
        };
        if world.trucks[k].last_plan_step >= step {
            continue;
        }
        let (from, extra_min) = world.truck_position(k);
        let dest = world.scenario.net.station_node(target);
        let ctx = RouteCtx {
            net: &world.scenario.net,
            snapshot: &world.snapshot,
            field: &world.field,
            step,
            step_min: world.scenario.timing.step_min,
            from,
            dest,
            depart_min: step as f64 * world.scenario.timing.step_min + extra_min,
        };
        if let Some((new_tail, _)) = router.plan(&ctx) {
            let truck = &mut world.trucks[k];
            let mut route = Vec::new();
            if truck.pos.on_edge() {
                // Finish the current edge first.
                route.push(truck.pos.route[0]);
            }
            route.extend(new_tail);
            truck.pos.route = route;
            truck.last_plan_step = step;
        }
        // On failure the previous route is kept (hold-and-retry).
    }
}

fn collect_epoch_rewards(world: &SimWorld, scenario: &Scenario) -> Vec<f64> {
    let spe = scenario.steps_per_epoch();
    let step_h = scenario.step_h();
    let n_steps = scenario.n_steps();
    (0..scenario.n_epochs())
        .map(|m| {
            let lo = m * spe;
            let hi = ((m + 1) * spe).min(n_steps);
            -(lo..hi).map(|t| world.step_risk[t] * step_h).sum::<f64>()
        })
        .collect()
}
