//! Dispatch policies behind one common interface shared by the simulator,
//! the optimization drivers, and the learned policies.

use crate::network::StationIdx;
use crate::sim::state::{GlobalState, Observation};
use rand_chacha::ChaCha12Rng;

/// Observation scope of a policy: local policies see per-truck candidate
/// sets with periodic augmentation; global (centralized) policies always see
/// the full station set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsScope {
    Local,
    Global,
}

/// A dispatch policy chooses one target station per idle truck at each
/// decision epoch. Entries for busy trucks must be `None`; their commitments
/// are kept by the simulator. Every returned station must come from the
/// truck's observation candidate set.
pub trait DispatchPolicy {
    fn name(&self) -> &'static str;

    fn scope(&self) -> ObsScope {
        ObsScope::Local
    }

    fn decide(
        &mut self,
        global: &GlobalState,
        observations: &[Observation],
        idle: &[bool],
        rng: &mut ChaCha12Rng,
    ) -> Vec<Option<StationIdx>>;

    /// Called once before an episode starts.
    fn on_episode_start(&mut self, _seed: u64) {}

    /// Shared epoch rewards observed after the episode, for policies that
    /// learn or log; default is to ignore them.
    fn on_episode_end(&mut self, _epoch_rewards: &[f64]) {}
}

/// Greedy baseline: send each truck to the observable station with the
/// largest aggregate risk exposure R_i(t) * Q_i(t); ties by travel time,
/// then by station index.
pub struct GreedyPolicy;

/// The greedy station choice for one observation.
pub fn greedy_choice(obs: &Observation) -> StationIdx {
    assert!(!obs.candidates.is_empty());
    let mut best = &obs.candidates[0];
    for c in &obs.candidates[1..] {
        let score = c.risk * f64::from(c.queue);
        let best_score = best.risk * f64::from(best.queue);
        let better = score > best_score
            || (score == best_score
                && (c.travel_min < best.travel_min
                    || (c.travel_min == best.travel_min && c.station < best.station)));
        if better {
            best = c;
        }
    }
    best.station
}

impl DispatchPolicy for GreedyPolicy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn decide(
        &mut self,
        _global: &GlobalState,
        observations: &[Observation],
        idle: &[bool],
        _rng: &mut ChaCha12Rng,
    ) -> Vec<Option<StationIdx>> {
        observations
            .iter()
            .map(|obs| idle[obs.truck].then(|| greedy_choice(obs)))
            .collect()
    }
}
