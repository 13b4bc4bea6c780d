//! Discrete-time evacuation world: station queues, truck movement and
//! service, risk accrual, and the decision-epoch environment interface.

pub mod engine;
pub mod episode;
pub mod state;

pub use engine::{SimError, SimWorld, StationRow, TruckRow};
pub use episode::{run_episode, EpisodeResult};
pub use state::{CandidateStation, GlobalState, Observation, TruckPhase};
