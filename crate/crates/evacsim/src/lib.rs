//! Evacuation charging simulation and risk-aware mobile-charging-truck (MCT)
//! dispatch.
//!
//! The crate couples a deterministic discrete-time evacuation simulator
//! (road network, hazard clock, EV demand, station queues, truck service)
//! with several dispatch strategies: a greedy heuristic, offline and
//! rolling-horizon mixed-integer optimization, and a multi-agent PPO policy
//! with retrieval-based online fine-tuning and predictive rolling-horizon
//! routing. Everything is seedable and episodes replay bit-identically.

pub mod adapt;
pub mod autodiff;
pub mod cli;
pub mod demand;
pub mod hazard;
pub mod mappo;
pub mod metrics;
pub mod mip;
pub mod network;
pub mod policies;
pub mod rng;
pub mod router;
pub mod scenario;
pub mod sim;
pub mod stpm;
pub mod trace;

pub use network::{RoadNetwork, TravelTimeField};
