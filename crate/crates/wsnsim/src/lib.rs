//! Deterministic, seeded simulator of energy-aware multi-hop routing in
//! wireless sensor networks.
//!
//! Sensor nodes route sensed data toward a dynamically elected transmitter
//! using per-node tabular Q-learning constrained to a fused routing graph:
//! energy-inverse (MERA) weights blended with minimum-spanning-tree
//! weights. Among the cheapest candidate routes, agents prefer the one
//! minimizing the variance of on-path residual charge, keeping battery
//! drain even across the network. Shortest-path multi-hop, single-hop, and
//! LEACH baselines run under identical configurations, with M/M/1-based
//! end-to-end delay models for both on-node and cloud decision modes.
//!
//! Determinism: a run consumes one seeded RNG stream in a fixed documented
//! order, so a (config, seed) pair reproduces its report byte for byte.

pub mod baselines;
pub mod config;
pub mod delay;
pub mod driver;
pub mod energy;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod rl;
pub mod routing;
pub mod topology;

pub use config::{load_config, parse_config, preset, Protocol, SimConfig};
pub use delay::Mode;
pub use engine::{run_simulation, RunState};
pub use error::{ConfigError, SimError};
pub use metrics::{EpisodeMetrics, RunReport};
