//! Deterministic multi-client simulation of holoproxy sessions.
//!
//! A scenario file describes the dataset, the clients, their network, scripted actions and
//! study tasks. [`run_scenario`] plays it against an embedded hub over a simulated network
//! with a virtual clock and reports convergence, task answers against brute-force oracles,
//! message counts and latency.

pub mod netsim;
pub mod oracle;
pub mod report;
pub mod run;
pub mod scenario;
pub mod synth;

pub use netsim::{Latency, NetworkProfile};
pub use oracle::{oracle_compare, oracle_order, oracle_range, TaskKind};
pub use report::{AssertionResult, LatencyHistogram, MessageCounts, ScenarioReport, TaskResult};
pub use run::{run_scenario, run_scenario_with, Instance, Plan, RunOptions};
pub use scenario::{bundled, Action, Scenario, ScenarioError, BUNDLED};
pub use synth::synthetic_cube;
