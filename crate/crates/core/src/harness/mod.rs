//! In-process federation for end-to-end tests: mock data centers and the
//! central services on loopback, driven by a simulated clock and a small
//! scenario language.

pub mod federation;
pub mod runner;
pub mod scenario;

pub use federation::{default_topology, CenterSpec, Federation, FederationConfig, FederationError, LinkResponse};
pub use runner::{federation_config, run, run_text, RunError, ScenarioReport};
pub use scenario::{parse_scenario, Scenario, ScenarioInvalid};
