//! Frequency simulation of an islanded microgrid with virtual synchronous
//! generator (VSG) control of an energy storage inverter.
//!
//! The plant is a small-signal load-frequency model (governor, turbine,
//! wind, solar, ESS, swing equation, secondary control). Controllers decide
//! the virtual inertia, damping and droop each tick: none, fixed, fuzzy,
//! or an online-trained fuzzy neural network. Any controller can also run
//! behind a UDP hardware-in-the-loop endpoint.

pub mod config;
pub mod controllers;
pub mod error;
pub mod fnn;
pub mod fuzzy;
pub mod hil;
pub mod metrics;
pub mod plant;
pub mod scenario;
pub mod sim;

pub use config::{Resolved, RunConfig};
pub use controllers::{build_local, ControllerKind, ControllerSettings, Observation, VirtualParams, VsgController};
pub use error::{Error, Result};
pub use metrics::{comparison_report, disturbance_metrics, rocof_series, DisturbanceMetrics, EventWindow, SimTrace};
pub use plant::{simulate_tick, ConstraintFlags, PlantInputs, PlantParams, PlantState};
pub use scenario::{builtin_scenario, InputGenerator, ScenarioSpec};
pub use sim::{run, RunOptions, RunOutcome};
