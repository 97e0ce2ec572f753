//! Deterministic multi-vessel simulator for collaborative collision
//! avoidance on inland waterways.
//!
//! Two layers cooperate: a traffic assessment and priority protocol maps the
//! inland give-way rules onto a decision order, and a distributed
//! model-predictive controller underneath negotiates collision-free
//! trajectories by exchanging intentions through a consensus scheme. The
//! [`sim`] module ties both to a shared kinematic plant and produces fully
//! deterministic run logs; [`scenario`] holds the built-in encounter corpus.

pub mod bus;
pub mod cost;
pub mod frames;
pub mod log;
pub mod nadmm;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod tapd;
pub mod vessel;

pub use frames::{InertialState, PathState, Route, WaypointSegment};
pub use log::{LogFormat, SimLog, Summary};
pub use scenario::{Scenario, ScenarioConfig, ScenarioError};
pub use sim::{run, run_batch, run_with_mode, RunMode, SimError};
pub use vessel::{ControlAction, ControlSequence, Trajectory, VesselParams};
