//! Deterministic core of the trolley-dilemma driving simulator.
//!
//! Everything here is `no_std` + `alloc`: scenario types and their validation,
//! the `.trly` scenario language, fixed-timestep kinematics and the episode
//! state machine, decision-record line formats, aggregate statistics and the
//! newline-delimited JSON session messages. IO lives in `trolley-server`.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dsl;
pub mod geometry;
pub mod protocol;
pub mod record;
pub mod scenario;
pub mod sim;
pub mod stats;

pub use geometry::Vec2;
pub use scenario::{
    group_member_names, validate_scenario, ActorKind, ActorSpec, Corridor, Diagnostic,
    DiagnosticCode, Gender, Mode, Pose, Scenario, Severity, Side, Simulation, VictimAttributes,
};
pub use sim::{Control, EpisodePhase, EpisodeState, Outcome, SimParams, SimulationRun, VehicleState};
