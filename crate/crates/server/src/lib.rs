//! Experiment server, recorder sinks, scripted agents and replay for the
//! trolley-dilemma driving simulator.

pub mod agent;
pub mod catalog;
pub mod params;
pub mod replay;
pub mod server;
pub mod sink;
pub mod transport;

pub use catalog::{Catalog, ScenarioFile};
pub use server::{Server, ServerConfig};
pub use sink::{Recorder, SinkTarget};
