//! Control-oriented combustion phasing for HCCI diesel engines.
//!
//! The crate predicts CA50 from intake-valve-closure conditions and SOI,
//! calibrates the model constants from data, and closes the loop on SOI
//! with either an adaptive observer-based controller or a static
//! model-inversion feedforward, tested against a cycle-discrete surrogate
//! plant.

pub mod analysis;
pub mod calibration;
pub mod control;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod model;
pub mod plant;
pub mod scenario;

pub use control::{
    AdaptiveController, ControlCommand, ControllerState, FeedforwardController, LyapunovMonitor,
    PhasingController, SoiBounds,
};
pub use engine::{EngineGeometry, IvcState, MixtureState};
pub use error::{Error, Result};
pub use model::{ModelParams, OperatingCondition, WiebeParams};
pub use plant::{CycleRecord, Fault, Plant, PlantConfig, PlantFidelity, TransientProfile};
