//! Biased random walks among iid elliptic conductances on Z^d: environment
//! sampling, walk simulation, regeneration structure, exact oracles and the
//! estimators built on top of them.

pub mod config;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod harness;
pub mod lattice;
pub mod linalg;
pub mod regen;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{LabError, Result};
pub use lattice::{BiasSpec, Bond, ConductanceField, Environment, Law, Move, PeriodicEnvironment, Site};
pub use rng::StreamId;
pub use walk::{LocalFunction, WalkPath, Walker};
