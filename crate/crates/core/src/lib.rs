pub mod action;
pub mod agent;
pub mod belief;
pub mod env;
pub mod error;
pub mod exec;
pub mod features;
pub mod grid;
pub mod learn;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod runner;

pub use action::{Action, ActionMask};
pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::{Cell, Grid};
