//! Projected conflicting-gradient surgery for multi-task optimization.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod optim;
pub mod problems;
pub mod seeding;
pub mod surgery;
pub mod telemetry;
pub mod vecmath;
pub mod verify;

pub use error::{Error, Result};
