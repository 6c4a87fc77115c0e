//! Configuration, simulation, export and self-verification.

pub mod config;
pub mod output;
pub mod run;
pub mod verify;
