//! Experiment driver for the hybrid quasicontinuum library.

pub mod config;
pub mod error;
pub mod experiments;
pub mod slope;
pub mod table;
