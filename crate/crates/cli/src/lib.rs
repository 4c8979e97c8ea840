//! Command-line front end and review API for sdf-forge.

pub mod cli;
pub mod serve;
