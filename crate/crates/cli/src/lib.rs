//! Command line and HTTP front end for `critter-core`.

pub mod cli;
pub mod server;
