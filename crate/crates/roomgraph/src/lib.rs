//! File formats, configuration and the command-line driver around
//! [`roomgraph_core`].

pub mod commands;
pub mod config;
pub mod dataset;
pub mod io;
pub mod replay;
pub mod report;

pub use roomgraph_core as core;
