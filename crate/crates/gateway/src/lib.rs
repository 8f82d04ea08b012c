//! Command line entry points and the control-monitor HTTP service.

pub mod artifacts;
pub mod cli;
pub mod server;
