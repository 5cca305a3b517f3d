//! IO, command line and websocket service around `respec-core`.

pub mod cli;
pub mod clock;
pub mod io;
pub mod service;
