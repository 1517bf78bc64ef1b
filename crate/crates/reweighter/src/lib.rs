//! Files, HTTP API and command line around `reweighter-core`.

pub mod cli;
pub mod io;
pub mod server;
