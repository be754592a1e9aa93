//! Command-line workflow and live-driving websocket server.

pub mod cli;
pub mod config;
pub mod protocol;
pub mod server;
pub mod session;
