//! Command-line entry points and the HTTP layer of the query suggestion service.

pub mod commands;
pub mod server;
