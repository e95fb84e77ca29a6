//! Command-line and HTTP front ends for `optidiv-core`.

pub mod commands;
pub mod service;
