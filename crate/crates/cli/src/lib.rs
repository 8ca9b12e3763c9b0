//! Library surface of the command-line front end, exposed so integration
//! tests can drive config parsing and the commands directly.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;
