//! Library surface of the command-line tool: configuration resolution,
//! dataset file formats, and report emission. The binary in `main.rs` wires
//! these into subcommands.

pub mod config;
pub mod ingest;
pub mod report;
