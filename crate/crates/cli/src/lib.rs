//! Batch front end: one TOML config in, `run.json`, `grid.csv` and (for
//! pool-based commands) `pool.bin` out.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
