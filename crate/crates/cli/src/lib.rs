//! Library surface of the experiment harness; the `pbconf` binary is a thin
//! shell over these modules.

pub mod budget;
pub mod config;
pub mod report;
pub mod runner;
