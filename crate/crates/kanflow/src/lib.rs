//! File formats, experiment pipeline, and command-line interface for
//! `kanflow-core`.

pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod num;
pub mod pipeline;
pub mod report;
pub mod tables;

use std::time::Instant;

use kanflow_core::training::Clock;

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::start()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
