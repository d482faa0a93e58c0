//! Experiment orchestration: collection, prediction benchmarks, closed-loop
//! runs, and report emission.

pub mod bench;
pub mod closed_loop;
pub mod collect;
pub mod log;
pub mod pipeline;
pub mod report;
pub mod sim;
