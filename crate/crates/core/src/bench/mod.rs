//! Synthetic worlds, leave-last-out evaluation, diagnostics and benchmarks.

pub mod eval;
pub mod metrics;
pub mod scaling;
pub mod synth;
pub mod trend;
