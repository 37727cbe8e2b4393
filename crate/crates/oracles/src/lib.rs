//! Independent scalar reference implementations.
//!
//! Everything here works on plain slices and shares no code with
//! `polarfuse-core`, so the two can check each other.

pub mod metrics;
pub mod ppfb;
pub mod softmax;
