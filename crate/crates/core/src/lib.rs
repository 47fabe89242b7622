//! Asynchronous multi-agent grid exploration: map generation, sensing, an
//! event-driven macro-action simulator, frontier planners, a small
//! attention-free actor-critic policy with its trainer, and metrics.

pub mod engine;
pub mod experiment;
pub mod grid;
pub mod metrics;
pub mod perception;
pub mod planners;
pub mod policy;
pub mod replay;
pub mod scenario;
pub mod seeds;
pub mod training;
pub mod worldgen;
