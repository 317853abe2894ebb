//! IO, clients, training orchestration, and the CLI around `adaptasr-core`.

pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod clients;
pub mod config;
pub mod manifests;
pub mod scoring;
pub mod synthpipe;
pub mod trainer;
