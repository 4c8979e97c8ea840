//! Particle fluid simulation, Scene Dynamic Field rendering, and construction
//! and scoring of next-frame-selection (NFS) and temporal-coherence (TCV)
//! benchmarks.

pub mod camera;
pub mod raster;
pub mod sdf;
pub mod seed;
pub mod sim;
pub mod similarity;
pub mod trace;
pub mod benchgen;
pub mod jsonl;
pub mod evalmetrics;
pub mod sftdata;
pub mod scenes;
pub mod ingest;
pub mod integrity;
pub mod config;
pub mod pipeline;
pub mod review;
