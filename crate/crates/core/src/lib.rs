//! Coarse-to-fine curriculum training for mesh-based flow surrogates.
//!
//! The crate coarsens unstructured meshes, transfers velocity fields between
//! resolutions, trains an adjacency-masked graph transformer under
//! configurable curricula, and scores full autoregressive rollouts.

pub mod coarsen;
pub mod curriculum;
pub mod eval;
pub mod meshkit;
pub mod model;
pub mod optim;
pub mod par;
pub mod store;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub mod cli;
