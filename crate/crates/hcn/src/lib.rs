//! Hierarchical concentration-narrowing supervision for grounded 3D
//! question answering, at desk scale.
//!
//! The pipeline: a scene is a labeled point cloud; a question names
//! target and anchor objects. [`labelgen`] derives three nested
//! object-level masks from the scene geometry (broad interest region,
//! objects of interest, target objects). [`model`] predicts the same
//! three masks phase by phase, each phase conditioned on the last, and
//! answers the question from mask-reweighted object tokens. [`train`]
//! fits the model with a weighted multi-phase loss on [`synth`]etic
//! scenes, and [`eval`] measures answer quality, mask quality, and
//! robustness to synonym perturbations. Everything is deterministic
//! given a seed.

pub mod cli;
pub mod error;
pub mod eval;
pub mod fnv;
pub mod labelgen;
pub mod model;
pub mod scene;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
