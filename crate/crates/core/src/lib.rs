//! Interactive 3D segmentation refinement: every voxel is an agent that nudges
//! its foreground probability, guided by simulated clicks turned into
//! geodesic hint maps, and the shared policy is trained with advantage
//! actor-critic.

pub mod benchmark;
pub mod datagen;
pub mod env;
pub mod error;
pub mod geodesy;
pub mod metrics;
pub mod neural;
pub mod oracle;
pub mod session;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
