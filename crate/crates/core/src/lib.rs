//! Template-based 6D pose estimation for objects never seen in training.
//!
//! An object mesh is onboarded into RGB/depth/NOCS templates; a test crop is matched against
//! them with transformer descriptors; 2D–3D correspondences are solved with PnP inside RANSAC.

pub mod geometry;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod render;
pub mod autodiff;
pub mod backbone;
pub mod net;
pub mod pipeline;
pub mod pnp;
pub mod real;
pub mod synthetic;
pub mod train;

#[cfg(test)]
mod testutil;

pub use geometry::{CameraIntrinsics, ObjectModel, Pose, Similarity, TriangleMesh, Vec2, Vec3};
pub use matcher::{Correspondence, MatcherConfig};
pub use metrics::BopResult;
pub use model::{BackboneKind, Model, ModelConfig};
pub use pipeline::{Estimator, PipelineConfig, PipelineError, PoseResult, SceneImage};
pub use pnp::{PoseEstimate, RansacConfig};
pub use render::{TemplateImage, TemplateSet};
pub use train::TrainConfig;
