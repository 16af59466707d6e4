//! Markerless multi-view motion capture geometry.
//!
//! Given calibrated cameras and per-view 2D joint detections, [`estimator`]
//! locates each 3D joint by recursive subdivision of a search volume,
//! [`retarget`] turns the resulting skeleton into per-bone rotations against a
//! T-pose template, and [`metrics`] scores the result. [`synth`] produces
//! ground-truth scenes for testing.

pub mod estimator;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod retarget;
pub mod skeleton;
pub mod synth;

pub use estimator::{
    count_votes, count_votes_within, estimate_frame, estimate_joint, estimate_skeleton, CameraRig,
    Cube, EstimatorConfig, JointEstimate, JointObservation, JointObservationFrame,
};
pub use geometry::{
    cube_projection_region, project, region_contains, region_distance, CameraParams, ConvexRegion,
    PixelPoint, WorldPoint,
};
pub use metrics::{avg_2d_err, mean_abs_3d_err, sequence_mean, ErrorReport};
pub use retarget::{retarget_frame, BoneRotation, BoneStatus, BoneTransformSet, Retargeter};
pub use skeleton::{default_template, JointStatus, Skeleton3D, SkeletonTopology, TPoseTemplate};
