//! Joint localisation by iterative subdivision of a sample volume.
//!
//! Every visited cube is projected into each view. A view votes for
//! the cube when its detected keypoint falls inside the projected footprint,
//! or within `pixel_tolerance` pixels of it.
//! Cubes with fewer than `sigma` votes are pruned, cubes smaller than `delta`
//! on every axis become candidates, everything else splits into eight
//! half-size children. The joint is the mean of the candidate centers.
//!
//! The traversal runs level by level. Candidates are the surviving cubes of
//! the first level below `delta`; with `coarse_fallback` set, a level whose
//! children all fail the vote becomes the candidate set instead, so detector
//! noise coarsens the estimate rather than discarding it.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    cube_projection_region, region_contains, region_distance, CameraParams, PixelPoint, WorldPoint,
};
use crate::skeleton::{JointStatus, Skeleton3D, SkeletonTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
    #[error("duplicate camera id {0}")]
    DuplicateCamera(u32),
}

/// Axis-aligned sample region. `edges` holds `(w, h, l)` along `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: WorldPoint,
    pub edges: Vector3<f64>,
}

impl Cube {
    pub fn new(center: WorldPoint, edges: Vector3<f64>) -> Self {
        Self { center, edges }
    }

    pub fn corners(&self) -> [WorldPoint; 8] {
        let h = self.edges * 0.5;
        let c = self.center;
        std::array::from_fn(|i| {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            Point3::new(c.x + sx * h.x, c.y + sy * h.y, c.z + sz * h.z)
        })
    }

    /// The eight octants, each with exactly half the parent's edges.
    pub fn children(&self) -> [Cube; 8] {
        let edges = self.edges * 0.5;
        let q = self.edges * 0.25;
        let c = self.center;
        std::array::from_fn(|i| {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            Cube {
                center: Point3::new(c.x + sx * q.x, c.y + sy * q.y, c.z + sz * q.z),
                edges,
            }
        })
    }

    /// True when every edge is strictly below its component of `delta`.
    pub fn is_below(&self, delta: &Vector3<f64>) -> bool {
        self.edges.x < delta.x && self.edges.y < delta.y && self.edges.z < delta.z
    }

    pub fn half_diagonal(&self) -> f64 {
        self.edges.norm() * 0.5
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        let d = p - self.center;
        let h = self.edges * 0.5;
        d.x.abs() <= h.x && d.y.abs() <= h.y && d.z.abs() <= h.z
    }
}

/// Stop conditions and search volume for the subdivision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Minimum number of agreeing views.
    pub sigma: usize,
    /// Terminal cube size per axis, millimeters.
    pub delta: Vector3<f64>,
    pub initial_volume: Cube,
    pub min_confidence: f64,
    /// A keypoint within this many pixels of a cube's footprint still votes
    /// for the cube. Absorbs detector noise near octant boundaries.
    pub pixel_tolerance: f64,
    pub max_candidates: usize,
    /// When no cube below `delta` keeps `sigma` votes, settle on the deepest
    /// level that still has consensus instead of reporting no consensus.
    pub coarse_fallback: bool,
}

pub const DEFAULT_PIXEL_TOLERANCE: f64 = 3.0;

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sigma: 4,
            delta: Vector3::new(10.0, 10.0, 10.0),
            initial_volume: Cube::new(Point3::origin(), Vector3::new(4000.0, 3000.0, 4000.0)),
            min_confidence: 0.1,
            pixel_tolerance: DEFAULT_PIXEL_TOLERANCE,
            max_candidates: 100_000,
            coarse_fallback: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidConfig(m.to_string()));
        if self.sigma < 2 {
            return bad("sigma must be at least 2");
        }
        if !self.delta.iter().all(|d| d.is_finite() && *d > 0.0) {
            return bad("delta components must be positive");
        }
        let v = &self.initial_volume;
        if !v.center.coords.iter().all(|c| c.is_finite()) {
            return bad("initial volume center must be finite");
        }
        if !(v.edges.x >= self.delta.x && v.edges.y >= self.delta.y && v.edges.z >= self.delta.z) {
            return bad("initial volume edges must be at least delta");
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return bad("min_confidence must lie in [0, 1]");
        }
        if !(self.pixel_tolerance.is_finite() && self.pixel_tolerance >= 0.0) {
            return bad("pixel_tolerance must be finite and non-negative");
        }
        if self.max_candidates == 0 {
            return bad("max_candidates must be positive");
        }
        Ok(())
    }
}

/// One 2D detection of a single joint in one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointObservation {
    pub view_id: u32,
    pub pixel: PixelPoint,
    pub confidence: f64,
}

/// Cameras indexed by view id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraRig {
    cameras: BTreeMap<u32, CameraParams>,
}

impl CameraRig {
    pub fn new(cameras: impl IntoIterator<Item = CameraParams>) -> Result<Self, EstimatorError> {
        let mut map = BTreeMap::new();
        for cam in cameras {
            let id = cam.id;
            if map.insert(id, cam).is_some() {
                return Err(EstimatorError::DuplicateCamera(id));
            }
        }
        Ok(Self { cameras: map })
    }

    pub fn get(&self, id: u32) -> Option<&CameraParams> {
        self.cameras.get(&id)
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CameraParams> {
        self.cameras.values()
    }
}

/// Keypoint of one joint in one view, as stored in keypoint files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub idx: usize,
    #[serde(serialize_with = "crate::formats::fixed6")]
    pub u: f64,
    #[serde(serialize_with = "crate::formats::fixed6")]
    pub v: f64,
    #[serde(serialize_with = "crate::formats::fixed6")]
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewKeypoints {
    pub view_id: u32,
    pub joints: Vec<Keypoint>,
}

/// All detections of one frame, grouped by view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointObservationFrame {
    pub frame: u64,
    pub views: Vec<ViewKeypoints>,
}

impl JointObservationFrame {
    /// Observations of one joint across all views, in file order.
    pub fn observations_for(&self, joint: usize) -> Vec<JointObservation> {
        self.views
            .iter()
            .flat_map(|view| {
                view.joints
                    .iter()
                    .filter(move |k| k.idx == joint)
                    .map(move |k| JointObservation {
                        view_id: view.view_id,
                        pixel: PixelPoint::new(k.u, k.v),
                        confidence: k.c,
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    /// Mean of the candidate centers, present when `status` is `Ok`.
    pub position: Option<WorldPoint>,
    pub candidate_count: usize,
    /// Edge lengths of the candidate cubes. Larger than `delta` when the
    /// estimate came from a coarser level.
    pub candidate_edges: Option<Vector3<f64>>,
    /// Views that voted for at least one candidate cube.
    pub supporting_views: BTreeSet<u32>,
    pub status: JointStatus,
    /// Number of cubes evaluated during the traversal.
    pub nodes_visited: usize,
}

/// `N_Cube`: observations at or above `min_confidence` whose pixel lies inside
/// the cube's footprint in their own view. Views failing the depth test, and
/// observations of unknown views, contribute nothing.
pub fn count_votes(
    cube: &Cube,
    observations: &[JointObservation],
    cameras: &CameraRig,
    min_confidence: f64,
) -> usize {
    count_votes_within(cube, observations, cameras, min_confidence, 0.0)
}

/// [`count_votes`] with footprints grown by `pixel_tolerance` pixels.
pub fn count_votes_within(
    cube: &Cube,
    observations: &[JointObservation],
    cameras: &CameraRig,
    min_confidence: f64,
    pixel_tolerance: f64,
) -> usize {
    observations
        .iter()
        .filter(|obs| votes_for(cube, obs, cameras, min_confidence, pixel_tolerance))
        .count()
}

fn votes_for(
    cube: &Cube,
    obs: &JointObservation,
    cameras: &CameraRig,
    min_confidence: f64,
    pixel_tolerance: f64,
) -> bool {
    if obs.confidence < min_confidence {
        return false;
    }
    let Some(cam) = cameras.get(obs.view_id) else {
        return false;
    };
    match cube_projection_region(cube, cam) {
        Ok(region) if pixel_tolerance > 0.0 => {
            region_distance(&region, &obs.pixel) <= pixel_tolerance
        }
        Ok(region) => region_contains(&region, &obs.pixel),
        Err(_) => false,
    }
}

/// Locates a single joint by subdividing `config.initial_volume` one level
/// at a time.
pub fn estimate_joint(
    observations: &[JointObservation],
    cameras: &CameraRig,
    config: &EstimatorConfig,
) -> JointEstimate {
    let usable: Vec<JointObservation> = observations
        .iter()
        .filter(|o| o.confidence >= config.min_confidence && cameras.get(o.view_id).is_some())
        .copied()
        .collect();

    let mut nodes_visited = 0usize;
    let mut visit = |cube: Cube| -> Option<(Cube, Vec<u32>)> {
        nodes_visited += 1;
        let voters: Vec<u32> = usable
            .iter()
            .filter(|o| {
                votes_for(
                    &cube,
                    o,
                    cameras,
                    config.min_confidence,
                    config.pixel_tolerance,
                )
            })
            .map(|o| o.view_id)
            .collect();
        (voters.len() >= config.sigma).then_some((cube, voters))
    };

    // fewer usable views than sigma can never reach consensus
    let mut level: Vec<(Cube, Vec<u32>)> = Vec::new();
    if usable.len() >= config.sigma {
        level.extend(visit(config.initial_volume));
    }
    let mut terminal = None;
    while !level.is_empty() {
        // all cubes of a level share one size
        if level[0].0.is_below(&config.delta) {
            terminal = Some(level);
            break;
        }
        let mut next = Vec::new();
        'split: for (cube, _) in &level {
            for child in cube.children() {
                next.extend(visit(child));
                if next.len() >= config.max_candidates {
                    break 'split;
                }
            }
        }
        if next.is_empty() {
            if config.coarse_fallback {
                terminal = Some(level);
            }
            break;
        }
        level = next;
    }

    let Some(mut cubes) = terminal else {
        return JointEstimate {
            position: None,
            candidate_count: 0,
            candidate_edges: None,
            supporting_views: BTreeSet::new(),
            status: JointStatus::NoConsensus,
            nodes_visited,
        };
    };
    cubes.truncate(config.max_candidates);
    let supporting_views = cubes.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let edges = cubes[0].0.edges;
    let mut centers: Vec<WorldPoint> = cubes.iter().map(|(c, _)| c.center).collect();
    JointEstimate {
        position: Some(mean_of_candidates(&mut centers)),
        candidate_count: centers.len(),
        candidate_edges: Some(edges),
        supporting_views,
        status: JointStatus::Ok,
        nodes_visited,
    }
}

/// Unweighted mean over a canonically sorted list, so the result does not
/// depend on traversal order.
fn mean_of_candidates(candidates: &mut [WorldPoint]) -> WorldPoint {
    candidates.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    });
    let sum = candidates
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, p| acc + p.coords);
    Point3::from(sum / candidates.len() as f64)
}

/// Per-joint estimates for one frame plus the assembled skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    pub skeleton: Skeleton3D,
    /// Indexed like the topology's joints; the synthesized root has no entry.
    pub joints: Vec<Option<JointEstimate>>,
}

impl FrameEstimate {
    pub fn nodes_visited(&self) -> usize {
        self.joints.iter().flatten().map(|j| j.nodes_visited).sum()
    }
}

/// Estimates every detected joint of the topology independently and
/// synthesizes the root joint as the midpoint of its two anchor joints.
pub fn estimate_frame(
    frame: &JointObservationFrame,
    cameras: &CameraRig,
    config: &EstimatorConfig,
    topology: &SkeletonTopology,
) -> FrameEstimate {
    let detected = topology.detected_joints();
    let estimates: Vec<(usize, JointEstimate)> = detected
        .par_iter()
        .map(|&idx| {
            (
                idx,
                estimate_joint(&frame.observations_for(idx), cameras, config),
            )
        })
        .collect();

    let mut skeleton = Skeleton3D::empty(frame.frame, topology.joint_count());
    let mut joints = vec![None; topology.joint_count()];
    for (idx, est) in estimates {
        if let Some(p) = est.position {
            skeleton.set(idx, p);
        }
        joints[idx] = Some(est);
    }
    topology.synthesize_root(&mut skeleton);
    FrameEstimate { skeleton, joints }
}

pub fn estimate_skeleton(
    frame: &JointObservationFrame,
    cameras: &CameraRig,
    config: &EstimatorConfig,
    topology: &SkeletonTopology,
) -> Skeleton3D {
    estimate_frame(frame, cameras, config, topology).skeleton
}
