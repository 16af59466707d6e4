//! Body topology, T-pose template and per-frame 3D skeletons.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orthonormality_error, WorldPoint};

/// Joint indices of the built-in body model.
pub mod joints {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_HAND: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_HAND: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_FOOT: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_FOOT: usize = 13;
    /// Root ("Torso"); never detected, synthesized from the hips.
    pub const ROOT: usize = 14;
}

/// Endpoints closer than this are treated as coincident.
pub const MIN_BONE_LENGTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("joint {0} is missing")]
    MissingJoint(usize),
    #[error("bone {0} has coincident endpoints")]
    ZeroLengthBone(String),
    #[error("unknown bone {0}")]
    UnknownBone(String),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointStatus {
    Ok,
    NoConsensus,
}

impl fmt::Display for JointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JointStatus::Ok => f.write_str("Ok"),
            JointStatus::NoConsensus => f.write_str("NoConsensus"),
        }
    }
}

/// Local coordinate class of a bone; the local x axis points along the bone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameClass {
    Left,
    Right,
    Up,
    Down,
}

impl FrameClass {
    pub const ALL: [FrameClass; 4] = [
        FrameClass::Left,
        FrameClass::Right,
        FrameClass::Up,
        FrameClass::Down,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDef {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneDef {
    pub name: String,
    pub parent_joint: usize,
    pub child_joint: usize,
    pub parent_bone: Option<String>,
    pub frame_class: FrameClass,
}

/// How the undetected root joint is placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootDef {
    pub index: usize,
    /// The root is the midpoint of these two joints.
    pub midpoint_of: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub joints: Vec<JointDef>,
    pub bones: Vec<BoneDef>,
    pub root: RootDef,
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        use joints::*;
        let names = [
            (HEAD, "Head"),
            (NECK, "Neck"),
            (R_SHOULDER, "R_Shoulder"),
            (R_ELBOW, "R_Elbow"),
            (R_HAND, "R_Hand"),
            (L_SHOULDER, "L_Shoulder"),
            (L_ELBOW, "L_Elbow"),
            (L_HAND, "L_Hand"),
            (R_HIP, "R_Hip"),
            (R_KNEE, "R_Knee"),
            (R_FOOT, "R_Foot"),
            (L_HIP, "L_Hip"),
            (L_KNEE, "L_Knee"),
            (L_FOOT, "L_Foot"),
            (ROOT, "Torso"),
        ];
        let bone =
            |name: &str, a: usize, b: usize, parent: Option<&str>, class: FrameClass| BoneDef {
                name: name.to_string(),
                parent_joint: a,
                child_joint: b,
                parent_bone: parent.map(str::to_string),
                frame_class: class,
            };
        use FrameClass::*;
        let bones = vec![
            bone("torso", ROOT, NECK, None, Up),
            bone("head", NECK, HEAD, Some("torso"), Up),
            bone("r_shoulder", NECK, R_SHOULDER, Some("torso"), Right),
            bone("l_shoulder", NECK, L_SHOULDER, Some("torso"), Left),
            bone(
                "r_upper_arm",
                R_SHOULDER,
                R_ELBOW,
                Some("r_shoulder"),
                Right,
            ),
            bone("l_upper_arm", L_SHOULDER, L_ELBOW, Some("l_shoulder"), Left),
            bone("r_lower_arm", R_ELBOW, R_HAND, Some("r_upper_arm"), Right),
            bone("l_lower_arm", L_ELBOW, L_HAND, Some("l_upper_arm"), Left),
            bone("r_upper_leg", R_HIP, R_KNEE, Some("torso"), Down),
            bone("l_upper_leg", L_HIP, L_KNEE, Some("torso"), Down),
            bone("r_lower_leg", R_KNEE, R_FOOT, Some("r_upper_leg"), Down),
            bone("l_lower_leg", L_KNEE, L_FOOT, Some("l_upper_leg"), Down),
        ];
        Self {
            joints: names
                .iter()
                .map(|&(index, name)| JointDef {
                    index,
                    name: name.to_string(),
                })
                .collect(),
            bones,
            root: RootDef {
                index: ROOT,
                midpoint_of: [R_HIP, L_HIP],
            },
        }
    }
}

impl SkeletonTopology {
    /// One past the largest joint index.
    pub fn joint_count(&self) -> usize {
        self.joints.iter().map(|j| j.index + 1).max().unwrap_or(0)
    }

    pub fn joint_name(&self, index: usize) -> Option<&str> {
        self.joints
            .iter()
            .find(|j| j.index == index)
            .map(|j| j.name.as_str())
    }

    /// Every joint except the synthesized root, ascending.
    pub fn detected_joints(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .joints
            .iter()
            .map(|j| j.index)
            .filter(|&i| i != self.root.index)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn bone_index(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    pub fn bone(&self, name: &str) -> Result<&BoneDef, SkeletonError> {
        self.bones
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| SkeletonError::UnknownBone(name.to_string()))
    }

    /// Index of each bone's parent bone.
    pub fn parent_indices(&self) -> Vec<Option<usize>> {
        self.bones
            .iter()
            .map(|b| b.parent_bone.as_deref().and_then(|p| self.bone_index(p)))
            .collect()
    }

    /// Bone indices ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Result<Vec<usize>, SkeletonError> {
        let parents = self.parent_indices();
        let n = self.bones.len();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let before = order.len();
            for i in 0..n {
                if placed[i] {
                    continue;
                }
                if parents[i].is_none_or(|p| placed[p]) {
                    placed[i] = true;
                    order.push(i);
                }
            }
            if order.len() == before {
                return Err(SkeletonError::InvalidTopology("bone parent cycle".into()));
            }
        }
        Ok(order)
    }

    /// Number of parent links from a bone to the root bone.
    pub fn depth(&self, bone: usize) -> usize {
        let parents = self.parent_indices();
        let mut d = 0;
        let mut cur = bone;
        while let Some(p) = parents[cur] {
            d += 1;
            cur = p;
            if d > self.bones.len() {
                break;
            }
        }
        d
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        let invalid = |m: String| Err(SkeletonError::InvalidTopology(m));
        let mut seen = std::collections::BTreeSet::new();
        for j in &self.joints {
            if !seen.insert(j.index) {
                return invalid(format!("duplicate joint index {}", j.index));
            }
        }
        if !seen.contains(&self.root.index) {
            return invalid("root joint not defined".into());
        }
        for m in self.root.midpoint_of {
            if !seen.contains(&m) || m == self.root.index {
                return invalid(format!("root anchor {m} is not a detected joint"));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.bones {
            if !names.insert(b.name.as_str()) {
                return invalid(format!("duplicate bone {}", b.name));
            }
            if !seen.contains(&b.parent_joint) || !seen.contains(&b.child_joint) {
                return invalid(format!("bone {} references an unknown joint", b.name));
            }
            if b.parent_joint == b.child_joint {
                return invalid(format!("bone {} has identical endpoints", b.name));
            }
            if let Some(p) = &b.parent_bone {
                if self.bone_index(p).is_none() {
                    return invalid(format!("bone {} has unknown parent {p}", b.name));
                }
            }
        }
        let roots = self
            .bones
            .iter()
            .filter(|b| b.parent_bone.is_none())
            .count();
        if roots != 1 {
            return invalid(format!("expected exactly one root bone, found {roots}"));
        }
        self.topological_order()?;
        Ok(())
    }

    /// Places the root joint at the midpoint of its anchors when both are known.
    pub fn synthesize_root(&self, skeleton: &mut Skeleton3D) {
        let [a, b] = self.root.midpoint_of;
        match (skeleton.position(a), skeleton.position(b)) {
            (Some(pa), Some(pb)) => {
                skeleton.set(self.root.index, Point3::from((pa.coords + pb.coords) * 0.5))
            }
            _ => skeleton.clear(self.root.index),
        }
    }
}

/// One frame's 3D joints. A joint has status `Ok` exactly when it has a position.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton3D {
    pub frame: u64,
    positions: Vec<Option<WorldPoint>>,
}

impl Skeleton3D {
    pub fn empty(frame: u64, joint_count: usize) -> Self {
        Self {
            frame,
            positions: vec![None; joint_count],
        }
    }

    pub fn from_positions(frame: u64, positions: Vec<Option<WorldPoint>>) -> Self {
        Self { frame, positions }
    }

    pub fn joint_count(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, idx: usize) -> Option<WorldPoint> {
        self.positions.get(idx).copied().flatten()
    }

    pub fn positions(&self) -> &[Option<WorldPoint>] {
        &self.positions
    }

    pub fn status(&self, idx: usize) -> JointStatus {
        if self.position(idx).is_some() {
            JointStatus::Ok
        } else {
            JointStatus::NoConsensus
        }
    }

    pub fn set(&mut self, idx: usize, p: WorldPoint) {
        if idx >= self.positions.len() {
            self.positions.resize(idx + 1, None);
        }
        self.positions[idx] = Some(p);
    }

    pub fn clear(&mut self, idx: usize) {
        if let Some(slot) = self.positions.get_mut(idx) {
            *slot = None;
        }
    }

    /// Applies `f` to every present joint.
    pub fn map_positions(&self, f: impl Fn(&WorldPoint) -> WorldPoint) -> Self {
        Self {
            frame: self.frame,
            positions: self.positions.iter().map(|p| p.as_ref().map(&f)).collect(),
        }
    }
}

/// Unit vector from a bone's parent joint to its child joint.
pub fn bone_vector(
    skeleton: &Skeleton3D,
    bone: &str,
    topology: &SkeletonTopology,
) -> Result<Vector3<f64>, SkeletonError> {
    let def = topology.bone(bone)?;
    bone_vector_of(skeleton, def)
}

pub(crate) fn bone_vector_of(
    skeleton: &Skeleton3D,
    def: &BoneDef,
) -> Result<Vector3<f64>, SkeletonError> {
    let a = skeleton
        .position(def.parent_joint)
        .ok_or(SkeletonError::MissingJoint(def.parent_joint))?;
    let b = skeleton
        .position(def.child_joint)
        .ok_or(SkeletonError::MissingJoint(def.child_joint))?;
    let d = b - a;
    let len = d.norm();
    if len < MIN_BONE_LENGTH {
        return Err(SkeletonError::ZeroLengthBone(def.name.clone()));
    }
    Ok(d / len)
}

/// Rest pose: per-bone rest direction and per-class local-to-global frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TPoseTemplate {
    pub rest_direction: BTreeMap<String, Vector3<f64>>,
    pub frame_rotation: BTreeMap<FrameClass, Matrix3<f64>>,
}

/// Columns are the class's local x, y, z axes in global coordinates.
fn class_frame(class: FrameClass) -> Matrix3<f64> {
    let (x, y) = match class {
        FrameClass::Left => (Vector3::x(), -Vector3::z()),
        FrameClass::Right => (-Vector3::x(), -Vector3::z()),
        FrameClass::Up => (Vector3::y(), -Vector3::x()),
        FrameClass::Down => (-Vector3::y(), Vector3::x()),
    };
    Matrix3::from_columns(&[x, y, x.cross(&y)])
}

/// Built-in T pose: arms horizontal, legs down, torso and head up. Global
/// frame is `+y` up with `+x` toward the character's left.
pub fn default_template() -> TPoseTemplate {
    TPoseTemplate::from_classes(&SkeletonTopology::default())
}

impl TPoseTemplate {
    /// Template whose rest directions follow each bone's class x axis.
    pub fn from_classes(topology: &SkeletonTopology) -> Self {
        let frame_rotation: BTreeMap<FrameClass, Matrix3<f64>> = FrameClass::ALL
            .iter()
            .map(|&c| (c, class_frame(c)))
            .collect();
        let rest_direction = topology
            .bones
            .iter()
            .map(|b| {
                (
                    b.name.clone(),
                    frame_rotation[&b.frame_class].column(0).into_owned(),
                )
            })
            .collect();
        Self {
            rest_direction,
            frame_rotation,
        }
    }

    pub fn frame(&self, class: FrameClass) -> &Matrix3<f64> {
        &self.frame_rotation[&class]
    }

    pub fn rest(&self, bone: &str) -> Option<&Vector3<f64>> {
        self.rest_direction.get(bone)
    }

    pub fn validate(&self, topology: &SkeletonTopology) -> Result<(), SkeletonError> {
        let invalid = |m: String| Err(SkeletonError::InvalidTemplate(m));
        for class in FrameClass::ALL {
            let Some(r) = self.frame_rotation.get(&class) else {
                return invalid(format!("missing frame for {class:?}"));
            };
            if orthonormality_error(r) > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
                return invalid(format!("frame for {class:?} is not a rotation"));
            }
        }
        for b in &topology.bones {
            let Some(d) = self.rest_direction.get(&b.name) else {
                return invalid(format!("missing rest direction for {}", b.name));
            };
            if (d.norm() - 1.0).abs() > 1e-9 {
                return invalid(format!("rest direction of {} is not unit", b.name));
            }
            let axis = self.frame_rotation[&b.frame_class].column(0).into_owned();
            if (axis - d).norm() > 1e-9 {
                return invalid(format!(
                    "rest direction of {} disagrees with its class",
                    b.name
                ));
            }
        }
        Ok(())
    }
}
