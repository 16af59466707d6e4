//! Bone rotations relative to the T-pose template.
//!
//! For every bone, in parent-before-child order:
//!
//! 1. the observed bone direction is expressed in the parent's accumulated
//!    frame and then in the bone's class coordinates,
//! 2. a frame is built from that direction and the rest x axis,
//! 3. roll about the bone axis is removed so the frame's y axis lies in the
//!    plane spanned by the bone axis and the reference y axis,
//! 4. the local rotation is conjugated back into global axes and chained onto
//!    the parent's accumulated rotation.
//!
//! Rotations act on column vectors. Emitted transforms are local: composing
//! them from the torso down and applying the product to a bone's rest
//! direction reproduces the observed bone direction.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::orthonormality_error;
use crate::skeleton::{bone_vector_of, FrameClass, Skeleton3D, SkeletonTopology, TPoseTemplate};

/// Cross-product magnitude below which two unit vectors count as parallel.
pub const PARALLEL_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetError {
    #[error("bone direction is antiparallel to the reference axis")]
    DegenerateParallel,
    #[error("topology: {0}")]
    Topology(#[from] crate::skeleton::SkeletonError),
}

/// A proper 3x3 rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneRotation {
    pub matrix: Matrix3<f64>,
}

impl BoneRotation {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn new(matrix: Matrix3<f64>) -> Self {
        Self { matrix }
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.matrix.column(0).into_owned()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.matrix.column(1).into_owned()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.matrix.column(2).into_owned()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        orthonormality_error(&self.matrix) <= tol && (self.matrix.determinant() - 1.0).abs() <= tol
    }
}

/// The left-handed basis `[x, y, y × x]` used by both sides of the bone frame.
fn bone_basis(x: &Vector3<f64>, y: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::from_columns(&[*x, *y, y.cross(x).normalize()])
}

/// Rotation taking `x_ref` onto `x_prime` about their common normal
/// `y' = x' × x_ref`, with `z' = y' × x'`.
///
/// An aligned pair yields the identity; an antiparallel pair has no defined
/// normal and is reported as [`RetargetError::DegenerateParallel`].
pub fn frame_from_bone(
    x_prime: &Vector3<f64>,
    x_ref: &Vector3<f64>,
) -> Result<BoneRotation, RetargetError> {
    let n = x_prime.cross(x_ref);
    if n.norm() < PARALLEL_EPS {
        if x_prime.dot(x_ref) > 0.0 {
            return Ok(BoneRotation::identity());
        }
        return Err(RetargetError::DegenerateParallel);
    }
    Ok(frame_about(x_prime, x_ref, &n.normalize()))
}

/// Like [`frame_from_bone`], but on degeneracy uses `secondary`
/// (orthogonalised against `x_ref`) as the common normal.
pub fn frame_from_bone_or(
    x_prime: &Vector3<f64>,
    x_ref: &Vector3<f64>,
    secondary: &Vector3<f64>,
) -> BoneRotation {
    match frame_from_bone(x_prime, x_ref) {
        Ok(r) => r,
        Err(_) => {
            let n = (secondary - x_ref * secondary.dot(x_ref)).normalize();
            frame_about(x_prime, x_ref, &n)
        }
    }
}

fn frame_about(
    x_prime: &Vector3<f64>,
    x_ref: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> BoneRotation {
    let observed = bone_basis(x_prime, normal);
    let reference = bone_basis(x_ref, normal);
    BoneRotation::new(observed * reference.transpose())
}

/// Unit vector in the plane of `axis` and `reference`, orthogonal to `axis`,
/// on the same side as `reference`. `None` when the two are parallel.
fn in_plane_axis(axis: &Vector3<f64>, reference: &Vector3<f64>) -> Option<Vector3<f64>> {
    let v = reference - axis * reference.dot(axis);
    let n = v.norm();
    (n >= PARALLEL_EPS).then(|| v / n)
}

/// The y axis a spin-free frame with x axis `x` must have, given the
/// reference frame. Falls back to the reference z axis when `x` lies along
/// the reference y axis.
pub fn spin_free_y(x: &Vector3<f64>, reference: &BoneRotation) -> Vector3<f64> {
    match in_plane_axis(x, &reference.y_axis()) {
        Some(y) => y,
        None => {
            let z = in_plane_axis(x, &reference.z_axis()).expect("reference axes are orthogonal");
            z.cross(x)
        }
    }
}

/// Rodrigues rotation of `v` about the unit `axis` by `angle`.
pub fn rodrigues(v: &Vector3<f64>, axis: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Removes roll about the bone axis.
///
/// The spin angle is the dihedral angle between the plane through the bone
/// axis and the rotated y axis and the plane through the bone axis and the
/// reference y axis. Both `+θ` and `-θ` Rodrigues rotations about the bone
/// axis are tried; the one whose y axis lands on the reference side of the
/// target plane wins. The bone axis itself is never moved.
pub fn spin_correct(rotation: &BoneRotation, parent_frame: &BoneRotation) -> BoneRotation {
    let x = rotation.x_axis();
    let y = rotation.y_axis();
    let target = spin_free_y(&x, parent_frame);
    let theta = y.cross(&target).norm().atan2(y.dot(&target));
    if theta.abs() < 1e-12 {
        return *rotation;
    }
    let axis = Unit::new_normalize(x);
    let candidate = |angle: f64| {
        let rot = Rotation3::from_axis_angle(&axis, angle);
        let m = rot.matrix() * rotation.matrix;
        let residual = (m.column(1) - target).norm();
        (BoneRotation::new(m), residual)
    };
    let (plus, rp) = candidate(theta);
    let (minus, rm) = candidate(-theta);
    let mut best = if rp <= rm { plus } else { minus };
    // the bone axis is a fixpoint of the rotation; keep it bit-exact
    best.matrix.set_column(0, &x);
    best
}

/// Expresses a class-local rotation in global axes: `R_C · R · R_Cᵀ`.
pub fn to_global(
    local: &BoneRotation,
    frame_class: FrameClass,
    template: &TPoseTemplate,
) -> BoneRotation {
    let rc = template.frame(frame_class);
    BoneRotation::new(rc * local.matrix * rc.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoneStatus {
    Ok,
    FellBack,
}

/// Rotations for every bone of one frame, indexed like `topology.bones`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainedRotations {
    /// Spin-corrected rotation in the bone's class coordinates.
    pub local_class: Vec<BoneRotation>,
    /// Local rotation in global axes, relative to the parent bone.
    pub local: Vec<BoneRotation>,
    /// Product of `local` from the root bone down to this bone.
    pub accumulated: Vec<BoneRotation>,
    pub statuses: Vec<BoneStatus>,
}

/// Walks the bone tree and builds per-bone local and accumulated rotations.
///
/// `fallback` supplies the local (global-axis) rotation for bones whose
/// direction cannot be measured; `None` means identity.
pub fn chain_rotations(
    skeleton: &Skeleton3D,
    topology: &SkeletonTopology,
    template: &TPoseTemplate,
    fallback: Option<&[BoneRotation]>,
) -> Result<ChainedRotations, RetargetError> {
    let order = topology.topological_order()?;
    let parents = topology.parent_indices();
    let n = topology.bones.len();
    let mut out = ChainedRotations {
        local_class: vec![BoneRotation::identity(); n],
        local: vec![BoneRotation::identity(); n],
        accumulated: vec![BoneRotation::identity(); n],
        statuses: vec![BoneStatus::FellBack; n],
    };
    let rest = BoneRotation::identity();
    for b in order {
        let def = &topology.bones[b];
        let parent = parents[b].map_or(Matrix3::identity(), |p| out.accumulated[p].matrix);
        let rc = template.frame(def.frame_class);
        match bone_vector_of(skeleton, def) {
            Ok(v) => {
                let in_parent = parent.transpose() * v;
                let x_local = (rc.transpose() * in_parent).normalize();
                let raw = frame_from_bone_or(&x_local, &Vector3::x(), &Vector3::y());
                let corrected = spin_correct(&raw, &rest);
                let local = to_global(&corrected, def.frame_class, template);
                out.local_class[b] = corrected;
                out.local[b] = local;
                out.statuses[b] = BoneStatus::Ok;
            }
            Err(_) => {
                let held = fallback
                    .and_then(|f| f.get(b).copied())
                    .unwrap_or_else(BoneRotation::identity);
                out.local_class[b] = BoneRotation::new(rc.transpose() * held.matrix * rc);
                out.local[b] = held;
                out.statuses[b] = BoneStatus::FellBack;
            }
        }
        out.accumulated[b] = BoneRotation::new(parent * out.local[b].matrix);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransform {
    pub name: String,
    pub status: BoneStatus,
    pub matrix: Matrix4<f64>,
}

/// Per-bone `[r 0; 0 1]` transforms of one frame, in topology bone order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransformSet {
    pub frame: u64,
    pub bones: Vec<BoneTransform>,
}

impl BoneTransformSet {
    pub fn rotation(&self, bone: usize) -> Matrix3<f64> {
        self.bones[bone]
            .matrix
            .fixed_view::<3, 3>(0, 0)
            .into_owned()
    }

    pub fn get(&self, name: &str) -> Option<&BoneTransform> {
        self.bones.iter().find(|b| b.name == name)
    }
}

/// Assembles `[r t; 0 1]` with `t = 0`.
pub fn assemble_transform(r: &BoneRotation) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.matrix);
    m[(3, 3)] = 1.0;
    m
}

/// Retargets a single frame with no history: unmeasurable bones get identity.
pub fn retarget_frame(
    skeleton: &Skeleton3D,
    topology: &SkeletonTopology,
    template: &TPoseTemplate,
) -> Result<BoneTransformSet, RetargetError> {
    retarget_with_fallback(skeleton, topology, template, None)
}

fn retarget_with_fallback(
    skeleton: &Skeleton3D,
    topology: &SkeletonTopology,
    template: &TPoseTemplate,
    fallback: Option<&[BoneRotation]>,
) -> Result<BoneTransformSet, RetargetError> {
    let chain = chain_rotations(skeleton, topology, template, fallback)?;
    let bones = topology
        .bones
        .iter()
        .enumerate()
        .map(|(i, def)| BoneTransform {
            name: def.name.clone(),
            status: chain.statuses[i],
            matrix: assemble_transform(&chain.local[i]),
        })
        .collect();
    Ok(BoneTransformSet {
        frame: skeleton.frame,
        bones,
    })
}

/// Retargets an ordered sequence, holding the previous frame's rotation for
/// bones that cannot be measured.
#[derive(Debug, Clone)]
pub struct Retargeter {
    topology: SkeletonTopology,
    template: TPoseTemplate,
    previous: Option<Vec<BoneRotation>>,
}

impl Retargeter {
    pub fn new(topology: SkeletonTopology, template: TPoseTemplate) -> Self {
        Self {
            topology,
            template,
            previous: None,
        }
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn process(&mut self, skeleton: &Skeleton3D) -> Result<BoneTransformSet, RetargetError> {
        let set = retarget_with_fallback(
            skeleton,
            &self.topology,
            &self.template,
            self.previous.as_deref(),
        )?;
        self.previous = Some(
            (0..set.bones.len())
                .map(|i| BoneRotation::new(set.rotation(i)))
                .collect(),
        );
        Ok(set)
    }
}

/// Composes local rotations down the bone tree and applies each accumulated
/// rotation to the bone's rest direction.
pub fn forward_directions(
    rotations: &[Matrix3<f64>],
    topology: &SkeletonTopology,
    template: &TPoseTemplate,
) -> Result<Vec<Vector3<f64>>, RetargetError> {
    let order = topology.topological_order()?;
    let parents = topology.parent_indices();
    let mut acc = vec![Matrix3::identity(); rotations.len()];
    let mut dirs = vec![Vector3::zeros(); rotations.len()];
    for b in order {
        let parent = parents[b].map_or(Matrix3::identity(), |p| acc[p]);
        acc[b] = parent * rotations[b];
        let rest = template.rest(&topology.bones[b].name).ok_or_else(|| {
            crate::skeleton::SkeletonError::UnknownBone(topology.bones[b].name.clone())
        })?;
        dirs[b] = acc[b] * rest;
    }
    Ok(dirs)
}
