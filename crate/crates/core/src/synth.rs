//! Synthetic capture rig, parametric motions and an independent DLT
//! triangulation oracle.
//!
//! The world origin sits at mid-stature: the floor is at `y = -850` mm so a
//! 1700 mm figure is centered in the default search volume.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::estimator::{
    CameraRig, JointObservation, JointObservationFrame, Keypoint, ViewKeypoints,
};
use crate::geometry::{project, CameraParams, WorldPoint};
use crate::skeleton::{default_template, joints, Skeleton3D, SkeletonTopology, TPoseTemplate};

pub const STATURE_MM: f64 = 1700.0;
pub const FLOOR_Y: f64 = -850.0;
pub const RING_RADIUS_MM: f64 = 3000.0;
pub const CAMERA_HEIGHT_MM: f64 = 1500.0;
pub const CAMERA_COUNT: usize = 5;
pub const FOCAL_PX: f64 = 1100.0;
pub const RESOLUTION: (u32, u32) = (1920, 1080);
pub const FPS: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("frame count must be at least 1")]
    NoFrames,
    #[error("triangulation is rank deficient")]
    RankDeficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    TPoseStatic,
    Walk,
    ArmWave,
    Squat,
}

impl Preset {
    pub const NAMES: [&'static str; 4] = ["tpose-static", "walk", "arm-wave", "squat"];

    pub fn from_name(name: &str) -> Result<Self, SynthError> {
        match name {
            "tpose-static" => Ok(Preset::TPoseStatic),
            "walk" => Ok(Preset::Walk),
            "arm-wave" => Ok(Preset::ArmWave),
            "squat" => Ok(Preset::Squat),
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::TPoseStatic => "tpose-static",
            Preset::Walk => "walk",
            Preset::ArmWave => "arm-wave",
            Preset::Squat => "squat",
        }
    }
}

/// Bone lengths as fractions of stature (head joint to foot joint).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportions {
    pub torso: f64,
    pub head: f64,
    pub shoulder: f64,
    pub upper_arm: f64,
    pub lower_arm: f64,
    pub upper_leg: f64,
    pub lower_leg: f64,
    /// Half the distance between the hip joints.
    pub hip_half_width: f64,
}

impl Proportions {
    pub fn for_stature(stature: f64) -> Self {
        Self {
            torso: 0.35 * stature,
            head: 0.15 * stature,
            shoulder: 0.105 * stature,
            upper_arm: 0.17 * stature,
            lower_arm: 0.155 * stature,
            upper_leg: 0.25 * stature,
            lower_leg: 0.25 * stature,
            hip_half_width: 0.06 * stature,
        }
    }

    pub fn length(&self, bone: &str) -> Option<f64> {
        Some(match bone {
            "torso" => self.torso,
            "head" => self.head,
            "r_shoulder" | "l_shoulder" => self.shoulder,
            "r_upper_arm" | "l_upper_arm" => self.upper_arm,
            "r_lower_arm" | "l_lower_arm" => self.lower_arm,
            "r_upper_leg" | "l_upper_leg" => self.upper_leg,
            "r_lower_leg" | "l_lower_leg" => self.lower_leg,
            _ => return None,
        })
    }
}

fn rx(deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), deg.to_radians()).into_inner()
}

fn ry(deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), deg.to_radians()).into_inner()
}

fn rz(deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).into_inner()
}

/// Local rotations (global axes, relative to the parent) for one instant.
/// Legs hang from an unrotated pelvis rather than from the torso.
#[derive(Debug, Clone)]
struct Articulation {
    root_xz: (f64, f64),
    bob: f64,
    local: Vec<(&'static str, Matrix3<f64>)>,
}

impl Articulation {
    fn rest() -> Self {
        Self {
            root_xz: (0.0, 0.0),
            bob: 0.0,
            local: Vec::new(),
        }
    }

    fn get(&self, bone: &str) -> Matrix3<f64> {
        self.local
            .iter()
            .find(|(n, _)| *n == bone)
            .map_or(Matrix3::identity(), |(_, m)| *m)
    }
}

fn articulate(preset: Preset, t: f64) -> Articulation {
    match preset {
        Preset::TPoseStatic => Articulation::rest(),
        Preset::Walk => {
            let phase = TAU * t / 1.1;
            let swing = |p: f64| 25.0 * p.sin();
            let knee = |p: f64| 8.0 + 30.0 * (0.5 + 0.5 * (p + PI / 2.0).sin()).powi(2);
            let (r, l) = (phase, phase + PI);
            Articulation {
                root_xz: (60.0 * (TAU * t / 4.0).sin(), 350.0 * (TAU * t / 6.0).sin()),
                bob: 15.0 * (2.0 * phase).cos(),
                local: vec![
                    ("torso", rx(4.0 + 2.0 * (2.0 * phase).sin())),
                    ("head", rx(3.0)),
                    ("r_shoulder", rz(-5.0)),
                    ("l_shoulder", rz(5.0)),
                    ("r_upper_arm", rx(-18.0 * l.sin()) * rz(78.0)),
                    ("l_upper_arm", rx(-18.0 * r.sin()) * rz(-78.0)),
                    ("r_lower_arm", ry(15.0 + 10.0 * (1.0 + l.sin()))),
                    ("l_lower_arm", ry(-(15.0 + 10.0 * (1.0 + r.sin())))),
                    ("r_upper_leg", rx(-swing(r))),
                    ("l_upper_leg", rx(-swing(l))),
                    ("r_lower_leg", rx(knee(r))),
                    ("l_lower_leg", rx(knee(l))),
                ],
            }
        }
        Preset::ArmWave => {
            let wave = (TAU * t / 1.0).sin();
            let sway = (TAU * t / 3.0).sin();
            Articulation {
                root_xz: (40.0 * sway, 0.0),
                bob: 0.0,
                local: vec![
                    ("torso", rz(-3.0 * sway)),
                    ("head", rz(5.0 * sway)),
                    ("r_upper_arm", rz(-60.0) * rx(-10.0)),
                    ("r_lower_arm", rz(-(30.0 + 40.0 * wave))),
                    ("l_upper_arm", rz(-80.0)),
                    ("l_lower_arm", ry(-20.0)),
                    ("r_upper_leg", rz(-4.0)),
                    ("l_upper_leg", rz(4.0)),
                ],
            }
        }
        Preset::Squat => {
            let s = 0.5 - 0.5 * (TAU * t / 3.0).cos();
            Articulation {
                root_xz: (0.0, 0.0),
                bob: 0.0,
                local: vec![
                    ("torso", rx(35.0 * s)),
                    ("head", rx(-20.0 * s)),
                    ("r_upper_arm", rx(-40.0 * s) * rz(70.0)),
                    ("l_upper_arm", rx(-40.0 * s) * rz(-70.0)),
                    ("r_lower_arm", ry(10.0 + 20.0 * s)),
                    ("l_lower_arm", ry(-(10.0 + 20.0 * s))),
                    ("r_upper_leg", rx(-95.0 * s) * rz(-6.0)),
                    ("l_upper_leg", rx(-95.0 * s) * rz(6.0)),
                    ("r_lower_leg", rx(105.0 * s)),
                    ("l_lower_leg", rx(105.0 * s)),
                ],
            }
        }
    }
}

/// Builds joint positions by chaining rotations from the root, then lifts the
/// figure so its lowest foot rests on the floor.
fn build_pose(
    art: &Articulation,
    frame: u64,
    proportions: &Proportions,
    topology: &SkeletonTopology,
    template: &TPoseTemplate,
) -> Skeleton3D {
    let order = topology.topological_order().expect("built-in topology");
    let parents = topology.parent_indices();
    let mut acc = vec![Matrix3::identity(); topology.bones.len()];
    let mut pos: Vec<Option<WorldPoint>> = vec![None; topology.joint_count()];
    let root = Point3::new(art.root_xz.0, 0.0, art.root_xz.1);
    pos[joints::ROOT] = Some(root);
    let hip = Vector3::new(proportions.hip_half_width, 0.0, 0.0);
    pos[joints::R_HIP] = Some(root - hip);
    pos[joints::L_HIP] = Some(root + hip);
    for b in order {
        let def = &topology.bones[b];
        let is_leg = def.name.ends_with("_upper_leg");
        let parent = match parents[b] {
            Some(p) if !is_leg => acc[p],
            _ => Matrix3::identity(),
        };
        acc[b] = parent * art.get(&def.name);
        let dir = acc[b] * template.rest(&def.name).expect("rest direction");
        let len = proportions.length(&def.name).expect("known bone");
        let start = pos[def.parent_joint].expect("parent joint placed first");
        pos[def.child_joint] = Some(start + dir * len);
    }
    let lowest = [joints::R_FOOT, joints::L_FOOT]
        .iter()
        .map(|&j| pos[j].expect("feet placed").y)
        .fold(f64::INFINITY, f64::min);
    let lift = Vector3::new(0.0, FLOOR_Y - lowest + art.bob.max(0.0), 0.0);
    Skeleton3D::from_positions(
        frame,
        pos.into_iter().map(|p| p.map(|p| p + lift)).collect(),
    )
}

/// The template T pose at the given stature, feet on the floor.
pub fn tpose_skeleton(stature: f64) -> Skeleton3D {
    build_pose(
        &Articulation::rest(),
        0,
        &Proportions::for_stature(stature),
        &SkeletonTopology::default(),
        &default_template(),
    )
}

/// Five cameras evenly spaced on the ring, all aimed at the volume center.
pub fn ring_cameras() -> Vec<CameraParams> {
    let k = Matrix3::new(
        FOCAL_PX,
        0.0,
        RESOLUTION.0 as f64 / 2.0,
        0.0,
        FOCAL_PX,
        RESOLUTION.1 as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    );
    (0..CAMERA_COUNT)
        .map(|i| {
            let a = i as f64 * TAU / CAMERA_COUNT as f64;
            let eye = Vector3::new(
                RING_RADIUS_MM * a.sin(),
                FLOOR_Y + CAMERA_HEIGHT_MM,
                RING_RADIUS_MM * a.cos(),
            );
            look_at(i as u32, k, eye, Vector3::zeros())
        })
        .collect()
}

/// Camera at `eye` looking at `target` with image `v` pointing down.
pub fn look_at(
    id: u32,
    intrinsic: Matrix3<f64>,
    eye: Vector3<f64>,
    target: Vector3<f64>,
) -> CameraParams {
    let fwd = (target - eye).normalize();
    let right = fwd.cross(&Vector3::y()).normalize();
    let down = fwd.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let t = -(r * eye);
    CameraParams::new(id, intrinsic, r, t, RESOLUTION).expect("look-at camera is valid")
}

/// A synthetic capture: rig, ground-truth motion and detector noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub preset: Preset,
    pub cameras: Vec<CameraParams>,
    pub truth: Vec<Skeleton3D>,
    pub noise_px: f64,
    pub dropout: f64,
    pub rng_seed: u64,
}

impl SyntheticScene {
    pub fn rig(&self) -> CameraRig {
        CameraRig::new(self.cameras.iter().cloned()).expect("ring camera ids are unique")
    }
}

pub fn generate_scene(
    preset: &str,
    frames: usize,
    noise_px: f64,
    dropout: f64,
    seed: u64,
) -> Result<SyntheticScene, SynthError> {
    let preset = Preset::from_name(preset)?;
    if frames == 0 {
        return Err(SynthError::NoFrames);
    }
    let topology = SkeletonTopology::default();
    let template = default_template();
    let proportions = Proportions::for_stature(STATURE_MM);
    let truth = (0..frames as u64)
        .map(|f| {
            build_pose(
                &articulate(preset, f as f64 / FPS),
                f,
                &proportions,
                &topology,
                &template,
            )
        })
        .collect();
    Ok(SyntheticScene {
        preset,
        cameras: ring_cameras(),
        truth,
        noise_px,
        dropout: dropout.clamp(0.0, 1.0),
        rng_seed: seed,
    })
}

/// Independent stream per frame so frames can be rendered in any order.
fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ frame.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Projects the truth into every view, adds pixel noise and drops joints.
/// Kept joints get confidence 1.
pub fn render_frame(scene: &SyntheticScene, frame_index: usize) -> JointObservationFrame {
    let skeleton = &scene.truth[frame_index];
    let mut rng = frame_rng(scene.rng_seed, skeleton.frame);
    let noise = Normal::new(0.0, scene.noise_px.max(0.0)).expect("finite noise");
    let detected = SkeletonTopology::default().detected_joints();
    let views = scene
        .cameras
        .iter()
        .map(|cam| {
            let mut kps = Vec::with_capacity(detected.len());
            for &j in &detected {
                let drop_draw: f64 = rng.random();
                let du = noise.sample(&mut rng);
                let dv = noise.sample(&mut rng);
                let Some(p) = skeleton.position(j) else {
                    continue;
                };
                if drop_draw < scene.dropout {
                    continue;
                }
                let Ok(px) = project(&p, cam) else { continue };
                kps.push(Keypoint {
                    idx: j,
                    u: px.x + du,
                    v: px.y + dv,
                    c: 1.0,
                });
            }
            ViewKeypoints {
                view_id: cam.id,
                joints: kps,
            }
        })
        .collect();
    JointObservationFrame {
        frame: skeleton.frame,
        views,
    }
}

pub fn render_observations(scene: &SyntheticScene) -> Vec<JointObservationFrame> {
    (0..scene.truth.len())
        .map(|i| render_frame(scene, i))
        .collect()
}

/// Linear least-squares triangulation. Each view contributes the two rows
/// `u·P₃ − P₁` and `v·P₃ − P₂` of the stacked system `A [X; 1] = 0`, solved
/// for the inhomogeneous `X` by SVD.
pub fn dlt_triangulate(
    observations: &[JointObservation],
    cameras: &CameraRig,
) -> Result<WorldPoint, SynthError> {
    let usable: Vec<(&JointObservation, &CameraParams)> = observations
        .iter()
        .filter_map(|o| cameras.get(o.view_id).map(|c| (o, c)))
        .collect();
    if usable.len() < 2 {
        return Err(SynthError::RankDeficient);
    }
    let rows = usable.len() * 2;
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, (obs, cam)) in usable.iter().enumerate() {
        let mut p = nalgebra::Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(cam.intrinsic * cam.rotation));
        p.set_column(3, &(cam.intrinsic * cam.translation));
        for (k, coord) in [obs.pixel.x, obs.pixel.y].into_iter().enumerate() {
            let row = p.row(2) * coord - p.row(k);
            // normalise each equation so views weigh equally
            let scale = row.fixed_view::<1, 3>(0, 0).norm();
            let r = 2 * i + k;
            for c in 0..3 {
                a[(r, c)] = row[c] / scale;
            }
            b[r] = -row[3] / scale;
        }
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.max();
    if max <= 0.0 || sv.min() / max < 1e-9 {
        return Err(SynthError::RankDeficient);
    }
    let x = svd.solve(&b, 0.0).map_err(|_| SynthError::RankDeficient)?;
    Ok(Point3::new(x[0], x[1], x[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{bone_vector, JointStatus};

    #[test]
    fn tpose_preset_matches_template() {
        let scene = generate_scene("tpose-static", 1, 0.0, 0.0, 1).unwrap();
        let s = &scene.truth[0];
        let tpl = default_template();
        let topo = SkeletonTopology::default();
        for b in &topo.bones {
            let v = bone_vector(s, &b.name, &topo).unwrap();
            assert!(
                (v - tpl.rest(&b.name).unwrap()).norm() < 1e-12,
                "{}",
                b.name
            );
        }
        let head = s.position(joints::HEAD).unwrap();
        let foot = s.position(joints::L_FOOT).unwrap();
        assert!((head.y - foot.y - STATURE_MM).abs() < 1e-9);
        assert!((foot.y - FLOOR_Y).abs() < 1e-9);
        assert_eq!(*s, tpose_skeleton(STATURE_MM));
    }

    #[test]
    fn unknown_preset_and_zero_frames() {
        assert_eq!(
            generate_scene("moonwalk", 1, 0.0, 0.0, 0),
            Err(SynthError::UnknownPreset("moonwalk".into()))
        );
        assert_eq!(
            generate_scene("walk", 0, 0.0, 0.0, 0),
            Err(SynthError::NoFrames)
        );
    }

    #[test]
    fn bone_lengths_are_constant() {
        let topo = SkeletonTopology::default();
        for name in Preset::NAMES {
            let scene = generate_scene(name, 60, 0.0, 0.0, 3).unwrap();
            let first = &scene.truth[0];
            for s in &scene.truth {
                for b in &topo.bones {
                    let len = |sk: &Skeleton3D| {
                        (sk.position(b.child_joint).unwrap() - sk.position(b.parent_joint).unwrap())
                            .norm()
                    };
                    assert!((len(s) - len(first)).abs() < 1e-9, "{name} {}", b.name);
                }
            }
        }
    }

    #[test]
    fn truth_is_visible_and_inside_default_volume() {
        let volume = crate::estimator::EstimatorConfig::default().initial_volume;
        for name in Preset::NAMES {
            let scene = generate_scene(name, 200, 0.0, 0.0, 3).unwrap();
            for s in &scene.truth {
                for p in s.positions().iter().flatten() {
                    assert!(volume.contains(p), "{name} {p}");
                    for cam in &scene.cameras {
                        assert!(cam.to_camera(p).z > 0.0);
                        let px = project(p, cam).unwrap();
                        assert!(
                            px.x > 0.0 && px.x < 1920.0 && px.y > 0.0 && px.y < 1080.0,
                            "{name} {px}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn noiseless_render_is_exact_projection() {
        let scene = generate_scene("walk", 3, 0.0, 0.0, 9).unwrap();
        let frames = render_observations(&scene);
        for (f, obs) in frames.iter().enumerate() {
            assert_eq!(obs.views.len(), 5);
            for view in &obs.views {
                let cam = &scene.cameras[view.view_id as usize];
                assert_eq!(view.joints.len(), 14);
                for k in &view.joints {
                    let px = project(&scene.truth[f].position(k.idx).unwrap(), cam).unwrap();
                    assert_eq!((k.u, k.v, k.c), (px.x, px.y, 1.0));
                }
            }
        }
    }

    #[test]
    fn full_dropout_empties_views() {
        let scene = generate_scene("walk", 2, 1.0, 1.0, 9).unwrap();
        for obs in render_observations(&scene) {
            assert!(obs.views.iter().all(|v| v.joints.is_empty()));
        }
    }

    #[test]
    fn seeded_render_is_deterministic() {
        let a = generate_scene("squat", 5, 2.0, 0.2, 77).unwrap();
        let b = generate_scene("squat", 5, 2.0, 0.2, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(render_observations(&a), render_observations(&b));
        let c = generate_scene("squat", 5, 2.0, 0.2, 78).unwrap();
        assert_ne!(render_observations(&a), render_observations(&c));
    }

    #[test]
    fn noise_has_requested_spread() {
        let scene = generate_scene("walk", 80, 2.0, 0.0, 5).unwrap();
        let mut residuals = Vec::new();
        for (f, obs) in render_observations(&scene).iter().enumerate() {
            for view in &obs.views {
                let cam = &scene.cameras[view.view_id as usize];
                for k in &view.joints {
                    let px = project(&scene.truth[f].position(k.idx).unwrap(), cam).unwrap();
                    residuals.push(k.u - px.x);
                    residuals.push(k.v - px.y);
                }
            }
        }
        assert!(residuals.len() >= 10_000);
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 2.0).abs() < 0.2, "std {std}");
    }

    #[test]
    fn dlt_two_views_exact() {
        let scene = generate_scene("tpose-static", 1, 0.0, 0.0, 0).unwrap();
        let rig = scene.rig();
        let g = Point3::new(150.0, -220.0, 310.0);
        let obs: Vec<JointObservation> = scene.cameras[..2]
            .iter()
            .map(|c| JointObservation {
                view_id: c.id,
                pixel: project(&g, c).unwrap(),
                confidence: 1.0,
            })
            .collect();
        let p = dlt_triangulate(&obs, &rig).unwrap();
        assert!((p - g).norm() < 1e-6, "{}", (p - g).norm());
        assert_eq!(
            dlt_triangulate(&obs[..1], &rig),
            Err(SynthError::RankDeficient)
        );
    }

    #[test]
    fn dlt_same_camera_twice_is_rank_deficient() {
        let scene = generate_scene("tpose-static", 1, 0.0, 0.0, 0).unwrap();
        let rig = scene.rig();
        let g = Point3::new(0.0, 0.0, 0.0);
        let px = project(&g, &scene.cameras[0]).unwrap();
        let obs = [
            JointObservation {
                view_id: 0,
                pixel: px,
                confidence: 1.0,
            },
            JointObservation {
                view_id: 0,
                pixel: px,
                confidence: 1.0,
            },
        ];
        assert_eq!(dlt_triangulate(&obs, &rig), Err(SynthError::RankDeficient));
    }

    #[test]
    fn statuses_all_ok_in_truth() {
        let scene = generate_scene("arm-wave", 4, 0.0, 0.0, 0).unwrap();
        for s in &scene.truth {
            assert!((0..15).all(|j| s.status(j) == JointStatus::Ok));
        }
    }
}
