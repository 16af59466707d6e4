//! Subcommand implementations. Every stage streams JSON lines frame by frame.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use voxmocap::estimator::{estimate_frame, CameraRig, JointObservationFrame};
use voxmocap::formats::{
    calibration_to_json, read_calibration, to_jsonl_line, AnimationRecord, FormatError,
    KeypointReader, SkeletonReader, SkeletonRecord,
};
use voxmocap::geometry::{project, CameraParams};
use voxmocap::metrics::{
    comparable_joints, mean_abs_3d_err, sequence_mean, ErrorReport, MetricsError,
    ReprojectionAccumulator, ViewJoints,
};
use voxmocap::retarget::Retargeter;
use voxmocap::skeleton::{default_template, Skeleton3D, SkeletonTopology};
use voxmocap::synth::{generate_scene, render_frame};

use crate::args::SynthArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::overlay::{overlay_file_name, render_svg};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::output(path))
}

fn write_line(out: &mut impl Write, path: &Path, line: &str) -> Result<(), CliError> {
    out.write_all(line.as_bytes())
        .map_err(CliError::output(path))
}

fn finish(mut out: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    out.flush().map_err(CliError::output(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(CliError::output(path))
}

pub fn load_rig(path: &Path) -> Result<(Vec<CameraParams>, CameraRig), CliError> {
    let cameras = read_calibration(path)?;
    let rig = CameraRig::new(cameras.iter().cloned())
        .map_err(|e| FormatError::parse(path, 0, e.to_string()))?;
    Ok((cameras, rig))
}

fn read_skeleton(
    item: Option<Result<(usize, SkeletonRecord), FormatError>>,
    path: &Path,
    topology: &SkeletonTopology,
) -> Result<Option<Skeleton3D>, CliError> {
    let Some(item) = item else { return Ok(None) };
    let (line, record) = item?;
    record
        .to_skeleton(topology.joint_count())
        .map(Some)
        .map_err(|m| FormatError::parse(path, line, m).into())
}

fn frame_of<T>(x: &Option<T>, f: impl Fn(&T) -> u64) -> Option<u64> {
    x.as_ref().map(f)
}

/// Files written by [`synth`].
#[derive(Debug, Clone)]
pub struct SynthOutputs {
    pub calib: PathBuf,
    pub keypoints: PathBuf,
    pub truth: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<SynthOutputs, CliError> {
    let scene = generate_scene(
        &args.preset,
        args.frames,
        args.noise,
        args.dropout,
        args.seed,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&args.out)?;
    let paths = SynthOutputs {
        calib: args.out.join("calib.json"),
        keypoints: args.out.join("keypoints.jsonl"),
        truth: args.out.join("truth.jsonl"),
    };
    std::fs::write(&paths.calib, calibration_to_json(&scene.cameras))
        .map_err(CliError::output(&paths.calib))?;

    let topology = SkeletonTopology::default();
    let mut keypoints = create(&paths.keypoints)?;
    let mut truth = create(&paths.truth)?;
    for (i, skeleton) in scene.truth.iter().enumerate() {
        write_line(
            &mut keypoints,
            &paths.keypoints,
            &to_jsonl_line(&render_frame(&scene, i)),
        )?;
        let record = SkeletonRecord::from_skeleton(skeleton, &topology);
        write_line(&mut truth, &paths.truth, &to_jsonl_line(&record))?;
    }
    finish(keypoints, &paths.keypoints)?;
    finish(truth, &paths.truth)?;
    Ok(paths)
}

/// Wall-clock split of one reconstructed frame, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameTiming {
    pub frame: u64,
    /// Reading and parsing the keypoint record.
    pub load_ms: f64,
    pub estimate_ms: f64,
    /// Zero unless bone transforms are requested.
    pub retarget_ms: f64,
    pub write_ms: f64,
    pub wall_ms: f64,
}

impl FrameTiming {
    pub fn phase_sum(&self) -> f64 {
        self.load_ms + self.estimate_ms + self.retarget_ms + self.write_ms
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReconstructSummary {
    pub frames: usize,
    /// Detected joints without consensus, summed over frames.
    pub no_consensus: usize,
    pub timings: Vec<FrameTiming>,
}

fn ms(from: Instant, to: Instant) -> f64 {
    (to - from).as_secs_f64() * 1e3
}

/// Keypoints to skeletons, optionally also to bone transforms and overlays.
/// Warnings and timing lines go to `diag`.
pub fn reconstruct(cfg: &RunConfig, diag: &mut dyn Write) -> Result<ReconstructSummary, CliError> {
    let calib = cfg.require(&cfg.calib, "calib")?;
    let keypoints = cfg.require(&cfg.keypoints, "keypoints")?;
    let out_path = cfg.require(&cfg.out, "out")?;
    cfg.estimator
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let (cameras, rig) = load_rig(calib)?;
    if let Some(w) = cfg.sigma_warning(&rig) {
        let _ = writeln!(diag, "{w}");
    }

    let topology = SkeletonTopology::default();
    let mut reader = KeypointReader::open(keypoints)?;
    let mut out = create(out_path)?;
    let mut animation = match &cfg.animation {
        Some(p) => Some((
            create(p)?,
            p,
            Retargeter::new(topology.clone(), default_template()),
        )),
        None => None,
    };
    if let Some(dir) = &cfg.overlay {
        create_dir(dir)?;
    }

    let mut summary = ReconstructSummary::default();
    let mut unknown_views = BTreeSet::new();
    let detected = topology.detected_joints();
    loop {
        let t0 = Instant::now();
        let Some(item) = reader.next() else { break };
        let (_, frame): (usize, JointObservationFrame) = item?;
        let t1 = Instant::now();

        for view in &frame.views {
            if rig.get(view.view_id).is_none() && unknown_views.insert(view.view_id) {
                let _ = writeln!(
                    diag,
                    "warning: keypoints reference uncalibrated view {}",
                    view.view_id
                );
            }
        }
        let estimate = estimate_frame(&frame, &rig, &cfg.estimator, &topology);
        let skeleton = &estimate.skeleton;
        let t2 = Instant::now();

        let transforms = animation.as_mut().map(|(_, _, retargeter)| {
            retargeter
                .process(skeleton)
                .expect("default topology and template are valid")
        });
        let t3 = Instant::now();

        let record = SkeletonRecord::from_skeleton(skeleton, &topology);
        write_line(&mut out, out_path, &to_jsonl_line(&record))?;
        if let (Some((file, path, _)), Some(set)) = (&mut animation, &transforms) {
            write_line(file, path, &to_jsonl_line(&AnimationRecord::from(set)))?;
        }
        if let Some(dir) = &cfg.overlay {
            for cam in &cameras {
                let view = frame.views.iter().find(|v| v.view_id == cam.id);
                let path = dir.join(overlay_file_name(frame.frame, cam.id));
                std::fs::write(&path, render_svg(cam, view, skeleton, &topology))
                    .map_err(CliError::output(&path))?;
            }
        }
        let t4 = Instant::now();

        summary.frames += 1;
        summary.no_consensus += detected
            .iter()
            .filter(|&&j| skeleton.position(j).is_none())
            .count();
        let timing = FrameTiming {
            frame: frame.frame,
            load_ms: ms(t0, t1),
            estimate_ms: ms(t1, t2),
            retarget_ms: ms(t2, t3),
            write_ms: ms(t3, t4),
            wall_ms: ms(t0, t4),
        };
        if cfg.timing {
            let _ = writeln!(
                diag,
                "{}",
                serde_json::to_string(&timing).expect("timing serializes")
            );
        }
        summary.timings.push(timing);
    }
    finish(out, out_path)?;
    if let Some((file, path, _)) = animation {
        finish(file, path)?;
    }
    Ok(summary)
}

/// Skeletons to per-bone transforms, holding the last rotation of bones
/// whose joints are missing.
pub fn retarget(skeleton_path: &Path, out_path: &Path) -> Result<usize, CliError> {
    let topology = SkeletonTopology::default();
    let mut reader = SkeletonReader::open(skeleton_path)?;
    let mut retargeter = Retargeter::new(topology.clone(), default_template());
    let mut out = create(out_path)?;
    let mut frames = 0;
    while let Some(skeleton) = read_skeleton(reader.next(), skeleton_path, &topology)? {
        let set = retargeter
            .process(&skeleton)
            .expect("default topology and template are valid");
        write_line(
            &mut out,
            out_path,
            &to_jsonl_line(&AnimationRecord::from(&set)),
        )?;
        frames += 1;
    }
    finish(out, out_path)?;
    Ok(frames)
}

/// Detected keypoints and reprojected estimates of one view, keyed by joint.
fn view_pairs(
    frame: &JointObservationFrame,
    skeleton: &Skeleton3D,
    camera: &CameraParams,
    detected_joints: &[usize],
) -> (ViewJoints, ViewJoints) {
    let detected = frame
        .views
        .iter()
        .filter(|v| v.view_id == camera.id)
        .flat_map(|v| v.joints.iter())
        .map(|k| (k.idx, voxmocap::PixelPoint::new(k.u, k.v)))
        .collect();
    let reprojected = detected_joints
        .iter()
        .filter_map(|&j| Some((j, project(&skeleton.position(j)?, camera).ok()?)))
        .collect();
    (detected, reprojected)
}

/// Where [`eval`] writes its reports.
pub fn csv_path(report: &Path) -> PathBuf {
    report.with_extension("csv")
}

/// Per-frame and sequence 3D error against truth, plus per-view 2D
/// reprojection error when calibration and keypoints are given. Writes the
/// JSON report to `out` and `frame,d3` rows to [`csv_path`].
pub fn eval(
    skeleton_path: &Path,
    truth_path: &Path,
    reprojection: Option<(&Path, &Path)>,
    out: &Path,
) -> Result<ErrorReport, CliError> {
    let topology = SkeletonTopology::default();
    let detected_joints = topology.detected_joints();
    let mut estimates = SkeletonReader::open(skeleton_path)?;
    let mut truths = SkeletonReader::open(truth_path)?;
    let mut keypoints = match reprojection {
        Some((calib, kp)) => Some((load_rig(calib)?.0, KeypointReader::open(kp)?)),
        None => None,
    };

    let mut frames = Vec::new();
    let mut per_frame = Vec::new();
    let mut joint_count = 0;
    let mut accumulator = ReprojectionAccumulator::default();
    loop {
        let est = read_skeleton(estimates.next(), skeleton_path, &topology)?;
        let truth = read_skeleton(truths.next(), truth_path, &topology)?;
        let (est_frame, truth_frame) = (frame_of(&est, |s| s.frame), frame_of(&truth, |s| s.frame));
        if est_frame != truth_frame {
            return Err(CliError::mismatch("truth", est_frame, truth_frame));
        }
        let kp_frame = match &mut keypoints {
            Some((_, reader)) => {
                let next = reader.next().transpose()?.map(|(_, f)| f);
                let found = frame_of(&next, |f| f.frame);
                if found != est_frame {
                    return Err(CliError::mismatch("keypoints", est_frame, found));
                }
                next
            }
            None => None,
        };
        let (Some(est), Some(truth)) = (est, truth) else {
            break;
        };

        match mean_abs_3d_err(&est, &truth) {
            Ok(d) => {
                frames.push(est.frame);
                per_frame.push(d);
                joint_count += comparable_joints(&est, &truth);
            }
            Err(MetricsError::NoComparableJoints) => {}
            Err(e) => return Err(e.into()),
        }
        if let (Some((cameras, _)), Some(kp)) = (&keypoints, &kp_frame) {
            for cam in cameras {
                let (d, r) = view_pairs(kp, &est, cam, &detected_joints);
                accumulator.add(cam.id, &d, &r);
            }
        }
    }

    let report = ErrorReport {
        sequence_mean_3d: sequence_mean(&per_frame)?,
        frames,
        per_frame_3d: per_frame,
        per_view_2d: accumulator.means(),
        joint_count,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    std::fs::write(out, json).map_err(CliError::output(out))?;

    let csv = csv_path(out);
    let mut w = create(&csv)?;
    write_line(&mut w, &csv, "frame,d3\n")?;
    for (f, d) in report.frames.iter().zip(&report.per_frame_3d) {
        write_line(
            &mut w,
            &csv,
            &format!("{f},{}\n", voxmocap::formats::format_fixed6(*d)),
        )?;
    }
    finish(w, &csv)?;
    Ok(report)
}

/// One SVG per frame and calibrated view. Returns the number of files.
pub fn render_overlay(
    calib: &Path,
    keypoints: &Path,
    skeleton_path: &Path,
    out_dir: &Path,
) -> Result<usize, CliError> {
    let topology = SkeletonTopology::default();
    let (cameras, _) = load_rig(calib)?;
    let mut frames = KeypointReader::open(keypoints)?;
    let mut skeletons = SkeletonReader::open(skeleton_path)?;
    create_dir(out_dir)?;
    let mut written = 0;
    loop {
        let frame = frames.next().transpose()?.map(|(_, f)| f);
        let skeleton = read_skeleton(skeletons.next(), skeleton_path, &topology)?;
        let (kf, sf) = (
            frame_of(&frame, |f| f.frame),
            frame_of(&skeleton, |s| s.frame),
        );
        if kf != sf {
            return Err(CliError::mismatch("skeleton", kf, sf));
        }
        let (Some(frame), Some(skeleton)) = (frame, skeleton) else {
            break;
        };
        for cam in &cameras {
            let view = frame.views.iter().find(|v| v.view_id == cam.id);
            let path = out_dir.join(overlay_file_name(frame.frame, cam.id));
            std::fs::write(&path, render_svg(cam, view, &skeleton, &topology))
                .map_err(CliError::output(&path))?;
            written += 1;
        }
    }
    Ok(written)
}
