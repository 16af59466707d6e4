use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voxmocap::formats::{AnimationReader, SkeletonReader, SkeletonRecord};
use voxmocap::retarget::BoneStatus;
use voxmocap::skeleton::{JointStatus, SkeletonTopology};
use voxmocap::synth::{generate_scene, tpose_skeleton, STATURE_MM};
use voxmocap_cli::commands;

fn voxmocap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxmocap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = voxmocap(args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Capture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Capture {
    fn new(preset: &str, frames: usize, noise: f64, dropout: f64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&[
            "synth",
            "--preset",
            preset,
            "--frames",
            &frames.to_string(),
            "--noise",
            &noise.to_string(),
            "--dropout",
            &dropout.to_string(),
            "--seed",
            "5",
            "--out",
            s(&root),
        ]);
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn reconstruct(&self, extra: &[&str]) -> String {
        let (calib, kp, out) = (
            self.path("calib.json"),
            self.path("keypoints.jsonl"),
            self.path("skeleton.jsonl"),
        );
        let mut args = vec![
            "reconstruct",
            "--calib",
            s(&calib),
            "--keypoints",
            s(&kp),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args)
    }
}

fn skeletons(path: &Path) -> Vec<SkeletonRecord> {
    SkeletonReader::open(path)
        .unwrap()
        .map(|r| r.unwrap().1)
        .collect()
}

#[test]
fn tpose_reconstructs_within_bounds() {
    let cap = Capture::new("tpose-static", 1, 0.0, 0.0);
    cap.reconstruct(&["--sigma", "4", "--delta", "10x10x10"]);
    let record = &skeletons(&cap.path("skeleton.jsonl"))[0];
    let truth = tpose_skeleton(STATURE_MM);
    assert_eq!(record.joints.len(), 15);
    for j in &record.joints {
        assert_eq!(j.status, JointStatus::Ok, "joint {}", j.name);
        let p = j.p.unwrap();
        let t = truth.position(j.idx).unwrap();
        let err = ((p[0] - t.x).powi(2) + (p[1] - t.y).powi(2) + (p[2] - t.z).powi(2)).sqrt();
        assert!(err <= 8.66, "joint {} off by {err}", j.name);
    }
}

#[test]
fn sigma_above_camera_count_warns_and_finds_nothing() {
    let cap = Capture::new("walk", 2, 0.0, 0.0);
    let stderr = cap.reconstruct(&["--sigma", "6"]);
    assert!(
        stderr.contains("warning: sigma 6 exceeds the 5 calibrated cameras"),
        "{stderr}"
    );
    for record in skeletons(&cap.path("skeleton.jsonl")) {
        assert!(record
            .joints
            .iter()
            .all(|j| j.status == JointStatus::NoConsensus && j.p.is_none()));
    }
}

#[test]
fn config_file_supplies_paths_and_parameters() {
    let cap = Capture::new("walk", 1, 0.0, 0.0);
    let cfg = voxmocap_cli::RunConfig {
        calib: Some(cap.path("calib.json")),
        keypoints: Some(cap.path("keypoints.jsonl")),
        out: Some(cap.path("from_config.jsonl")),
        ..Default::default()
    };
    let cfg_path = cap.path("run.json");
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();
    ok(&["reconstruct", "--config", s(&cfg_path), "--sigma", "6"]);
    let record = &skeletons(&cap.path("from_config.jsonl"))[0];
    assert!(record
        .joints
        .iter()
        .all(|j| j.status == JointStatus::NoConsensus));
}

#[test]
fn timing_phases_sum_to_wall_clock() {
    let cap = Capture::new("walk", 5, 1.0, 0.0);
    let anim = cap.path("anim.jsonl");
    let stderr = cap.reconstruct(&["--timing", "--animation", s(&anim)]);
    let lines: Vec<serde_json::Value> = stderr
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    for t in &lines {
        let phases: f64 = ["load_ms", "estimate_ms", "retarget_ms", "write_ms"]
            .iter()
            .map(|k| t[k].as_f64().unwrap())
            .sum();
        let wall = t["wall_ms"].as_f64().unwrap();
        assert!((phases - wall).abs() <= 0.05 * wall, "{t}");
        assert!(t["retarget_ms"].as_f64().unwrap() > 0.0);
    }
    assert_eq!(AnimationReader::open(&anim).unwrap().count(), 5);
}

#[test]
fn retarget_tpose_file_gives_identity() {
    let dir = tempfile::tempdir().unwrap();
    let skel = dir.path().join("tpose.jsonl");
    let anim = dir.path().join("anim.jsonl");
    let record =
        SkeletonRecord::from_skeleton(&tpose_skeleton(STATURE_MM), &SkeletonTopology::default());
    std::fs::write(&skel, voxmocap::formats::to_jsonl_line(&record)).unwrap();
    ok(&["retarget", "--skeleton", s(&skel), "--out", s(&anim)]);
    let text = std::fs::read_to_string(&anim).unwrap();
    let frame = AnimationReader::new(text.as_bytes(), &anim)
        .next()
        .unwrap()
        .unwrap()
        .1;
    assert_eq!(frame.bones.len(), 12);
    for bone in &frame.bones {
        assert_eq!(bone.status, BoneStatus::Ok);
        for r in 0..4 {
            for c in 0..4 {
                let expected = if r == c { 1.0 } else { 0.0 };
                assert!(
                    (bone.t[r][c] - expected).abs() < 1e-9,
                    "{} {r} {c}",
                    bone.name
                );
            }
        }
    }
    assert!(text.contains(r#""T":[[1.000000,0.000000,0.000000,0.000000],"#));
}

#[test]
fn retarget_holds_missing_bones() {
    let cap = Capture::new("arm-wave", 3, 0.0, 0.0);
    let topo = SkeletonTopology::default();
    let scene = generate_scene("arm-wave", 3, 0.0, 0.0, 5).unwrap();
    let mut records: Vec<SkeletonRecord> = scene
        .truth
        .iter()
        .map(|t| SkeletonRecord::from_skeleton(t, &topo))
        .collect();
    let hand = &mut records[2].joints[voxmocap::skeleton::joints::L_HAND];
    hand.status = JointStatus::NoConsensus;
    hand.p = None;
    let skel = cap.path("holes.jsonl");
    let lines: String = records
        .iter()
        .map(voxmocap::formats::to_jsonl_line)
        .collect();
    std::fs::write(&skel, lines).unwrap();
    let anim = cap.path("holes_anim.jsonl");
    ok(&["retarget", "--skeleton", s(&skel), "--out", s(&anim)]);
    let frames: Vec<_> = AnimationReader::open(&anim)
        .unwrap()
        .map(|r| r.unwrap().1)
        .collect();
    let b = topo.bone_index("l_lower_arm").unwrap();
    assert_eq!(frames[2].bones[b].status, BoneStatus::FellBack);
    assert_eq!(frames[2].bones[b].t, frames[1].bones[b].t);
}

#[test]
fn eval_reports_zero_for_truth_and_uniform_offsets() {
    let cap = Capture::new("walk", 4, 0.0, 0.0);
    let truth = cap.path("truth.jsonl");
    let report_path = cap.path("self.json");
    ok(&[
        "eval",
        "--skeleton",
        s(&truth),
        "--truth",
        s(&truth),
        "--out",
        s(&report_path),
    ]);
    let report = commands::eval(&truth, &truth, None, &report_path).unwrap();
    assert_eq!(report.sequence_mean_3d, 0.0);
    assert!(report.per_frame_3d.iter().all(|d| *d == 0.0));
    assert_eq!(report.joint_count, 4 * 15);
    let csv = std::fs::read_to_string(commands::csv_path(&report_path)).unwrap();
    assert!(
        csv.starts_with("frame,d3\n0,0.000000\n1,0.000000\n"),
        "{csv}"
    );

    let mut shifted = String::new();
    for mut record in skeletons(&truth) {
        for j in &mut record.joints {
            if let Some(p) = &mut j.p {
                p[0] += 5.0;
            }
        }
        shifted.push_str(&voxmocap::formats::to_jsonl_line(&record));
    }
    let shifted_path = cap.path("shifted.jsonl");
    std::fs::write(&shifted_path, shifted).unwrap();
    let report = commands::eval(&shifted_path, &truth, None, &cap.path("shift.json")).unwrap();
    assert!((report.sequence_mean_3d - 5.0).abs() < 1e-9);
}

#[test]
fn eval_of_noiseless_reconstruction_is_within_cube_bound() {
    let cap = Capture::new("walk", 10, 0.0, 0.0);
    cap.reconstruct(&[]);
    let report_path = cap.path("report.json");
    ok(&[
        "eval",
        "--skeleton",
        s(&cap.path("skeleton.jsonl")),
        "--truth",
        s(&cap.path("truth.jsonl")),
        "--calib",
        s(&cap.path("calib.json")),
        "--keypoints",
        s(&cap.path("keypoints.jsonl")),
        "--out",
        s(&report_path),
    ]);
    let report: voxmocap::ErrorReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(
        report.sequence_mean_3d <= 8.66,
        "{}",
        report.sequence_mean_3d
    );
    assert_eq!(report.per_view_2d.len(), 5);
    assert!(report.per_view_2d.values().all(|e| *e < 3.0));
}

#[test]
fn misaligned_streams_exit_with_three() {
    let cap = Capture::new("walk", 3, 0.0, 0.0);
    let truth = cap.path("truth.jsonl");
    let text = std::fs::read_to_string(&truth).unwrap();
    let short = cap.path("short.jsonl");
    std::fs::write(
        &short,
        text.lines()
            .take(2)
            .map(|l| format!("{l}\n"))
            .collect::<String>(),
    )
    .unwrap();
    let out = voxmocap(&[
        "eval",
        "--skeleton",
        s(&short),
        "--truth",
        s(&truth),
        "--out",
        s(&cap.path("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame mismatch"));
}

#[test]
fn malformed_input_exits_with_two_and_location() {
    let cap = Capture::new("walk", 2, 0.0, 0.0);
    let kp = cap.path("keypoints.jsonl");
    let mut text = std::fs::read_to_string(&kp).unwrap();
    text.push_str("{\"frame\": 2, \"views\": [oops]}\n");
    std::fs::write(&kp, text).unwrap();
    let out = voxmocap(&[
        "reconstruct",
        "--calib",
        s(&cap.path("calib.json")),
        "--keypoints",
        s(&kp),
        "--out",
        s(&cap.path("skeleton.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("keypoints.jsonl:3"), "{stderr}");

    let bad = voxmocap(&[
        "reconstruct",
        "--calib",
        s(&cap.path("missing.json")),
        "--keypoints",
        s(&kp),
        "--out",
        "x",
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let usage = voxmocap(&["reconstruct", "--delta", "10x10"]);
    assert_eq!(usage.status.code(), Some(2));
}

/// `data-joint -> (cx, cy)` for the circles of one marker group.
fn circles(svg: &str, class: &str) -> BTreeMap<usize, (f64, f64)> {
    let start = svg.find(&format!(r#"<g class="{class}""#)).unwrap();
    let group = &svg[start..start + svg[start..].find("</g>").unwrap()];
    let attr = |line: &str, name: &str| -> String {
        let from = line.find(&format!(r#"{name}=""#)).unwrap() + name.len() + 2;
        line[from..from + line[from..].find('"').unwrap()].to_string()
    };
    group
        .lines()
        .filter(|l| l.starts_with("<circle"))
        .map(|l| {
            (
                attr(l, "data-joint").parse().unwrap(),
                (
                    attr(l, "cx").parse().unwrap(),
                    attr(l, "cy").parse().unwrap(),
                ),
            )
        })
        .collect()
}

#[test]
fn overlays_mark_detections_and_reprojections() {
    let cap = Capture::new("walk", 2, 0.0, 0.0);
    let kp = cap.path("keypoints.jsonl");
    let mut text = std::fs::read_to_string(&kp).unwrap();
    // drop the head from view 0 of frame 0
    let mut first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["views"][0]["joints"]
        .as_array_mut()
        .unwrap()
        .retain(|k| k["idx"] != 0);
    let rest: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    text = format!("{}\n{rest}", serde_json::to_string(&first).unwrap());
    std::fs::write(&kp, text).unwrap();
    cap.reconstruct(&[]);

    let dir = cap.path("overlay");
    ok(&[
        "render-overlay",
        "--calib",
        s(&cap.path("calib.json")),
        "--keypoints",
        s(&kp),
        "--skeleton",
        s(&cap.path("skeleton.jsonl")),
        "--out",
        s(&dir),
    ]);
    assert_eq!(std::fs::read_dir(&dir).unwrap().count(), 10);
    for view in 0..5 {
        let svg =
            std::fs::read_to_string(dir.join(format!("frame_000000_view_{view}.svg"))).unwrap();
        assert!(svg.contains(r#"viewBox="0 0 1920 1080""#));
        let red = circles(&svg, "detected");
        let blue = circles(&svg, "reprojected");
        assert_eq!(red.contains_key(&0), view != 0);
        assert!(blue.contains_key(&0));
        for (j, (x, y)) in &red {
            let (bx, by) = blue[j];
            assert!((x - bx).hypot(y - by) < 1.0, "view {view} joint {j}");
        }
    }
}
