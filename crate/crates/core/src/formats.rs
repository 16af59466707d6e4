//! On-disk formats: calibration JSON, keypoint / skeleton / animation JSON-lines.
//!
//! Every float written by this module uses fixed six-decimal notation so that
//! emitted files are byte-stable across platforms.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector3};
use serde::de::DeserializeOwned;
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::estimator::JointObservationFrame;
use crate::geometry::{orthonormality_error, CameraParams, GeometryError};
use crate::retarget::{BoneStatus, BoneTransform, BoneTransformSet};
use crate::skeleton::{JointStatus, Skeleton3D, SkeletonTopology};

/// Rotations read from files may deviate from orthonormal by this much before
/// being re-orthonormalized; six decimals cannot hold a rotation exactly.
pub const FILE_ROTATION_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl FormatError {
    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// `{:.6}` with negative zero folded to zero.
pub fn format_fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// A float that serializes in fixed six-decimal notation.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct F6(pub f64);

impl Serialize for F6 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw =
            RawValue::from_string(format_fixed6(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn fixed6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    F6(*v).serialize(s)
}

pub fn fixed6_array<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_tuple(N)?;
    for x in v {
        seq.serialize_element(&F6(*x))?;
    }
    seq.end()
}

pub fn fixed6_matrix<S: Serializer, const R: usize, const C: usize>(
    v: &[[f64; C]; R],
    s: S,
) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_tuple(R)?;
    for row in v {
        seq.serialize_element(&F6Row(row))?;
    }
    seq.end()
}

pub fn fixed6_seq<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    F6Row(v).serialize(s)
}

pub fn fixed6_map<S: Serializer, K: Serialize>(
    v: &std::collections::BTreeMap<K, f64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_map(v.iter().map(|(k, x)| (k, F6(*x))))
}

struct F6Row<'a>(&'a [f64]);

impl Serialize for F6Row<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_tuple(self.0.len())?;
        for x in self.0 {
            seq.serialize_element(&F6(*x))?;
        }
        seq.end()
    }
}

fn fixed6_opt_array<S: Serializer>(v: &Option<[f64; 3]>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(a) => fixed6_array(a, s),
        None => s.serialize_none(),
    }
}

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn matrix3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

/// One camera in a calibration file. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub id: u32,
    #[serde(rename = "K", serialize_with = "fixed6_matrix")]
    pub k: [[f64; 3]; 3],
    #[serde(rename = "R", serialize_with = "fixed6_matrix")]
    pub r: [[f64; 3]; 3],
    #[serde(serialize_with = "fixed6_array")]
    pub t: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl From<&CameraParams> for CalibrationRecord {
    fn from(cam: &CameraParams) -> Self {
        Self {
            id: cam.id,
            k: rows3(&cam.intrinsic),
            r: rows3(&cam.rotation),
            t: [cam.translation.x, cam.translation.y, cam.translation.z],
            width: cam.resolution.0,
            height: cam.resolution.1,
        }
    }
}

/// Gram-Schmidt on the rows, keeping the first row's direction.
pub fn orthonormalize_rows(m: &Matrix3<f64>) -> Matrix3<f64> {
    let r0 = m.row(0).transpose().normalize();
    let r1 = m.row(1).transpose();
    let r1 = (r1 - r0 * r0.dot(&r1)).normalize();
    let r2 = r0.cross(&r1);
    Matrix3::from_rows(&[r0.transpose(), r1.transpose(), r2.transpose()])
}

impl CalibrationRecord {
    /// Validates and converts, re-orthonormalizing a rotation that is within
    /// [`FILE_ROTATION_TOLERANCE`] of orthonormal.
    pub fn to_camera(&self) -> Result<CameraParams, GeometryError> {
        let r = matrix3(&self.r);
        let err = orthonormality_error(&r);
        if err > FILE_ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidCamera {
                id: self.id,
                reason: format!("rotation not orthonormal (error {err:e})"),
            });
        }
        CameraParams::new(
            self.id,
            matrix3(&self.k),
            orthonormalize_rows(&r),
            Vector3::from(self.t),
            (self.width, self.height),
        )
    }
}

pub fn calibration_to_json(cameras: &[CameraParams]) -> String {
    let records: Vec<CalibrationRecord> = cameras.iter().map(CalibrationRecord::from).collect();
    let mut s = serde_json::to_string_pretty(&records).expect("calibration serializes");
    s.push('\n');
    s
}

pub fn parse_calibration(text: &str, path: &Path) -> Result<Vec<CameraParams>, FormatError> {
    let records: Vec<CalibrationRecord> = serde_json::from_str(text)
        .map_err(|e| FormatError::parse(path, e.line(), e.to_string()))?;
    records
        .iter()
        .map(|r| {
            r.to_camera()
                .map_err(|e| FormatError::parse(path, 0, e.to_string()))
        })
        .collect()
}

pub fn read_calibration(path: &Path) -> Result<Vec<CameraParams>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_calibration(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub idx: usize,
    pub name: String,
    pub status: JointStatus,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "fixed6_opt_array"
    )]
    pub p: Option<[f64; 3]>,
}

/// One skeleton frame; also the truth file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonRecord {
    pub frame: u64,
    pub joints: Vec<JointRecord>,
}

impl SkeletonRecord {
    pub fn from_skeleton(s: &Skeleton3D, topology: &SkeletonTopology) -> Self {
        let mut joints: Vec<JointRecord> = topology
            .joints
            .iter()
            .map(|j| {
                let p = s.position(j.index);
                JointRecord {
                    idx: j.index,
                    name: j.name.clone(),
                    status: s.status(j.index),
                    p: p.map(|p| [p.x, p.y, p.z]),
                }
            })
            .collect();
        joints.sort_by_key(|j| j.idx);
        Self {
            frame: s.frame,
            joints,
        }
    }

    pub fn to_skeleton(&self, joint_count: usize) -> Result<Skeleton3D, String> {
        let mut s = Skeleton3D::empty(self.frame, joint_count);
        for j in &self.joints {
            match (j.status, j.p) {
                (JointStatus::Ok, Some(p)) => s.set(j.idx, Point3::new(p[0], p[1], p[2])),
                (JointStatus::Ok, None) => {
                    return Err(format!("joint {} is Ok but has no position", j.idx))
                }
                (JointStatus::NoConsensus, _) => {}
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneRecord {
    pub name: String,
    pub status: BoneStatus,
    #[serde(rename = "T", serialize_with = "fixed6_matrix")]
    pub t: [[f64; 4]; 4],
}

/// One animation frame: per-bone row-major 4x4 transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationRecord {
    pub frame: u64,
    pub bones: Vec<BoneRecord>,
}

impl From<&BoneTransformSet> for AnimationRecord {
    fn from(set: &BoneTransformSet) -> Self {
        Self {
            frame: set.frame,
            bones: set
                .bones
                .iter()
                .map(|b| BoneRecord {
                    name: b.name.clone(),
                    status: b.status,
                    t: std::array::from_fn(|r| std::array::from_fn(|c| b.matrix[(r, c)])),
                })
                .collect(),
        }
    }
}

impl AnimationRecord {
    pub fn to_transform_set(&self) -> BoneTransformSet {
        BoneTransformSet {
            frame: self.frame,
            bones: self
                .bones
                .iter()
                .map(|b| BoneTransform {
                    name: b.name.clone(),
                    status: b.status,
                    matrix: nalgebra::Matrix4::from_fn(|r, c| b.t[r][c]),
                })
                .collect(),
        }
    }
}

/// Serializes one record as a single JSON line, newline included.
pub fn to_jsonl_line<T: Serialize>(record: &T) -> String {
    let mut s = serde_json::to_string(record).expect("record serializes");
    s.push('\n');
    s
}

pub fn write_jsonl<T: Serialize, W: Write>(
    out: &mut W,
    records: impl IntoIterator<Item = T>,
) -> io::Result<()> {
    for r in records {
        out.write_all(to_jsonl_line(&r).as_bytes())?;
    }
    Ok(())
}

/// Streaming JSON-lines reader yielding `(line_number, record)`. Blank lines
/// are skipped.
pub struct JsonlReader<R, T> {
    lines: io::Lines<R>,
    path: PathBuf,
    line: usize,
    _marker: PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<BufReader<File>, T> {
    pub fn open(path: &Path) -> Result<Self, FormatError> {
        let f = File::open(path).map_err(|e| FormatError::io(path, e))?;
        Ok(Self::new(BufReader::new(f), path))
    }
}

impl<R: BufRead, T: DeserializeOwned> JsonlReader<R, T> {
    pub fn new(reader: R, path: &Path) -> Self {
        Self {
            lines: reader.lines(),
            path: path.to_path_buf(),
            line: 0,
            _marker: PhantomData,
        }
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for JsonlReader<R, T> {
    type Item = Result<(usize, T), FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(FormatError::io(&self.path, e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&text)
                    .map(|r| (self.line, r))
                    .map_err(|e| FormatError::parse(&self.path, self.line, e.to_string())),
            );
        }
    }
}

pub type KeypointReader<R> = JsonlReader<R, JointObservationFrame>;
pub type SkeletonReader<R> = JsonlReader<R, SkeletonRecord>;
pub type AnimationReader<R> = JsonlReader<R, AnimationRecord>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{Keypoint, ViewKeypoints};

    #[test]
    fn fixed_six_decimals() {
        assert_eq!(format_fixed6(1.5), "1.500000");
        assert_eq!(format_fixed6(-0.0000001), "0.000000");
        assert_eq!(format_fixed6(-2.0), "-2.000000");
        assert_eq!(
            serde_json::to_string(&[F6(0.1), F6(1e7)]).unwrap(),
            "[0.100000,10000000.000000]"
        );
    }

    #[test]
    fn keypoint_line_format() {
        let frame = JointObservationFrame {
            frame: 3,
            views: vec![ViewKeypoints {
                view_id: 1,
                joints: vec![Keypoint {
                    idx: 0,
                    u: 10.25,
                    v: 20.0,
                    c: 1.0,
                }],
            }],
        };
        let line = to_jsonl_line(&frame);
        assert_eq!(
            line,
            "{\"frame\":3,\"views\":[{\"view_id\":1,\"joints\":[{\"idx\":0,\"u\":10.250000,\"v\":20.000000,\"c\":1.000000}]}]}\n"
        );
        let back: JointObservationFrame = serde_json::from_str(&line).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn calibration_field_names() {
        let text = r#"[{"id": 2, "K": [[1000, 0, 960], [0, 1000, 540], [0, 0, 1]],
            "R": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "t": [0, 0, 3000], "width": 1920, "height": 1080}]"#;
        let cams = parse_calibration(text, Path::new("calib.json")).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0].id, 2);
        assert_eq!(cams[0].intrinsic[(0, 2)], 960.0);
        assert_eq!(cams[0].translation.z, 3000.0);
        assert_eq!(cams[0].resolution, (1920, 1080));
        let json = calibration_to_json(&cams);
        assert!(json.contains("\"K\": ["));
        assert!(json.contains("960.000000"));
        assert_eq!(parse_calibration(&json, Path::new("x")).unwrap(), cams);
    }

    #[test]
    fn calibration_rejects_bad_rotation() {
        let text = r#"[{"id": 0, "K": [[1000, 0, 960], [0, 1000, 540], [0, 0, 1]],
            "R": [[1, 0.1, 0], [0, 1, 0], [0, 0, 1]], "t": [0, 0, 3000], "width": 1920, "height": 1080}]"#;
        assert!(parse_calibration(text, Path::new("c")).is_err());
        let missing = r#"[{"id": 0, "K": [[1000, 0, 960], [0, 1000, 540], [0, 0, 1]]}]"#;
        assert!(matches!(
            parse_calibration(missing, Path::new("c")),
            Err(FormatError::Parse { .. })
        ));
    }

    #[test]
    fn rounded_rotation_is_repaired() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, 1.0, -0.7).into_inner();
        let rounded = r.map(|v: f64| (v * 1e6).round() / 1e6);
        assert!(orthonormality_error(&rounded) > 1e-9);
        let fixed = orthonormalize_rows(&rounded);
        assert!(orthonormality_error(&fixed) < 1e-12);
        assert!((fixed - r).norm() < 1e-5);
    }

    #[test]
    fn jsonl_reader_reports_lines() {
        let text = "{\"frame\":0,\"views\":[]}\n\n{\"frame\":1,\"views\":[}\n";
        let mut reader: KeypointReader<_> =
            JsonlReader::new(text.as_bytes(), Path::new("kp.jsonl"));
        let (line, first) = reader.next().unwrap().unwrap();
        assert_eq!((line, first.frame), (1, 0));
        match reader.next().unwrap() {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(reader.next().is_none());
    }

    #[test]
    fn skeleton_record_round_trip() {
        let topo = SkeletonTopology::default();
        let mut s = Skeleton3D::empty(7, 15);
        s.set(0, Point3::new(1.0, 2.0, 3.5));
        let rec = SkeletonRecord::from_skeleton(&s, &topo);
        assert_eq!(rec.joints.len(), 15);
        let line = to_jsonl_line(&rec);
        assert!(line.contains(
            "{\"idx\":0,\"name\":\"Head\",\"status\":\"Ok\",\"p\":[1.000000,2.000000,3.500000]}"
        ));
        assert!(line.contains("{\"idx\":1,\"name\":\"Neck\",\"status\":\"NoConsensus\"}"));
        let back: SkeletonRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.to_skeleton(15).unwrap(), s);
    }
}
