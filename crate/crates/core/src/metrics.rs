//! Absolute 3D joint error, its sequence mean, and per-view 2D reprojection error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelPoint;
use crate::skeleton::Skeleton3D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no joints are present in both inputs")]
    NoComparableJoints,
    #[error("empty sequence")]
    EmptySequence,
}

/// Mean Euclidean distance over joints present in both skeletons, mm.
pub fn mean_abs_3d_err(estimated: &Skeleton3D, truth: &Skeleton3D) -> Result<f64, MetricsError> {
    let (sum, n) = estimated
        .positions()
        .iter()
        .zip(truth.positions())
        .filter_map(|(a, b)| Some((a.as_ref()?, b.as_ref()?)))
        .fold((0.0, 0usize), |(s, n), (a, b)| (s + (a - b).norm(), n + 1));
    if n == 0 {
        return Err(MetricsError::NoComparableJoints);
    }
    Ok(sum / n as f64)
}

/// Number of joints [`mean_abs_3d_err`] compares.
pub fn comparable_joints(estimated: &Skeleton3D, truth: &Skeleton3D) -> usize {
    estimated
        .positions()
        .iter()
        .zip(truth.positions())
        .filter(|(a, b)| a.is_some() && b.is_some())
        .count()
}

pub fn sequence_mean(per_frame: &[f64]) -> Result<f64, MetricsError> {
    if per_frame.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

/// Pixel positions of one view keyed by joint index.
pub type ViewJoints = BTreeMap<usize, PixelPoint>;

/// Mean pixel distance between detections and reprojections of one view,
/// over joints present in both.
pub fn avg_2d_err_view(
    detected: &ViewJoints,
    reprojected: &ViewJoints,
) -> Result<f64, MetricsError> {
    let (sum, n) = detected
        .iter()
        .filter_map(|(j, d)| reprojected.get(j).map(|r| (d - r).norm()))
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    if n == 0 {
        return Err(MetricsError::NoComparableJoints);
    }
    Ok(sum / n as f64)
}

/// Per-view [`avg_2d_err_view`] for every view present in `detected`.
pub fn avg_2d_err(
    detected: &BTreeMap<u32, ViewJoints>,
    reprojected: &BTreeMap<u32, ViewJoints>,
) -> BTreeMap<u32, Result<f64, MetricsError>> {
    let empty = ViewJoints::new();
    detected
        .iter()
        .map(|(view, d)| {
            (
                *view,
                avg_2d_err_view(d, reprojected.get(view).unwrap_or(&empty)),
            )
        })
        .collect()
}

/// Pools 2D residuals per view across frames.
#[derive(Debug, Clone, Default)]
pub struct ReprojectionAccumulator {
    per_view: BTreeMap<u32, (f64, usize)>,
}

impl ReprojectionAccumulator {
    pub fn add(&mut self, view: u32, detected: &ViewJoints, reprojected: &ViewJoints) {
        let entry = self.per_view.entry(view).or_insert((0.0, 0));
        for (j, d) in detected {
            if let Some(r) = reprojected.get(j) {
                entry.0 += (d - r).norm();
                entry.1 += 1;
            }
        }
    }

    /// Mean residual per view; views without any pair are omitted.
    pub fn means(&self) -> BTreeMap<u32, f64> {
        self.per_view
            .iter()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(v, (s, n))| (*v, s / *n as f64))
            .collect()
    }
}

/// Evaluation summary of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub frames: Vec<u64>,
    #[serde(serialize_with = "crate::formats::fixed6_seq")]
    pub per_frame_3d: Vec<f64>,
    #[serde(serialize_with = "crate::formats::fixed6")]
    pub sequence_mean_3d: f64,
    #[serde(serialize_with = "crate::formats::fixed6_map")]
    pub per_view_2d: BTreeMap<u32, f64>,
    /// Joint comparisons summed over all frames.
    pub joint_count: usize,
}
