//! Run configuration shared by the subcommands. A JSON file supplies the
//! base values; command-line flags override them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxmocap::estimator::{CameraRig, EstimatorConfig};
use voxmocap::formats::FormatError;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub calib: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Skeleton stream read by `retarget`, `eval` and `render-overlay`.
    pub skeleton: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Also write bone transforms while reconstructing.
    pub animation: Option<PathBuf>,
    /// Directory for per-frame SVG overlays written while reconstructing.
    pub overlay: Option<PathBuf>,
    pub estimator: EstimatorConfig,
    pub timing: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| FormatError::parse(path, e.line(), e.to_string()).into())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Returns the path or a usage error naming the missing flag.
    pub fn require<'a>(
        &self,
        field: &'a Option<PathBuf>,
        flag: &str,
    ) -> Result<&'a Path, CliError> {
        field
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
    }

    /// A warning when consensus needs more views than are calibrated.
    pub fn sigma_warning(&self, rig: &CameraRig) -> Option<String> {
        (self.estimator.sigma > rig.len()).then(|| {
            format!(
                "warning: sigma {} exceeds the {} calibrated cameras; no joint can reach consensus",
                self.estimator.sigma,
                rig.len()
            )
        })
    }
}
