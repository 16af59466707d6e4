use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "voxmocap",
    version,
    about = "Multi-view markerless motion capture pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic capture: calibration, keypoints and ground truth.
    Synth(SynthArgs),
    /// Estimate 3D skeletons from calibrated 2D keypoints.
    Reconstruct(ReconstructArgs),
    /// Convert skeletons to per-bone transforms for the character rig.
    Retarget(RetargetArgs),
    /// Compare estimated skeletons against ground truth.
    Eval(EvalArgs),
    /// Draw detections and reprojected joints as SVG, one file per frame and view.
    RenderOverlay(OverlayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// tpose-static, walk, arm-wave or squat.
    #[arg(long, default_value = "walk")]
    pub preset: String,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Gaussian keypoint noise, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Per joint and view miss probability.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives calib.json, keypoints.jsonl and truth.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
    /// Skeleton JSONL output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write bone transforms to this JSONL file.
    #[arg(long)]
    pub animation: Option<PathBuf>,
    /// Also write SVG overlays into this directory.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Report per-frame phase timings on standard error.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Default, Args)]
pub struct EstimatorArgs {
    /// Minimum number of agreeing views.
    #[arg(long)]
    pub sigma: Option<usize>,
    /// Terminal cube size in mm, as WxHxL.
    #[arg(long, value_parser = parse_triple)]
    pub delta: Option<[f64; 3]>,
    /// Edges of the search volume in mm, as WxHxL.
    #[arg(long, value_parser = parse_triple)]
    pub volume: Option<[f64; 3]>,
    #[arg(long = "min-conf")]
    pub min_conf: Option<f64>,
    /// Vote tolerance around projected cubes, pixels.
    #[arg(long = "pixel-tol")]
    pub pixel_tol: Option<f64>,
}

impl EstimatorArgs {
    pub fn apply(&self, config: &mut RunConfig) {
        let est = &mut config.estimator;
        if let Some(s) = self.sigma {
            est.sigma = s;
        }
        if let Some(d) = self.delta {
            est.delta = Vector3::from(d);
        }
        if let Some(v) = self.volume {
            est.initial_volume.edges = Vector3::from(v);
        }
        if let Some(c) = self.min_conf {
            est.min_confidence = c;
        }
        if let Some(t) = self.pixel_tol {
            est.pixel_tolerance = t;
        }
    }
}

#[derive(Debug, Args)]
pub struct RetargetArgs {
    /// Skeleton JSONL input.
    #[arg(long)]
    pub skeleton: PathBuf,
    /// Animation JSONL output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated skeleton JSONL.
    #[arg(long)]
    pub skeleton: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// With --keypoints, adds per-view reprojection error.
    #[arg(long, requires = "keypoints")]
    pub calib: Option<PathBuf>,
    #[arg(long, requires = "calib")]
    pub keypoints: Option<PathBuf>,
    /// JSON report path; the per-frame CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub skeleton: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `WxHxL`, e.g. `10x10x10`.
pub fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != 3 {
        return Err(format!("expected WxHxL, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .trim()
            .parse()
            .map_err(|_| format!("invalid number {p:?} in {s:?}"))?;
    }
    Ok(out)
}

impl ReconstructArgs {
    /// Merges the config file (if any) with the flags.
    pub fn to_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.calib, &self.calib);
        set(&mut cfg.keypoints, &self.keypoints);
        set(&mut cfg.out, &self.out);
        set(&mut cfg.animation, &self.animation);
        set(&mut cfg.overlay, &self.overlay);
        self.estimator.apply(&mut cfg);
        cfg.timing |= self.timing;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples() {
        assert_eq!(parse_triple("10x20x30"), Ok([10.0, 20.0, 30.0]));
        assert_eq!(parse_triple("2.5X2.5x1"), Ok([2.5, 2.5, 1.0]));
        assert!(parse_triple("10x10").is_err());
        assert!(parse_triple("10xax10").is_err());
    }

    #[test]
    fn flags_override_estimator() {
        let cli = Cli::try_parse_from([
            "voxmocap",
            "reconstruct",
            "--calib",
            "c.json",
            "--keypoints",
            "k.jsonl",
            "--out",
            "s.jsonl",
            "--sigma",
            "3",
            "--delta",
            "20x20x20",
            "--volume",
            "3600x2400x3600",
            "--min-conf",
            "0.5",
            "--timing",
        ])
        .unwrap();
        let Command::Reconstruct(args) = cli.command else {
            panic!("wrong subcommand");
        };
        let cfg = args.to_config().unwrap();
        assert_eq!(cfg.estimator.sigma, 3);
        assert_eq!(cfg.estimator.delta, Vector3::new(20.0, 20.0, 20.0));
        assert_eq!(
            cfg.estimator.initial_volume.edges,
            Vector3::new(3600.0, 2400.0, 3600.0)
        );
        assert_eq!(cfg.estimator.min_confidence, 0.5);
        assert!(cfg.timing);
        assert_eq!(cfg.calib.as_deref(), Some(std::path::Path::new("c.json")));
    }
}
