//! Command-line pipeline around `voxmocap`: synthetic capture, skeleton
//! reconstruction, retargeting, evaluation and SVG overlays.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod overlay;

use std::io::Write;

pub use args::{Cli, Command};
pub use config::RunConfig;
pub use error::CliError;

/// Runs one parsed command line. Diagnostics go to `diag`.
pub fn run(cli: Cli, diag: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => {
            commands::synth(&args)?;
        }
        Command::Reconstruct(args) => {
            let summary = commands::reconstruct(&args.to_config()?, diag)?;
            if summary.no_consensus > 0 {
                let _ = writeln!(
                    diag,
                    "{} frames reconstructed; {} joints without consensus",
                    summary.frames, summary.no_consensus
                );
            }
        }
        Command::Retarget(args) => {
            commands::retarget(&args.skeleton, &args.out)?;
        }
        Command::Eval(args) => {
            let reprojection = args.calib.as_deref().zip(args.keypoints.as_deref());
            let report = commands::eval(&args.skeleton, &args.truth, reprojection, &args.out)?;
            let _ = writeln!(
                diag,
                "sequence mean 3D error {:.3} mm over {} frames",
                report.sequence_mean_3d,
                report.frames.len()
            );
        }
        Command::RenderOverlay(args) => {
            commands::render_overlay(&args.calib, &args.keypoints, &args.skeleton, &args.out)?;
        }
    }
    Ok(())
}
