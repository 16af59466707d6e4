//! SVG overlays: detections in red, reprojected joints and bones in blue.

use std::fmt::Write;

use voxmocap::estimator::ViewKeypoints;
use voxmocap::geometry::{project, CameraParams, PixelPoint};
use voxmocap::skeleton::{Skeleton3D, SkeletonTopology};

const DETECTED: &str = "red";
const REPROJECTED: &str = "blue";

fn coord(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// Reprojected pixel of every present joint that lies in front of the camera.
pub fn reproject(skeleton: &Skeleton3D, camera: &CameraParams) -> Vec<Option<PixelPoint>> {
    skeleton
        .positions()
        .iter()
        .map(|p| p.as_ref().and_then(|p| project(p, camera).ok()))
        .collect()
}

/// One view of one frame. The viewport is the camera's resolution.
pub fn render_svg(
    camera: &CameraParams,
    detected: Option<&ViewKeypoints>,
    skeleton: &Skeleton3D,
    topology: &SkeletonTopology,
) -> String {
    let (w, h) = camera.resolution;
    let pixels = reproject(skeleton, camera);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        s,
        r#"<g class="bones" stroke="{REPROJECTED}" stroke-width="2">"#
    );
    for bone in &topology.bones {
        let ends = (
            pixels.get(bone.parent_joint).copied().flatten(),
            pixels.get(bone.child_joint).copied().flatten(),
        );
        if let (Some(a), Some(b)) = ends {
            let _ = writeln!(
                s,
                r#"<line data-bone="{}" x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
                bone.name,
                coord(a.x),
                coord(a.y),
                coord(b.x),
                coord(b.y)
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="reprojected" fill="{REPROJECTED}">"#);
    for (j, p) in pixels.iter().enumerate() {
        if let Some(p) = p {
            let _ = writeln!(
                s,
                r#"<circle data-joint="{j}" cx="{}" cy="{}" r="5"/>"#,
                coord(p.x),
                coord(p.y)
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="detected" fill="{DETECTED}">"#);
    for k in detected.map(|v| v.joints.as_slice()).unwrap_or_default() {
        let _ = writeln!(
            s,
            r#"<circle data-joint="{}" cx="{}" cy="{}" r="3"/>"#,
            k.idx,
            coord(k.u),
            coord(k.v)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

pub fn overlay_file_name(frame: u64, view: u32) -> String {
    format!("frame_{frame:06}_view_{view}.svg")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use voxmocap::estimator::Keypoint;
    use voxmocap::synth::ring_cameras;

    #[test]
    fn markers_and_viewport() {
        let cam = &ring_cameras()[0];
        let topo = SkeletonTopology::default();
        let mut skel = Skeleton3D::empty(0, topo.joint_count());
        skel.set(1, Point3::new(0.0, 100.0, 0.0));
        skel.set(0, Point3::new(0.0, 300.0, 0.0));
        let px = project(&Point3::new(0.0, 100.0, 0.0), cam).unwrap();
        let view = ViewKeypoints {
            view_id: cam.id,
            joints: vec![Keypoint {
                idx: 1,
                u: px.x,
                v: px.y,
                c: 1.0,
            }],
        };
        let svg = render_svg(cam, Some(&view), &skel, &topo);
        assert!(svg.contains(r#"viewBox="0 0 1920 1080""#));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("<line").count(), 1);
        assert!(svg.contains(r#"data-bone="head""#));
        let marker = format!(r#"cx="{}" cy="{}""#, coord(px.x), coord(px.y));
        assert_eq!(svg.matches(&marker).count(), 2);
    }

    #[test]
    fn file_names() {
        assert_eq!(overlay_file_name(7, 2), "frame_000007_view_2.svg");
    }
}
