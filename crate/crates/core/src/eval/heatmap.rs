use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::metrics::angle_between;
use crate::error::{Error, Result};

/// Error at which the ramp saturates to red.
pub const MAX_ERROR_DEG: f64 = 60.0;

/// Blue at 0°, green at 30°, red at 60° and beyond; linear in between.
pub fn error_color(angle_deg: f64) -> [u8; 3] {
    let t = (angle_deg / MAX_ERROR_DEG).clamp(0.0, 1.0);
    let channel = |v: f64| (v * 255.0).round() as u8;
    if t <= 0.5 {
        let s = t * 2.0;
        [0, channel(s), channel(1.0 - s)]
    } else {
        let s = (t - 0.5) * 2.0;
        [channel(s), channel(1.0 - s), 0]
    }
}

/// Writes `x y z r g b` lines coloring each point by its unoriented normal error.
pub fn export_error_heatmap(
    path: impl AsRef<Path>,
    points: &[Vector3<f64>],
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
) -> Result<()> {
    let path = path.as_ref();
    if points.len() != pred.len() || points.len() != gt.len() {
        return Err(Error::Size(format!(
            "{} points, {} predicted and {} reference normals",
            points.len(),
            pred.len(),
            gt.len()
        )));
    }
    let mut text = String::with_capacity(points.len() * 64);
    for ((p, a), b) in points.iter().zip(pred).zip(gt) {
        let [r, g, bl] = error_color(angle_between(a, b).to_degrees());
        writeln!(text, "{} {} {} {r} {g} {bl}", p.x, p.y, p.z).expect("writing to a String");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints_and_midpoint() {
        assert_eq!(error_color(0.0), [0, 0, 255]);
        assert_eq!(error_color(30.0), [0, 255, 0]);
        assert_eq!(error_color(60.0), [255, 0, 0]);
        assert_eq!(error_color(90.0), [255, 0, 0]);
        assert_eq!(error_color(15.0), [0, 128, 128]);
    }

    #[test]
    fn writes_one_line_per_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.txt");
        let pts = vec![Vector3::new(1.0, 2.0, 3.0), Vector3::zeros()];
        let pred = vec![Vector3::z(), Vector3::x()];
        let gt = vec![Vector3::z(), Vector3::z()];
        export_error_heatmap(&path, &pts, &pred, &gt).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1 2 3 0 0 255\n0 0 0 255 0 0\n");
        assert!(export_error_heatmap(&path, &pts, &pred[..1], &gt).is_err());
    }
}
