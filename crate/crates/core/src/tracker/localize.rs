use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, Pose, Roi, Vec3};

/// Physical size of the head-shoulder template (mm).
pub const TEMPLATE_HEIGHT_MM: f64 = 240.0;
pub const TEMPLATE_WIDTH_MM: f64 = 320.0;
/// Minimum template correlation for a detection.
pub const LOCALIZATION_FLOOR: f64 = 0.5;

const CANDIDATE_STRIDE: usize = 4;
const SAMPLES_X: usize = 16;
const SAMPLES_Y: usize = 12;
/// Depth band around the candidate counted as foreground (mm).
const FOREGROUND_BAND_MM: f64 = 150.0;

#[derive(Clone, Copy, PartialEq)]
enum Cell {
    Head,
    Background,
    Ignored,
}

/// Template cell at normalized box coordinates in `[-0.5, 0.5]^2`: a head
/// ellipse surrounded by background, with the shoulder corners ignored so
/// head-only and head-and-shoulders inputs both match.
fn template_cell(x: f64, y: f64) -> Cell {
    if (x / 0.25).powi(2) + (y / 0.45).powi(2) <= 1.0 {
        Cell::Head
    } else if y > 0.3 && x.abs() > 0.25 {
        Cell::Ignored
    } else {
        Cell::Background
    }
}

/// Correlation of the depth-scaled template centered at `(u, v)` with the
/// mask of pixels near the candidate depth. In `[-1, 1]`.
fn correlation(frame: &DepthFrame, k: &CameraIntrinsics, u: usize, v: usize, d: f64) -> f64 {
    let w = k.f * TEMPLATE_WIDTH_MM / d;
    let h = k.f * TEMPLATE_HEIGHT_MM / d;
    let (mut head, mut head_n, mut bg, mut bg_n) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..SAMPLES_Y {
        let y = (j as f64 + 0.5) / SAMPLES_Y as f64 - 0.5;
        for i in 0..SAMPLES_X {
            let x = (i as f64 + 0.5) / SAMPLES_X as f64 - 0.5;
            let cell = template_cell(x, y);
            if cell == Cell::Ignored {
                continue;
            }
            let pu = (u as f64 + x * w).round();
            let pv = (v as f64 + y * h).round();
            let fg = if pu >= 0.0 && pv >= 0.0 {
                frame
                    .get(pu as usize, pv as usize)
                    .is_some_and(|dd| (dd - d).abs() < FOREGROUND_BAND_MM)
            } else {
                false
            };
            let fg = if fg { 1.0 } else { 0.0 };
            match cell {
                Cell::Head => {
                    head += fg;
                    head_n += 1.0;
                }
                _ => {
                    bg += fg;
                    bg_n += 1.0;
                }
            }
        }
    }
    head / head_n - bg / bg_n
}

/// Finds the head by correlating a depth-scaled head-shoulder template with
/// the frame. Returns the template-sized region around the best match and a
/// frontal pose at the matched surface point.
pub fn localize_face(frame: &DepthFrame, k: &CameraIntrinsics) -> Result<(Roi, Pose)> {
    if frame.valid_count() == 0 {
        return Err(Error::LocalizationFailed("frame has no valid depth".into()));
    }
    let mut scored = Vec::new();
    for v in (0..frame.height).step_by(CANDIDATE_STRIDE) {
        for u in (0..frame.width).step_by(CANDIDATE_STRIDE) {
            if let Some(d) = frame.get(u, v) {
                scored.push((u, v, d, correlation(frame, k, u, v, d)));
            }
        }
    }
    let best = scored.iter().map(|s| s.3).fold(f64::NEG_INFINITY, f64::max);
    if !(best >= LOCALIZATION_FLOOR) {
        return Err(Error::LocalizationFailed(format!(
            "best template correlation {best:.3} below {LOCALIZATION_FLOOR}"
        )));
    }
    // The maximum is a plateau when the head is smaller than the template
    // ellipse; its centroid is a stable center estimate.
    let near: Vec<_> = scored.iter().filter(|s| s.3 >= best - 0.02).collect();
    let cu = near.iter().map(|s| s.0 as f64).sum::<f64>() / near.len() as f64;
    let cv = near.iter().map(|s| s.1 as f64).sum::<f64>() / near.len() as f64;
    let (u, v, d) = match frame.get(cu.round() as usize, cv.round() as usize) {
        Some(d) => (cu.round(), cv.round(), d),
        None => {
            let s = near
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 as f64 - cu).powi(2) + (a.1 as f64 - cv).powi(2);
                    let db = (b.0 as f64 - cu).powi(2) + (b.1 as f64 - cv).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            (s.0 as f64, s.1 as f64, s.2)
        }
    };
    let roi = Roi::centered(
        u,
        v,
        k.f * TEMPLATE_WIDTH_MM / d,
        k.f * TEMPLATE_HEIGHT_MM / d,
        frame.width,
        frame.height,
    );
    let t: Vec3 = k.backproject_unchecked(u, v, d);
    Ok((roi, Pose::new(Vec3::zeros(), t, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, render_depth};

    #[test]
    fn template_size_matches_head_shoulder_dimensions() {
        assert_eq!(TEMPLATE_HEIGHT_MM, 240.0);
        assert_eq!(TEMPLATE_WIDTH_MM, 320.0);
    }

    #[test]
    fn empty_frame_fails() {
        let frame = DepthFrame::empty(64, 48);
        assert!(matches!(
            localize_face(&frame, &CameraIntrinsics::kinect()),
            Err(Error::LocalizationFailed(_))
        ));
    }

    #[test]
    fn finds_rendered_head() {
        let k = CameraIntrinsics::kinect();
        let corpus = generate_corpus(5, 2, 2, 1500);
        for t in [Vec3::new(0.0, 0.0, 1000.0), Vec3::new(-150.0, 60.0, 1200.0), Vec3::new(120.0, -40.0, 800.0)] {
            let pose = Pose::new(Vec3::new(0.0, 0.3, 0.0), t, 0.0);
            let frame = render_depth(corpus.mesh(1, 0), &corpus.triangles, &pose, &k, 640, 480);
            let (roi, init) = localize_face(&frame, &k).unwrap();
            let truth = k.project(&t).unwrap();
            let (cu, cv) = roi.center();
            let err = ((cu - truth.x).powi(2) + (cv - truth.y).powi(2)).sqrt();
            assert!(err < 10.0, "center off by {err} px at {t:?}");
            assert_eq!(init.omega, Vec3::zeros());
            assert!((init.t.z - t.z).abs() < 150.0);
        }
    }
}
