use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{euler_yaw_pitch_roll, Pose};

/// One row of a pose CSV. Angles follow `R = Ry(yaw) Rx(pitch) Rz(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub tx_mm: f64,
    pub ty_mm: f64,
    pub tz_mm: f64,
    pub alpha: f64,
    pub occ_frac: f64,
    pub failed: bool,
}

pub const POSE_CSV_HEADER: &str = "frame,yaw_deg,pitch_deg,roll_deg,tx_mm,ty_mm,tz_mm,alpha,occ_frac,failed";

impl PoseRecord {
    pub fn from_pose(frame: usize, pose: &Pose, occ_frac: f64, failed: bool) -> Self {
        let (yaw, pitch, roll) = euler_yaw_pitch_roll(&pose.rotation());
        Self {
            frame,
            yaw_deg: yaw.to_degrees(),
            pitch_deg: pitch.to_degrees(),
            roll_deg: roll.to_degrees(),
            tx_mm: pose.t.x,
            ty_mm: pose.t.y,
            tz_mm: pose.t.z,
            alpha: pose.alpha,
            occ_frac,
            failed,
        }
    }
}

fn csv_error(what: &Path, e: csv::Error) -> Error {
    Error::format(what.display().to_string(), e.to_string())
}

pub fn encode_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(Path::new("csv"), e))?;
    }
    w.into_inner().map_err(|e| Error::format("csv", e.to_string()))
}

pub fn write_pose_csv(path: &Path, records: &[PoseRecord]) -> Result<()> {
    let bytes = if records.is_empty() {
        format!("{POSE_CSV_HEADER}\n").into_bytes()
    } else {
        encode_csv(records)?
    };
    write_atomic(path, &bytes)
}

pub fn read_pose_csv(path: &Path) -> Result<Vec<PoseRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => csv_error(path, e),
    })?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Mean absolute angle errors (degrees) and mean translation error (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: usize,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub translation_mm: f64,
    pub failed_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame: usize,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub translation_mm: f64,
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Per-frame absolute errors and their means. Frames must line up by index.
pub fn evaluate(poses: &[PoseRecord], truth: &[PoseRecord]) -> Result<(Metrics, Vec<FrameError>)> {
    if poses.len() != truth.len() {
        return Err(Error::IndexMismatch(format!("{} estimates for {} ground-truth frames", poses.len(), truth.len())));
    }
    let mut errors = Vec::with_capacity(poses.len());
    for (p, t) in poses.iter().zip(truth) {
        if p.frame != t.frame {
            return Err(Error::IndexMismatch(format!("estimate frame {} against ground-truth frame {}", p.frame, t.frame)));
        }
        let dt = ((p.tx_mm - t.tx_mm).powi(2) + (p.ty_mm - t.ty_mm).powi(2) + (p.tz_mm - t.tz_mm).powi(2)).sqrt();
        errors.push(FrameError {
            frame: p.frame,
            yaw_deg: angle_diff(p.yaw_deg, t.yaw_deg),
            pitch_deg: angle_diff(p.pitch_deg, t.pitch_deg),
            roll_deg: angle_diff(p.roll_deg, t.roll_deg),
            translation_mm: dt,
        });
    }
    let n = errors.len().max(1) as f64;
    let mean = |f: fn(&FrameError) -> f64| errors.iter().map(f).sum::<f64>() / n;
    let metrics = Metrics {
        frames: errors.len(),
        yaw_deg: mean(|e| e.yaw_deg),
        pitch_deg: mean(|e| e.pitch_deg),
        roll_deg: mean(|e| e.roll_deg),
        translation_mm: mean(|e| e.translation_mm),
        failed_frames: poses.iter().filter(|p| p.failed).count(),
    };
    Ok((metrics, errors))
}
