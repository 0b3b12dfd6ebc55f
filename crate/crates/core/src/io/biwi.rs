//! Reader for the Biwi Kinect head pose dataset layout: per sequence
//! directory, `frame_NNNNN_depth.bin` run-length depth images,
//! `frame_NNNNN_pose.txt` ground truth (3x3 rotation rows, then the head
//! center in mm) and a `depth.cal` whose first three rows are the intrinsic
//! matrix.

use std::fs;
use std::path::{Path, PathBuf};

use super::records::PoseRecord;
use crate::error::{Error, Result};
use crate::geometry::{rotation_vector, CameraIntrinsics, DepthFrame, Mat3, Pose, Vec3, MAX_DEPTH_MM, MISSING_DEPTH};

#[derive(Debug, Clone)]
pub struct BiwiSequence {
    pub intrinsics: CameraIntrinsics,
    /// Dataset frame numbers with their depth files, in increasing order.
    pub frames: Vec<(usize, PathBuf)>,
    /// Ground truth for every listed frame.
    pub truth: Vec<PoseRecord>,
}

impl BiwiSequence {
    pub fn load_frames(&self) -> impl Iterator<Item = Result<DepthFrame>> + '_ {
        self.frames.iter().map(|(_, p)| read_biwi_depth(p))
    }
}

fn numbers(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(path.display().to_string(), format!("not a number: {t:?}")))
        })
        .collect()
}

/// Decodes a Biwi `.bin` depth image: `i32` width and height, then
/// alternating `i32` counts of empty pixels and of stored pixels, each stored
/// pixel an `i16` depth in mm.
pub fn decode_biwi_depth(bytes: &[u8], what: &str) -> Result<DepthFrame> {
    let mut pos = 0;
    let next_i32 = |pos: &mut usize| -> Result<i32> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| Error::format(what, "truncated depth image"))?;
        *pos += 4;
        Ok(i32::from_le_bytes(b.try_into().unwrap()))
    };
    let w = next_i32(&mut pos)?;
    let h = next_i32(&mut pos)?;
    if w <= 0 || h <= 0 {
        return Err(Error::format(what, format!("bad image size {w}x{h}")));
    }
    let n = w as usize * h as usize;
    let mut depth = vec![MISSING_DEPTH; n];
    let mut p = 0;
    while p < n {
        let empty = next_i32(&mut pos)?;
        let full = next_i32(&mut pos)?;
        if empty < 0 || full < 0 || p + empty as usize + full as usize > n {
            return Err(Error::format(what, "run lengths overrun the image"));
        }
        p += empty as usize;
        for _ in 0..full {
            let b = bytes
                .get(pos..pos + 2)
                .ok_or_else(|| Error::format(what, "truncated depth run"))?;
            pos += 2;
            let d = i16::from_le_bytes(b.try_into().unwrap()) as f32;
            depth[p] = if d > 0.0 && d < MAX_DEPTH_MM { d } else { MISSING_DEPTH };
            p += 1;
        }
    }
    DepthFrame::from_vec(w as usize, h as usize, depth)
}

pub fn read_biwi_depth(path: &Path) -> Result<DepthFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_biwi_depth(&bytes, &path.display().to_string())
}

/// Ground-truth pose file: rotation matrix rows followed by the head center.
pub fn read_biwi_pose(path: &Path) -> Result<(Mat3, Vec3)> {
    let v = numbers(path)?;
    if v.len() != 12 {
        return Err(Error::format(path.display().to_string(), format!("expected 12 numbers, found {}", v.len())));
    }
    Ok((Mat3::from_row_slice(&v[..9]), Vec3::new(v[9], v[10], v[11])))
}

pub fn read_biwi_calibration(path: &Path) -> Result<CameraIntrinsics> {
    let v = numbers(path)?;
    if v.len() < 9 {
        return Err(Error::format(path.display().to_string(), "missing intrinsic matrix"));
    }
    CameraIntrinsics::new(v[0], v[2], v[5])
}

/// Indexes one Biwi sequence directory. Nothing is returned unless the
/// calibration and every pose file parse.
pub fn load_biwi(dir: &Path) -> Result<BiwiSequence> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let intrinsics = read_biwi_calibration(&dir.join("depth.cal"))?;
    let mut frames = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(index) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix("_depth.bin"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            frames.push((index, entry.path()));
        }
    }
    frames.sort();
    let mut truth = Vec::with_capacity(frames.len());
    for (index, _) in &frames {
        let (r, t) = read_biwi_pose(&dir.join(format!("frame_{index:05}_pose.txt")))?;
        let pose = Pose::new(rotation_vector(&r), t, 0.0);
        truth.push(PoseRecord::from_pose(*index, &pose, 0.0, false));
    }
    Ok(BiwiSequence {
        intrinsics,
        frames,
        truth,
    })
}
