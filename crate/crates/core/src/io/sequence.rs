use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthFrame, MAX_DEPTH_MM, MISSING_DEPTH};

/// Pinhole camera and image size as written in manifests and scene files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraSpec {
    fn default() -> Self {
        let k = CameraIntrinsics::kinect();
        Self {
            f: k.f,
            cx: k.cx,
            cy: k.cy,
            width: 640,
            height: 480,
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.f, self.cx, self.cy)
    }
}

/// A numbered sequence of 16-bit depth images.
///
/// `pattern` holds one `{}` that is replaced by the zero-padded frame index.
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub pattern: String,
    pub frame_count: usize,
    #[serde(default)]
    pub start_index: usize,
    #[serde(default = "default_digits")]
    pub digits: usize,
    #[serde(default)]
    pub camera: CameraSpec,
    /// Millimetres per stored image unit.
    #[serde(default = "default_scale")]
    pub depth_scale: f64,
    /// Optional ground-truth pose CSV.
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_digits() -> usize {
    5
}

fn default_scale() -> f64 {
    1.0
}

impl SequenceManifest {
    pub fn new(pattern: impl Into<String>, frame_count: usize, camera: CameraSpec) -> Self {
        Self {
            pattern: pattern.into(),
            frame_count,
            start_index: 0,
            digits: default_digits(),
            camera,
            depth_scale: default_scale(),
            ground_truth: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pattern.matches("{}").count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "frame pattern {:?} must contain exactly one {{}}",
                self.pattern
            )));
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("depth_scale must be positive, got {}", self.depth_scale)));
        }
        self.camera.intrinsics()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: SequenceManifest =
            toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::format("manifest", e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    /// Path of the `i`-th frame of the sequence (0-based).
    pub fn frame_path(&self, i: usize) -> PathBuf {
        let index = format!("{:0width$}", self.start_index + i, width = self.digits);
        self.resolve(&self.pattern.replacen("{}", &index, 1))
    }

    pub fn ground_truth_path(&self) -> Option<PathBuf> {
        self.ground_truth.as_deref().map(|g| self.resolve(g))
    }
}

/// Reads a 16-bit grayscale image; zero is missing and values are scaled to
/// millimetres. Depths outside the valid range become missing.
pub fn read_depth_png(path: &Path, depth_scale: f64) -> Result<DepthFrame> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), other.to_string()),
    })?;
    let img = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::format(
                path.display().to_string(),
                format!("expected 16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = img.dimensions();
    let depth = img
        .into_raw()
        .into_iter()
        .map(|raw| {
            let d = (raw as f64 * depth_scale) as f32;
            if raw == 0 || !(d < MAX_DEPTH_MM) {
                MISSING_DEPTH
            } else {
                d
            }
        })
        .collect();
    DepthFrame::from_vec(w as usize, h as usize, depth)
}

/// Writes a frame as 16-bit grayscale, rounding to the stored unit.
pub fn write_depth_png(path: &Path, frame: &DepthFrame, depth_scale: f64) -> Result<()> {
    let raw: Vec<u16> = frame
        .depth
        .iter()
        .map(|&d| {
            if d == MISSING_DEPTH {
                0
            } else {
                (d as f64 / depth_scale).round().clamp(1.0, u16::MAX as f64) as u16
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(frame.width as u32, frame.height as u32, raw)
        .ok_or_else(|| Error::InvalidArgument("depth buffer does not match frame size".into()))?;
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Frames of a manifest in index order. Every frame must match the
/// manifest's image size.
pub fn load_sequence(manifest: &SequenceManifest) -> impl Iterator<Item = Result<DepthFrame>> + '_ {
    (0..manifest.frame_count).map(move |i| {
        let path = manifest.frame_path(i);
        let frame = read_depth_png(&path, manifest.depth_scale)?;
        if frame.width != manifest.camera.width || frame.height != manifest.camera.height {
            return Err(Error::format(
                path.display().to_string(),
                format!(
                    "frame is {}x{}, manifest says {}x{}",
                    frame.width, frame.height, manifest.camera.width, manifest.camera.height
                ),
            ));
        }
        Ok(frame)
    })
}
