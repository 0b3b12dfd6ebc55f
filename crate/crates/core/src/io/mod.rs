//! Sequence ingestion, dataset adapters, configuration, pose output and the
//! end-to-end tracking pipeline.

mod biwi;
mod config;
mod pipeline;
mod records;
mod scene;
mod sequence;

pub use biwi::{decode_biwi_depth, load_biwi, read_biwi_calibration, read_biwi_depth, read_biwi_pose, BiwiSequence};
pub use config::{IdentityConfig, ModelConfig, PipelineConfig};
pub use pipeline::{run_manifest, run_pipeline, tracking_distribution, ClipReport, Pipeline, PipelineOutput};
pub use records::{encode_csv, evaluate, read_pose_csv, write_pose_csv, FrameError, Metrics, PoseRecord, POSE_CSV_HEADER};
pub use scene::{write_rendered, SceneFile, SegmentSpec};
pub use sequence::{load_sequence, read_depth_png, write_depth_png, CameraSpec, SequenceManifest};

use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
