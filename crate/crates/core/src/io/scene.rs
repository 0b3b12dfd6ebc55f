use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::{write_pose_csv, PoseRecord};
use super::sequence::{write_depth_png, CameraSpec, SequenceManifest};
use crate::error::{Error, Result};
use crate::face_model::MultilinearModel;
use crate::synth::{orbit_trajectory, render_scene, sample_identity, OccluderSpec, OrbitSpec, RenderedScene, SyntheticScene};

/// One stretch of frames showing a single person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct SegmentSpec {
    /// Seed for drawing the identity from the model prior; absent means the
    /// prior mean face.
    pub identity_seed: Option<u64>,
    pub orbit: OrbitSpec,
}


/// Scene description read by the `render` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneFile {
    pub seed: u64,
    pub camera: CameraSpec,
    pub noise_sigma_mm: f64,
    pub quant_mm: f64,
    /// Millimetres per stored image unit.
    pub depth_scale: f64,
    pub occluders: Vec<OccluderSpec>,
    pub segments: Vec<SegmentSpec>,
}

impl Default for SceneFile {
    fn default() -> Self {
        Self {
            seed: 0,
            camera: CameraSpec::default(),
            noise_sigma_mm: 0.0,
            quant_mm: 1.0,
            depth_scale: 1.0,
            occluders: Vec::new(),
            segments: vec![SegmentSpec::default()],
        }
    }
}

impl SceneFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: SceneFile = toml::from_str(text).map_err(|e| Error::format("scene", e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.intrinsics()?;
        if self.noise_sigma_mm < 0.0 || self.quant_mm < 0.0 || !(self.depth_scale > 0.0) {
            return Err(Error::InvalidArgument("noise, quantization and depth scale must be non-negative".into()));
        }
        if let Some(o) = self.occluders.iter().find(|o| !(0.0..=1.0).contains(&o.coverage)) {
            return Err(Error::InvalidArgument(format!("occluder coverage {} outside [0, 1]", o.coverage)));
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidArgument("scene has no segments".into()));
        }
        Ok(())
    }

    /// Identity weight of a segment.
    pub fn identity(&self, model: &MultilinearModel, segment: &SegmentSpec) -> DVector<f64> {
        match segment.identity_seed {
            Some(seed) => sample_identity(model, &mut ChaCha8Rng::seed_from_u64(seed)),
            None => model.priors.mu_id.clone(),
        }
    }

    /// Renders every segment and concatenates them. Each segment gets its
    /// own noise and occluder stream derived from the scene seed.
    pub fn render(&self, model: &MultilinearModel) -> Result<RenderedScene> {
        self.validate()?;
        let k = self.camera.intrinsics()?;
        let mut out = RenderedScene {
            frames: Vec::new(),
            poses: Vec::new(),
            occluded: Vec::new(),
        };
        for (i, segment) in self.segments.iter().enumerate() {
            let mut scene = SyntheticScene::new(model.clone(), orbit_trajectory(&segment.orbit));
            scene.w_id = self.identity(model, segment);
            scene.occluders = self.occluders.clone();
            scene.noise_sigma_mm = self.noise_sigma_mm;
            scene.quant_mm = self.quant_mm;
            scene.camera = k;
            scene.width = self.camera.width;
            scene.height = self.camera.height;
            scene.seed = self.seed.wrapping_add(i as u64);
            let r = render_scene(&scene)?;
            out.frames.extend(r.frames);
            out.poses.extend(r.poses);
            out.occluded.extend(r.occluded);
        }
        Ok(out)
    }
}

/// Writes a rendered scene as `frames/NNNNN.png`, `truth.csv` and
/// `sequence.toml` under `dir`, returning the manifest.
pub fn write_rendered(dir: &Path, rendered: &RenderedScene, camera: CameraSpec, depth_scale: f64) -> Result<SequenceManifest> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut manifest = SequenceManifest::new("frames/{}.png", rendered.frames.len(), camera);
    manifest.depth_scale = depth_scale;
    manifest.ground_truth = Some("truth.csv".into());
    manifest.base_dir = dir.to_path_buf();
    for (i, frame) in rendered.frames.iter().enumerate() {
        write_depth_png(&manifest.frame_path(i), frame, depth_scale)?;
    }
    let truth: Vec<PoseRecord> = rendered
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| PoseRecord::from_pose(i, p, 0.0, false))
        .collect();
    write_pose_csv(&dir.join("truth.csv"), &truth)?;
    manifest.write(&dir.join("sequence.toml"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_file_defaults_and_overrides() {
        let s = SceneFile::from_toml(
            "seed = 3\nquant_mm = 2.0\n[[occluders]]\ncoverage = 0.2\n[[segments]]\nidentity_seed = 7\n[segments.orbit]\nframes = 4\n",
        )
        .unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.occluders[0].coverage, 0.2);
        assert_eq!(s.occluders[0].depth_offset_mm, 100.0);
        assert_eq!(s.segments[0].identity_seed, Some(7));
        assert_eq!(s.segments[0].orbit.frames, 4);
        assert_eq!(s.segments[0].orbit.yaw_deg, [-40.0, 40.0]);
        assert!(SceneFile::from_toml("[[occluders]]\ncoverage = 1.5\n").is_err());
    }
}
