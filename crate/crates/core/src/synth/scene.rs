use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_noise, apply_occlusion, gaussian_draw, render_depth, valid_bounding_box, OcclusionPlacement};
use crate::error::Result;
use crate::face_model::MultilinearModel;
use crate::geometry::{matrix_from_yaw_pitch_roll, rotation_vector, CameraIntrinsics, DepthFrame, Pose, Roi, Vec3};

/// Head motion sweeping yaw linearly while pitch and roll oscillate once
/// over the sequence and the head drifts linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitSpec {
    pub frames: usize,
    pub yaw_deg: [f64; 2],
    pub pitch_amp_deg: f64,
    pub roll_amp_deg: f64,
    pub start_mm: [f64; 3],
    pub drift_mm: [f64; 3],
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            frames: 60,
            yaw_deg: [-40.0, 40.0],
            pitch_amp_deg: 20.0,
            roll_amp_deg: 0.0,
            start_mm: [0.0, 0.0, 1000.0],
            drift_mm: [30.0, 0.0, 0.0],
        }
    }
}

pub fn orbit_trajectory(spec: &OrbitSpec) -> Vec<Pose> {
    let n = spec.frames;
    let start = Vec3::from(spec.start_mm);
    let drift = Vec3::from(spec.drift_mm);
    (0..n)
        .map(|k| {
            let s = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
            let phase = (2.0 * std::f64::consts::PI * s).sin();
            let yaw = spec.yaw_deg[0] + (spec.yaw_deg[1] - spec.yaw_deg[0]) * s;
            let r = matrix_from_yaw_pitch_roll(
                yaw.to_radians(),
                (spec.pitch_amp_deg * phase).to_radians(),
                (spec.roll_amp_deg * phase).to_radians(),
            );
            Pose::new(rotation_vector(&r), start + drift * s, 0.0)
        })
        .collect()
}

/// A rectangle held in front of the face over a frame range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccluderSpec {
    /// Fraction of the face bounding box covered.
    pub coverage: f64,
    pub depth_offset_mm: f64,
    pub first_frame: usize,
    /// Exclusive end; `None` runs to the last frame.
    pub end_frame: Option<usize>,
}

impl Default for OccluderSpec {
    fn default() -> Self {
        Self {
            coverage: 0.3,
            depth_offset_mm: 100.0,
            first_frame: 0,
            end_frame: None,
        }
    }
}

/// Everything needed to render a ground-truth depth sequence.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub model: MultilinearModel,
    pub w_id: DVector<f64>,
    pub w_exp: DVector<f64>,
    pub trajectory: Vec<Pose>,
    pub occluders: Vec<OccluderSpec>,
    pub noise_sigma_mm: f64,
    pub quant_mm: f64,
    pub camera: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl SyntheticScene {
    /// Mean face under the default Kinect camera at 640x480, no noise or
    /// occlusion.
    pub fn new(model: MultilinearModel, trajectory: Vec<Pose>) -> Self {
        let w_id = model.priors.mu_id.clone();
        let w_exp = model.priors.mu_exp.clone();
        Self {
            model,
            w_id,
            w_exp,
            trajectory,
            occluders: Vec::new(),
            noise_sigma_mm: 0.0,
            quant_mm: 0.0,
            camera: CameraIntrinsics::kinect(),
            width: 640,
            height: 480,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub frames: Vec<DepthFrame>,
    pub poses: Vec<Pose>,
    /// Union of occluder rectangles per frame, if any.
    pub occluded: Vec<Vec<Roi>>,
}

/// Renders the scene frame by frame. Occluders keep a fixed placement
/// relative to the face box drawn once from the scene seed; noise follows
/// occlusion.
pub fn render_scene(scene: &SyntheticScene) -> Result<RenderedScene> {
    let vertices = scene.model.synthesize(&scene.w_id, &scene.w_exp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let placements: Vec<OcclusionPlacement> = scene.occluders.iter().map(|_| OcclusionPlacement::random(&mut rng)).collect();
    let mut frames = Vec::with_capacity(scene.trajectory.len());
    let mut occluded = Vec::with_capacity(scene.trajectory.len());
    for (k, pose) in scene.trajectory.iter().enumerate() {
        let mut frame = render_depth(&vertices, &scene.model.triangles, pose, &scene.camera, scene.width, scene.height);
        let face_box = valid_bounding_box(&frame);
        let mut rects = Vec::new();
        for (spec, placement) in scene.occluders.iter().zip(&placements) {
            let active = k >= spec.first_frame && spec.end_frame.is_none_or(|e| k < e);
            if let (true, Some(roi)) = (active, face_box) {
                let (out, rect) = apply_occlusion(&frame, roi, spec.coverage, placement, spec.depth_offset_mm);
                frame = out;
                rects.extend(rect);
            }
        }
        if scene.noise_sigma_mm > 0.0 || scene.quant_mm > 0.0 {
            frame = add_noise(&frame, scene.noise_sigma_mm, scene.quant_mm, &mut rng);
        }
        frames.push(frame);
        occluded.push(rects);
    }
    Ok(RenderedScene {
        frames,
        poses: scene.trajectory.clone(),
        occluded,
    })
}

/// Identity weight drawn from the model's identity prior.
pub fn sample_identity(model: &MultilinearModel, rng: &mut impl Rng) -> DVector<f64> {
    gaussian_draw(&model.priors.mu_id, &model.priors.sigma_id, rng)
}
