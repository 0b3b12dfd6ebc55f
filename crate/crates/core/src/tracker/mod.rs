//! Per-frame rigid head pose estimation: face localization, ray visibility
//! registration with temporal coherence and scale accumulation, failure
//! detection, and particle swarm recovery.

mod localize;
mod objective;
mod pso;

pub use localize::{localize_face, LOCALIZATION_FLOOR, TEMPLATE_HEIGHT_MM, TEMPLATE_WIDTH_MM};
pub use objective::{face_roi, scale_cost, FrameObjective, LabelPolicy, TemporalData};
pub use pso::{pso_refine, PsoConfig};

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::FaceDistribution;
use crate::geometry::{CameraIntrinsics, DepthFrame, Pose, Vec3};
use crate::visibility::{Derivatives, RayCorrespondence, RvsParams, Visibility, VisibilityLabels};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub rvs: RvsParams,
    /// Temporal depth-flow variance (mm^2).
    pub sigma_t_sq: f64,
    /// Per-frame log-scale variance.
    pub sigma_s_sq: f64,
    /// Visibility/step alternations per frame.
    pub max_inner_iters: usize,
    /// Alternations on the first frame, which starts from the coarse
    /// localization pose.
    pub first_frame_iters: usize,
    /// The first frame is started from yaw hypotheses spanning
    /// `[-span, span]` in steps of `step` (degrees), since localization
    /// gives no orientation.
    pub init_yaw_span_deg: f64,
    pub init_yaw_step_deg: f64,
    /// Convergence threshold on the step norm.
    pub step_tol: f64,
    pub max_rotation_step: f64,
    pub max_translation_step_mm: f64,
    /// Largest log-scale change accepted between frames.
    pub max_scale_step: f64,
    pub max_occluded_fraction: f64,
    pub use_temporal: bool,
    pub use_scale: bool,
    pub use_pso: bool,
    pub pso: PsoConfig,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            rvs: RvsParams::default(),
            sigma_t_sq: 75.0,
            sigma_s_sq: 0.04,
            max_inner_iters: 20,
            first_frame_iters: 100,
            init_yaw_span_deg: 60.0,
            init_yaw_step_deg: 15.0,
            step_tol: 1e-6,
            max_rotation_step: std::f64::consts::FRAC_PI_4,
            max_translation_step_mm: 100.0,
            max_scale_step: 0.1,
            max_occluded_fraction: 0.5,
            use_temporal: true,
            use_scale: true,
            use_pso: true,
            pso: PsoConfig::default(),
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        self.rvs.validate()?;
        let positive = [
            ("sigma_t_sq", self.sigma_t_sq),
            ("sigma_s_sq", self.sigma_s_sq),
            ("step_tol", self.step_tol),
            ("max_rotation_step", self.max_rotation_step),
            ("max_translation_step_mm", self.max_translation_step_mm),
            ("max_scale_step", self.max_scale_step),
            ("max_occluded_fraction", self.max_occluded_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_inner_iters == 0 || self.first_frame_iters == 0 {
            return Err(Error::InvalidArgument("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

/// Tracking state carried between frames.
#[derive(Debug, Clone)]
pub struct TrackerState {
    /// Pose estimated for the previous frame.
    pub pose: Pose,
    /// Pixels of the vertices visible in the previous frame.
    pub visible_pixels: Vec<(usize, usize)>,
    /// Accumulated log-scale precision.
    pub lambda_s: f64,
    pub prev_frame: Option<DepthFrame>,
    /// Frames tracked so far.
    pub frame_index: usize,
}

impl TrackerState {
    /// State for the first frame: localized pose, temporal and scale terms
    /// inactive.
    pub fn initialize(frame: &DepthFrame, k: &CameraIntrinsics) -> Result<Self> {
        let (_, pose) = localize_face(frame, k)?;
        Ok(Self::from_pose(pose))
    }

    pub fn from_pose(pose: Pose) -> Self {
        Self {
            pose,
            visible_pixels: Vec::new(),
            lambda_s: 0.0,
            prev_frame: None,
            frame_index: 0,
        }
    }

    /// Adopts a newly selected identity: the scale restarts from its stored
    /// value with one frame of precision.
    pub fn reset_scale(&mut self, alpha: f64, config: &TrackConfig) {
        self.pose.alpha = alpha;
        self.lambda_s = 1.0 / config.sigma_s_sq;
    }

    fn is_first(&self) -> bool {
        self.prev_frame.is_none()
    }
}

/// Depth-flow cost of moving the previous visible pixels by `delta`.
pub fn temporal_cost(
    delta: &Pose,
    state: &TrackerState,
    frame: &DepthFrame,
    k: &CameraIntrinsics,
    config: &TrackConfig,
) -> f64 {
    let Some(prev) = &state.prev_frame else {
        return 0.0;
    };
    let data = TemporalData::new(&state.visible_pixels, prev, k, config.sigma_t_sq);
    objective::temporal_evaluation(delta, &state.pose, &data, frame, k, Derivatives::None).value
}

/// Large pose jumps or heavy occlusion.
pub fn detect_failure(delta: &Pose, labels: &VisibilityLabels, config: &TrackConfig) -> bool {
    motion_failure(delta, config) || labels.occluded_fraction() > config.max_occluded_fraction
}

fn motion_failure(delta: &Pose, config: &TrackConfig) -> bool {
    delta.omega.norm() > config.max_rotation_step
        || delta.t.norm() > config.max_translation_step_mm
        || delta.alpha.abs() > config.max_scale_step
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    pub step_tol: f64,
    pub labels: LabelPolicy,
    /// Keep the log-scale increment at zero.
    pub fix_alpha: bool,
}

impl MinimizeOptions {
    pub fn from_config(config: &TrackConfig) -> Self {
        Self {
            max_iters: config.max_inner_iters,
            step_tol: config.step_tol,
            labels: LabelPolicy::Classify,
            fix_alpha: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimization {
    pub delta: Pose,
    pub rays: Vec<RayCorrespondence>,
    /// Classification at the final pose.
    pub labels: VisibilityLabels,
    pub iterations: usize,
    /// Objective after each accepted step, under that step's frozen rays
    /// and labels, preceded by the value before the step.
    pub accepted: Vec<(f64, f64)>,
}

type Mat7 = SMatrix<f64, 7, 7>;
type Vec7 = nalgebra::SVector<f64, 7>;

const MAX_STEP_TRIALS: usize = 12;

/// Alternates visibility classification with damped Gauss-Newton
/// (Levenberg-Marquardt) steps on the frozen-label objective, starting from
/// increment `start`.
pub fn minimize(objective: &FrameObjective, start: Pose, options: &MinimizeOptions) -> Minimization {
    let mut delta = start;
    if options.fix_alpha {
        delta.alpha = 0.0;
    }
    let mut mu = 1e-4;
    let mut accepted = Vec::new();
    let mut iterations = 0;
    for _ in 0..options.max_iters {
        iterations += 1;
        let (rays, labels) = objective.correspond(&delta, options.labels);
        let ev = objective.evaluate(&delta, &rays, &labels, Derivatives::GradientAndCurvature);
        let mut g: Vec7 = ev.gradient;
        let mut h: Mat7 = ev.curvature;
        if options.fix_alpha {
            g[6] = 0.0;
            h.row_mut(6).fill(0.0);
            h.column_mut(6).fill(0.0);
            h[(6, 6)] = 1.0;
        }
        let x = Vec7::from(delta.to_array());
        let mut step_norm = 0.0;
        let mut stepped = false;
        for _ in 0..MAX_STEP_TRIALS {
            let mut a = h;
            for i in 0..7 {
                a[(i, i)] += mu * h[(i, i)].max(1e-9);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = -chol.solve(&g);
            let trial = Pose::from_array(&(x + step).into());
            let value = objective.evaluate(&trial, &rays, &labels, Derivatives::None).value;
            let predicted = -(g.dot(&step) + 0.5 * step.dot(&(h * step)));
            if value <= ev.value && value.is_finite() {
                let rho = if predicted > 0.0 { (ev.value - value) / predicted } else { 1.0 };
                mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                mu = mu.max(1e-12);
                accepted.push((ev.value, value));
                delta = trial;
                step_norm = step.norm();
                stepped = true;
                break;
            }
            mu *= 4.0;
        }
        if !stepped || step_norm < options.step_tol {
            break;
        }
    }
    let (rays, labels) = objective.correspond(&delta, options.labels);
    Minimization {
        delta,
        rays,
        labels,
        iterations,
        accepted,
    }
}

/// Registers the face to a single frame from `init`, without temporal or
/// scale terms.
pub fn minimize_rvs(
    dist: &FaceDistribution,
    frame: &DepthFrame,
    k: &CameraIntrinsics,
    init: &Pose,
    params: &RvsParams,
    options: &MinimizeOptions,
) -> Result<Pose> {
    let objective = FrameObjective::new(*init, dist, frame, *k, *params, None, 0.0)?;
    let result = minimize(&objective, Pose::identity(), options);
    Ok(objective.pose_at(&result.delta))
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub pose: Pose,
    /// Increment from the previous pose.
    pub delta: Pose,
    pub labels: VisibilityLabels,
    /// Failure criteria still met after any recovery.
    pub failed: bool,
    pub pso_used: bool,
    pub iterations: usize,
}

/// Tracks one frame from `state`, updating it in place on success.
///
/// A detected failure triggers a particle swarm search followed by another
/// local minimization. If the recovered motion still exceeds the jump
/// limits the frame is reported as lost and `state` is left untouched.
pub fn track_frame(
    state: &mut TrackerState,
    frame: &DepthFrame,
    dist: &FaceDistribution,
    k: &CameraIntrinsics,
    config: &TrackConfig,
) -> Result<FrameResult> {
    let first = state.is_first();
    let temporal = match (&state.prev_frame, config.use_temporal) {
        (Some(prev), true) if !state.visible_pixels.is_empty() => {
            Some(TemporalData::new(&state.visible_pixels, prev, k, config.sigma_t_sq))
        }
        _ => None,
    };
    let lambda_s = if config.use_scale { state.lambda_s } else { 0.0 };
    let objective = FrameObjective::new(state.pose, dist, frame, *k, config.rvs, temporal, lambda_s)?;
    let mut options = MinimizeOptions::from_config(config);
    if first {
        // nothing anchors the scale before it has been observed once
        options.max_iters = config.first_frame_iters;
        options.fix_alpha = true;
    }
    let start = if first {
        initial_orientation(&objective, config)
    } else {
        Pose::identity()
    };
    let mut result = minimize(&objective, start, &options);
    let mut pso_used = false;
    let check = |r: &Minimization| {
        if first {
            r.labels.occluded_fraction() > config.max_occluded_fraction
        } else {
            detect_failure(&r.delta, &r.labels, config)
        }
    };
    if check(&result) && config.use_pso {
        pso_used = true;
        let fitness = |d: &Pose| objective.search_fitness(d);
        let seed = if fitness(&result.delta) <= fitness(&Pose::identity()) {
            result.delta
        } else {
            Pose::identity()
        };
        let mut pso = config.pso;
        pso.seed = pso.seed.wrapping_add(state.frame_index as u64);
        let found = pso_refine(fitness, &seed, &pso);
        result = minimize(&objective, found, &options);
    }
    if !first && motion_failure(&result.delta, config) {
        return Err(Error::TrackingLost {
            frame: state.frame_index,
        });
    }
    let failed = check(&result);
    let pose = objective.pose_at(&result.delta);

    state.visible_pixels = visible_pixels(&pose, dist, &result.labels, frame, k);
    state.pose = pose;
    state.lambda_s += 1.0 / config.sigma_s_sq;
    state.prev_frame = Some(frame.clone());
    state.frame_index += 1;
    Ok(FrameResult {
        pose,
        delta: result.delta,
        labels: result.labels,
        failed,
        pso_used,
        iterations: result.iterations,
    })
}

/// Best of short minimizations started from each yaw hypothesis, ranked by
/// the swarm fitness.
fn initial_orientation(objective: &FrameObjective, config: &TrackConfig) -> Pose {
    let step = config.init_yaw_step_deg.max(1e-3);
    let n = (config.init_yaw_span_deg.max(0.0) / step).floor() as i64;
    let options = MinimizeOptions {
        fix_alpha: true,
        ..MinimizeOptions::from_config(config)
    };
    let mut best = (f64::INFINITY, Pose::identity());
    for i in -n..=n {
        let start = Pose::new(Vec3::new(0.0, (i as f64 * step).to_radians(), 0.0), Vec3::zeros(), 0.0);
        let delta = minimize(objective, start, &options).delta;
        let fitness = objective.search_fitness(&delta);
        if fitness < best.0 {
            best = (fitness, delta);
        }
    }
    best.1
}

/// Deduplicated pixels under the visible vertices at `pose`, restricted to
/// pixels with depth.
fn visible_pixels(
    pose: &Pose,
    dist: &FaceDistribution,
    labels: &VisibilityLabels,
    frame: &DepthFrame,
    k: &CameraIntrinsics,
) -> Vec<(usize, usize)> {
    let mut px: Vec<(usize, usize)> = dist
        .mu
        .iter()
        .zip(&labels.gamma)
        .filter(|(_, g)| **g == Visibility::Visible)
        .filter_map(|(mu, _)| {
            let q: Vec3 = pose.transform(mu);
            let p = k.project(&q).ok()?;
            let (u, v) = (p.x.round(), p.y.round());
            if u < 0.0 || v < 0.0 {
                return None;
            }
            let (u, v) = (u as usize, v as usize);
            frame.get(u, v).map(|_| (u, v))
        })
        .collect();
    px.sort_unstable_by_key(|&(u, v)| (v, u));
    px.dedup();
    px
}
