use crate::error::Result;
use crate::face_model::FaceDistribution;
use crate::geometry::{cloud_from_frame, DISCONTINUITY_MM, rotation_jacobian, CameraIntrinsics, DepthFrame, PointCloud, Pose, Roi, Vec3};
use crate::visibility::{
    all_visible, classify_with_jet, correspond, kl_occluded, Derivatives, Evaluation, PoseGradient, PoseJet,
    RayCorrespondence, RvsParams, VisibilityLabels,
};

/// How visibility labels are assigned during minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// One-standard-deviation rule at the current pose.
    Classify,
    /// Every matched ray visible.
    AllVisible,
}

/// Depth-flow data carried over from the previous frame.
#[derive(Debug, Clone)]
pub struct TemporalData {
    /// Back-projected previous visible pixels (mm).
    pub points: Vec<Vec3>,
    pub sigma_t_sq: f64,
}

impl TemporalData {
    /// Back-projects `pixels` through the previous frame, dropping pixels
    /// without depth.
    pub fn new(pixels: &[(usize, usize)], prev: &DepthFrame, k: &CameraIntrinsics, sigma_t_sq: f64) -> Self {
        let points = pixels
            .iter()
            .filter_map(|&(u, v)| prev.get(u, v).map(|d| k.backproject_unchecked(u as f64, v as f64, d)))
            .collect();
        Self { points, sigma_t_sq }
    }
}

/// The per-frame objective `L(delta) = L_rvs(base + delta) + L_t(delta) +
/// L_s(delta)` over incremental poses `delta` applied to `base` with
/// [`Pose::compose_increment`].
#[derive(Debug, Clone)]
pub struct FrameObjective<'a> {
    pub base: Pose,
    pub dist: &'a FaceDistribution,
    pub frame: &'a DepthFrame,
    pub cloud: PointCloud,
    pub k: CameraIntrinsics,
    pub params: RvsParams,
    pub temporal: Option<TemporalData>,
    pub lambda_s: f64,
}

/// Fraction by which the projected face box is grown to form the cloud region.
const ROI_MARGIN: f64 = 0.3;

/// Bounding box of the face's mean vertices projected at `pose`, grown by a
/// margin and clipped to the frame.
pub fn face_roi(dist: &FaceDistribution, pose: &Pose, k: &CameraIntrinsics, width: usize, height: usize) -> Roi {
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for mu in &dist.mu {
        let q = pose.transform(mu);
        if q.z <= 0.0 {
            continue;
        }
        let p = k.project_unchecked(&q);
        u0 = u0.min(p.x);
        v0 = v0.min(p.y);
        u1 = u1.max(p.x);
        v1 = v1.max(p.y);
    }
    if !u0.is_finite() {
        return Roi::full(width, height);
    }
    let (w, h) = (u1 - u0, v1 - v0);
    Roi::centered(
        (u0 + u1) / 2.0,
        (v0 + v1) / 2.0,
        w * (1.0 + 2.0 * ROI_MARGIN) + 10.0,
        h * (1.0 + 2.0 * ROI_MARGIN) + 10.0,
        width,
        height,
    )
}

impl<'a> FrameObjective<'a> {
    /// Builds the objective with the point cloud of the face region around
    /// `base`.
    pub fn new(
        base: Pose,
        dist: &'a FaceDistribution,
        frame: &'a DepthFrame,
        k: CameraIntrinsics,
        params: RvsParams,
        temporal: Option<TemporalData>,
        lambda_s: f64,
    ) -> Result<Self> {
        let roi = face_roi(dist, &base, &k, frame.width, frame.height);
        let cloud = cloud_from_frame(frame, roi, &k)?;
        Ok(Self {
            base,
            dist,
            frame,
            cloud,
            k,
            params,
            temporal,
            lambda_s,
        })
    }

    pub fn pose_at(&self, delta: &Pose) -> Pose {
        self.base.compose_increment(delta)
    }

    fn jet(&self, delta: &Pose) -> PoseJet {
        PoseJet::incremental(&self.base, delta)
    }

    /// Ray correspondences and labels at `base + delta`.
    pub fn correspond(&self, delta: &Pose, policy: LabelPolicy) -> (Vec<RayCorrespondence>, VisibilityLabels) {
        let pose = self.pose_at(delta);
        let rays = correspond(self.dist, &pose, self.frame, &self.cloud, &self.k);
        let labels = match policy {
            LabelPolicy::Classify => classify_with_jet(&rays, &self.jet(delta), self.dist, &self.params),
            LabelPolicy::AllVisible => all_visible(&rays),
        };
        (rays, labels)
    }

    pub(crate) fn evaluate(
        &self,
        delta: &Pose,
        rays: &[RayCorrespondence],
        labels: &VisibilityLabels,
        want: Derivatives,
    ) -> Evaluation {
        let mut out = self.jet(delta).accumulate(self.dist, rays, labels, &self.params, want);
        if let Some(temporal) = &self.temporal {
            out.add(&temporal_evaluation(delta, &self.base, temporal, self.frame, &self.k, want));
        }
        out.value += scale_cost(delta.alpha, self.lambda_s);
        if want != Derivatives::None {
            out.gradient[6] += self.lambda_s * delta.alpha;
        }
        if want == Derivatives::GradientAndCurvature {
            out.curvature[(6, 6)] += self.lambda_s;
        }
        out
    }

    /// Objective with the given rays and labels held fixed.
    pub fn value(&self, delta: &Pose, rays: &[RayCorrespondence], labels: &VisibilityLabels) -> f64 {
        self.evaluate(delta, rays, labels, Derivatives::None).value
    }

    /// Gradient with respect to the components of `delta`, rays and labels
    /// held fixed.
    pub fn gradient(&self, delta: &Pose, rays: &[RayCorrespondence], labels: &VisibilityLabels) -> PoseGradient {
        self.evaluate(delta, rays, labels, Derivatives::Gradient).gradient
    }

    /// Objective after re-corresponding and re-classifying at `delta`.
    pub fn value_fresh(&self, delta: &Pose) -> f64 {
        let (rays, labels) = self.correspond(delta, LabelPolicy::Classify);
        self.value(delta, &rays, &labels)
    }

    /// Swarm fitness: the objective plus the occluded-ray cost for every
    /// vertex landing on missing depth, so poses cannot improve by sliding
    /// off the data.
    pub fn search_fitness(&self, delta: &Pose) -> f64 {
        let (rays, labels) = self.correspond(delta, LabelPolicy::Classify);
        let unmatched = rays.iter().filter(|r| r.hit.is_none()).count();
        self.value(delta, &rays, &labels) + unmatched as f64 * kl_occluded(self.params.sigma_o_sq, self.params.u_o)
    }
}

/// `(1/2) lambda_s (delta_alpha)^2`.
pub fn scale_cost(delta_alpha: f64, lambda_s: f64) -> f64 {
    0.5 * lambda_s * delta_alpha * delta_alpha
}

/// Depth-flow residuals of the previous visible points moved by `delta`
/// (rotation about the previous head center `base.t`). Points landing on
/// missing depth, or on depth differing by more than the discontinuity
/// threshold, are dropped.
pub(crate) fn temporal_evaluation(
    delta: &Pose,
    base: &Pose,
    data: &TemporalData,
    frame: &DepthFrame,
    k: &CameraIntrinsics,
    want: Derivatives,
) -> Evaluation {
    let mut out = Evaluation::zero();
    let r = delta.rotation();
    let dr = rotation_jacobian(&delta.omega);
    let s = delta.alpha.exp();
    let inv = 1.0 / data.sigma_t_sq;
    for p in &data.points {
        let local = p - base.t;
        let rl = r * local;
        let q = s * rl + base.t + delta.t;
        if q.z <= 0.0 {
            continue;
        }
        let px = k.project_unchecked(&q);
        let Some((d, grad)) = frame.sample_bilinear_with_gradient(px.x, px.y) else {
            continue;
        };
        let res = d - q.z;
        // a jump this large means the point is no longer the surface it was
        if res.abs() > DISCONTINUITY_MM {
            continue;
        }
        out.value += 0.5 * inv * res * res;
        if want == Derivatives::None {
            continue;
        }
        // d res / d q = grad^T J_pi(q) - e_z
        let jp = k.projection_jacobian(&q);
        let mut dq = jp.transpose() * grad;
        dq.z -= 1.0;
        let mut j = PoseGradient::zeros();
        for i in 0..3 {
            j[i] = dq.dot(&(s * (dr[i] * local)));
        }
        j[3] = dq.x;
        j[4] = dq.y;
        j[5] = dq.z;
        j[6] = dq.dot(&(s * rl));
        out.gradient += j * (res * inv);
        if want == Derivatives::GradientAndCurvature {
            out.curvature += j * j.transpose() * inv;
        }
    }
    out
}
