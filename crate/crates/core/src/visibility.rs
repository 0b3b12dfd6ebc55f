//! Ray correspondences, visibility labels, and the ray visibility score.
//!
//! Each warped model vertex is matched to the depth surface along its camera
//! ray. Its signed distance to the local tangent plane is Gaussian (model
//! uncertainty plus sensor noise). A vertex is visible when that distance is
//! within one standard deviation or negative, occluded when beyond it. The
//! score is the summed KL divergence from the projected face distribution to
//! the label-conditioned surface distribution: a zero-mean Gaussian for
//! visible rays, a uniform occluder density for occluded ones.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::FaceDistribution;
use crate::geometry::{rotation_jacobian, CameraIntrinsics, DepthFrame, Mat3, PointCloud, Pose, Vec3};

pub type PoseGradient = SVector<f64, 7>;
pub type PoseHessian = SMatrix<f64, 7, 7>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RvsParams {
    /// Surface noise variance (mm^2).
    pub sigma_o_sq: f64,
    /// Uniform occluder density (1/mm).
    pub u_o: f64,
    /// Support of the occluder density (mm).
    pub occlusion_range: (f64, f64),
}

impl Default for RvsParams {
    fn default() -> Self {
        Self {
            sigma_o_sq: 25.0,
            u_o: 1.0 / 2500.0,
            occlusion_range: (0.0, 2500.0),
        }
    }
}

impl RvsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_o_sq > 0.0) || !(self.u_o > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_o_sq and u_o must be positive, got {} and {}",
                self.sigma_o_sq, self.u_o
            )));
        }
        Ok(())
    }
}

/// Where a vertex ray meets the observed surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Intersected cloud point (mm).
    pub p: Vec3,
    /// Unit surface normal pointing away from the camera.
    pub normal: Vec3,
    /// Sub-pixel location of the warped vertex.
    pub pixel: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayCorrespondence {
    pub vertex: usize,
    /// `None` when the ray has no usable depth or normal.
    pub hit: Option<RayHit>,
}

impl RayCorrespondence {
    pub fn is_matched(&self) -> bool {
        self.hit.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Visibility {
    Visible,
    Occluded,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityLabels {
    pub gamma: Vec<Visibility>,
}

impl VisibilityLabels {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn count(&self, which: Visibility) -> usize {
        self.gamma.iter().filter(|&&g| g == which).count()
    }

    /// Occluded vertices relative to all model vertices.
    pub fn occluded_fraction(&self) -> f64 {
        if self.gamma.is_empty() {
            return 0.0;
        }
        self.count(Visibility::Occluded) as f64 / self.gamma.len() as f64
    }
}

/// Warps every mean vertex by `pose` and reads the surface along its ray.
pub fn correspond(
    dist: &FaceDistribution,
    pose: &Pose,
    frame: &DepthFrame,
    cloud: &PointCloud,
    k: &CameraIntrinsics,
) -> Vec<RayCorrespondence> {
    let r = pose.rotation();
    let s = pose.scale();
    dist.mu
        .iter()
        .enumerate()
        .map(|(vertex, mu)| {
            let q = s * (r * mu) + pose.t;
            RayCorrespondence {
                vertex,
                hit: hit_along_ray(&q, frame, cloud, k),
            }
        })
        .collect()
}

fn hit_along_ray(q: &Vec3, frame: &DepthFrame, cloud: &PointCloud, k: &CameraIntrinsics) -> Option<RayHit> {
    if !(q.z > 0.0) {
        return None;
    }
    let px = k.project_unchecked(q);
    let depth = frame.sample_bilinear(px.x, px.y)?;
    let normal = cloud.normal_at(px.x.round() as usize, px.y.round() as usize)?;
    Some(RayHit {
        p: k.backproject_unchecked(px.x, px.y, depth),
        normal,
        pixel: (px.x, px.y),
    })
}

/// `n^T (q - p)`: negative when `q` lies in front of the surface.
pub fn signed_distance(q: &Vec3, ray: &RayCorrespondence) -> Result<f64> {
    let hit = ray.hit.ok_or(Error::NoData {
        u: f64::NAN,
        v: f64::NAN,
    })?;
    Ok(hit.normal.dot(&(q - hit.p)))
}

/// Mean and variance of a vertex's signed distance to its ray's surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean: f64,
    pub var: f64,
}

pub fn projected_distribution(
    ray: &RayCorrespondence,
    pose: &Pose,
    dist: &FaceDistribution,
    params: &RvsParams,
) -> Result<ProjectedGaussian> {
    let hit = ray.hit.ok_or(Error::NoData {
        u: f64::NAN,
        v: f64::NAN,
    })?;
    let jet = PoseJet::absolute(pose);
    let (mean, var) = jet.moments(&dist.mu[ray.vertex], &dist.sigma_blocks[ray.vertex], &hit, params);
    Ok(ProjectedGaussian { mean, var })
}

#[inline]
fn label_for(mean: f64, var: f64) -> Visibility {
    if mean <= var.sqrt() {
        Visibility::Visible
    } else {
        Visibility::Occluded
    }
}

pub fn classify_visibility(
    rays: &[RayCorrespondence],
    pose: &Pose,
    dist: &FaceDistribution,
    params: &RvsParams,
) -> VisibilityLabels {
    classify_with_jet(rays, &PoseJet::absolute(pose), dist, params)
}

pub(crate) fn classify_with_jet(
    rays: &[RayCorrespondence],
    jet: &PoseJet,
    dist: &FaceDistribution,
    params: &RvsParams,
) -> VisibilityLabels {
    VisibilityLabels {
        gamma: rays
            .iter()
            .map(|ray| match &ray.hit {
                None => Visibility::Excluded,
                Some(hit) => {
                    let (m, s2) = jet.moments(&dist.mu[ray.vertex], &dist.sigma_blocks[ray.vertex], hit, params);
                    label_for(m, s2)
                }
            })
            .collect(),
    }
}

/// Every matched ray labeled visible. With zero covariance this turns the
/// score into a point-to-plane least-squares objective.
pub fn all_visible(rays: &[RayCorrespondence]) -> VisibilityLabels {
    VisibilityLabels {
        gamma: rays
            .iter()
            .map(|r| if r.is_matched() { Visibility::Visible } else { Visibility::Excluded })
            .collect(),
    }
}

/// `KL[N(m, s2) || N(0, sigma_o_sq)]`.
pub fn kl_visible(m: f64, s2: f64, sigma_o_sq: f64) -> f64 {
    0.5 * (sigma_o_sq / s2).ln() + (s2 + m * m) / (2.0 * sigma_o_sq) - 0.5
}

/// `KL[N(m, s2) || U_O]` with the uniform density taken as unbounded; the
/// mean drops out.
pub fn kl_occluded(s2: f64, u_o: f64) -> f64 {
    -u_o.ln() - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s2).ln()
}

pub fn rvs_score(pose: &Pose, dist: &FaceDistribution, rays: &[RayCorrespondence], params: &RvsParams) -> f64 {
    let labels = classify_visibility(rays, pose, dist, params);
    rvs_score_with_labels(pose, dist, rays, &labels, params)
}

pub fn rvs_score_with_labels(
    pose: &Pose,
    dist: &FaceDistribution,
    rays: &[RayCorrespondence],
    labels: &VisibilityLabels,
    params: &RvsParams,
) -> f64 {
    PoseJet::absolute(pose)
        .accumulate(dist, rays, labels, params, Derivatives::None)
        .value
}

/// Gradient of the score with respect to `(omega, t, alpha)`, labels frozen
/// at their classification under `pose`.
pub fn rvs_gradient(pose: &Pose, dist: &FaceDistribution, rays: &[RayCorrespondence], params: &RvsParams) -> PoseGradient {
    let labels = classify_visibility(rays, pose, dist, params);
    rvs_gradient_with_labels(pose, dist, rays, &labels, params)
}

pub fn rvs_gradient_with_labels(
    pose: &Pose,
    dist: &FaceDistribution,
    rays: &[RayCorrespondence],
    labels: &VisibilityLabels,
    params: &RvsParams,
) -> PoseGradient {
    PoseJet::absolute(pose)
        .accumulate(dist, rays, labels, params, Derivatives::Gradient)
        .gradient
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Derivatives {
    None,
    Gradient,
    GradientAndCurvature,
}

/// Objective value with optional gradient and Gauss-Newton curvature.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub gradient: PoseGradient,
    pub curvature: PoseHessian,
}

impl Evaluation {
    pub(crate) fn zero() -> Self {
        Self {
            value: 0.0,
            gradient: PoseGradient::zeros(),
            curvature: PoseHessian::zeros(),
        }
    }

    pub(crate) fn add(&mut self, other: &Evaluation) {
        self.value += other.value;
        self.gradient += other.gradient;
        self.curvature += other.curvature;
    }
}

/// A rigid transform together with the derivatives of its rotation with
/// respect to three rotation parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoseJet {
    pub rot: Mat3,
    pub drot: [Mat3; 3],
    pub scale: f64,
    pub t: Vec3,
}

impl PoseJet {
    pub(crate) fn absolute(pose: &Pose) -> Self {
        Self {
            rot: pose.rotation(),
            drot: rotation_jacobian(&pose.omega),
            scale: pose.scale(),
            t: pose.t,
        }
    }

    /// Pose `base` advanced by `delta` (see [`Pose::compose_increment`]),
    /// differentiated with respect to the components of `delta`.
    pub(crate) fn incremental(base: &Pose, delta: &Pose) -> Self {
        let r0 = base.rotation();
        let dr = rotation_jacobian(&delta.omega);
        Self {
            rot: delta.rotation() * r0,
            drot: [dr[0] * r0, dr[1] * r0, dr[2] * r0],
            scale: (base.alpha + delta.alpha).exp(),
            t: base.t + delta.t,
        }
    }

    #[inline]
    pub(crate) fn apply(&self, f: &Vec3) -> Vec3 {
        self.scale * (self.rot * f) + self.t
    }

    #[inline]
    fn moments(&self, mu: &Vec3, sigma: &Mat3, hit: &RayHit, params: &RvsParams) -> (f64, f64) {
        let q = self.apply(mu);
        let n = hit.normal;
        let rn = self.rot.transpose() * n;
        let var = params.sigma_o_sq + self.scale * self.scale * rn.dot(&(sigma * rn));
        (n.dot(&(q - hit.p)), var)
    }

    pub(crate) fn accumulate(
        &self,
        dist: &FaceDistribution,
        rays: &[RayCorrespondence],
        labels: &VisibilityLabels,
        params: &RvsParams,
        want: Derivatives,
    ) -> Evaluation {
        let mut out = Evaluation::zero();
        let so2 = params.sigma_o_sq;
        let s2 = self.scale * self.scale;
        for (ray, gamma) in rays.iter().zip(&labels.gamma) {
            let Some(hit) = &ray.hit else { continue };
            if *gamma == Visibility::Excluded {
                continue;
            }
            let mu = &dist.mu[ray.vertex];
            let sigma = &dist.sigma_blocks[ray.vertex];
            let n = hit.normal;
            let rn = self.rot.transpose() * n;
            let sigma_rn = sigma * rn;
            let model_var = s2 * rn.dot(&sigma_rn);
            let var = so2 + model_var;
            let visible = *gamma == Visibility::Visible;
            let m = if visible {
                n.dot(&(self.apply(mu) - hit.p))
            } else {
                0.0
            };
            out.value += if visible {
                kl_visible(m, var, so2)
            } else {
                kl_occluded(var, params.u_o)
            };
            if want == Derivatives::None {
                continue;
            }
            // d var / d theta; rotation enters through R^T n.
            let mut dvar = PoseGradient::zeros();
            for i in 0..3 {
                dvar[i] = 2.0 * s2 * (self.drot[i].transpose() * n).dot(&sigma_rn);
            }
            dvar[6] = 2.0 * model_var;
            let dkl_dvar = if visible {
                0.5 / so2 - 0.5 / var
            } else {
                -0.5 / var
            };
            out.gradient += dvar * dkl_dvar;
            let curv_var = 0.5 / (var * var);
            if visible {
                let mut dm = PoseGradient::zeros();
                for i in 0..3 {
                    dm[i] = self.scale * n.dot(&(self.drot[i] * mu));
                }
                dm[3] = n.x;
                dm[4] = n.y;
                dm[5] = n.z;
                dm[6] = self.scale * n.dot(&(self.rot * mu));
                out.gradient += dm * (m / so2);
                if want == Derivatives::GradientAndCurvature {
                    out.curvature += dm * dm.transpose() / so2;
                }
            }
            if want == Derivatives::GradientAndCurvature {
                out.curvature += dvar * dvar.transpose() * curv_var;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn one_vertex_dist(mu: Vec3, sigma: Mat3) -> FaceDistribution {
        FaceDistribution {
            mu: vec![mu],
            sigma_blocks: vec![sigma],
            p_id: DMatrix::zeros(3, 1),
            p_exp: DMatrix::zeros(3, 1),
        }
    }

    fn ray_at(p: Vec3, normal: Vec3) -> RayCorrespondence {
        RayCorrespondence {
            vertex: 0,
            hit: Some(RayHit {
                p,
                normal,
                pixel: (0.0, 0.0),
            }),
        }
    }

    #[test]
    fn signed_distance_examples() {
        let p = Vec3::new(10.0, -4.0, 900.0);
        let n = Vec3::new(0.0, 0.6, 0.8);
        let ray = ray_at(p, n);
        assert_eq!(signed_distance(&p, &ray).unwrap(), 0.0);
        assert!((signed_distance(&(p + 5.0 * n), &ray).unwrap() - 5.0).abs() < 1e-12);
        assert!((signed_distance(&(p - 3.0 * n), &ray).unwrap() + 3.0).abs() < 1e-12);
        let none = RayCorrespondence { vertex: 0, hit: None };
        assert!(signed_distance(&p, &none).is_err());
    }

    #[test]
    fn projected_variance_examples() {
        let params = RvsParams::default();
        let n = Vec3::z();
        let ray = ray_at(Vec3::new(0.0, 0.0, 1000.0), n);
        let dist = one_vertex_dist(Vec3::zeros(), Mat3::zeros());
        let pose = Pose::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 1000.0), 0.0);
        let g = projected_distribution(&ray, &pose, &dist, &params).unwrap();
        assert_eq!(g.var, 25.0);
        assert_eq!(g.mean, 0.0);

        let sigma = Mat3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0);
        let omega = Vec3::new(0.2, -0.1, 0.3);
        let dist = one_vertex_dist(Vec3::zeros(), sigma);
        let base = projected_distribution(&ray, &Pose::new(omega, pose.t, 0.0), &dist, &params).unwrap();
        let doubled = projected_distribution(&ray, &Pose::new(omega, pose.t, 2f64.ln()), &dist, &params).unwrap();
        let r = crate::geometry::rotation_matrix(&omega);
        let model = n.dot(&(r * sigma * r.transpose() * n));
        assert!((base.var - (25.0 + model)).abs() < 1e-12);
        assert!((doubled.var - (25.0 + 4.0 * model)).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let params = RvsParams::default();
        let dist = one_vertex_dist(Vec3::zeros(), Mat3::zeros());
        let pose = Pose::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 1000.0), 0.0);
        let label_at = |surface_z: f64| {
            let ray = ray_at(Vec3::new(0.0, 0.0, surface_z), Vec3::z());
            classify_visibility(&[ray], &pose, &dist, &params).gamma[0]
        };
        assert_eq!(label_at(1000.0), Visibility::Visible);
        // m = 10 sigma behind the surface
        assert_eq!(label_at(950.0), Visibility::Occluded);
        // model 50 mm in front of the surface
        assert_eq!(label_at(1050.0), Visibility::Visible);
        let none = RayCorrespondence { vertex: 0, hit: None };
        assert_eq!(classify_visibility(&[none], &pose, &dist, &params).gamma[0], Visibility::Excluded);
    }

    #[test]
    fn kl_closed_forms() {
        assert!(kl_visible(0.0, 25.0, 25.0).abs() < 1e-15);
        let occ = kl_occluded(25.0, 1.0 / 2500.0);
        let expected = 2500f64.ln() - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 25.0).ln();
        assert!((occ - expected).abs() < 1e-12);
        assert!((occ - 4.794).abs() < 2e-3);
    }

    #[test]
    fn occluded_term_has_no_translation_gradient() {
        let params = RvsParams::default();
        let sigma = Mat3::new(9.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 16.0);
        let dist = one_vertex_dist(Vec3::new(10.0, 5.0, -20.0), sigma);
        let pose = Pose::new(Vec3::new(0.1, 0.2, 0.0), Vec3::new(0.0, 0.0, 1000.0), 0.1);
        let ray = ray_at(Vec3::new(0.0, 0.0, 900.0), Vec3::new(0.1, 0.0, 1.0).normalize());
        let labels = VisibilityLabels { gamma: vec![Visibility::Occluded] };
        let g = rvs_gradient_with_labels(&pose, &dist, &[ray], &labels, &params);
        assert_eq!((g[3], g[4], g[5]), (0.0, 0.0, 0.0));
        assert!(g[0].abs() + g[1].abs() + g[2].abs() > 0.0);
    }

    #[test]
    fn gradient_matches_central_differences_on_random_rays() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let params = RvsParams::default();
        let n_rays = 50;
        let mut mu = Vec::new();
        let mut blocks = Vec::new();
        let mut rays = Vec::new();
        for v in 0..n_rays {
            mu.push(Vec3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-60.0..0.0)));
            let a = Mat3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            blocks.push(a * a.transpose());
            let normal = Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), 1.0).normalize();
            rays.push(RayCorrespondence {
                vertex: v,
                hit: Some(RayHit {
                    p: Vec3::new(mu[v].x, mu[v].y, 1000.0 + mu[v].z + rng.random_range(-15.0..15.0)),
                    normal,
                    pixel: (0.0, 0.0),
                }),
            });
        }
        let dist = FaceDistribution {
            mu,
            sigma_blocks: blocks,
            p_id: DMatrix::zeros(3 * n_rays, 1),
            p_exp: DMatrix::zeros(3 * n_rays, 1),
        };
        let pose = Pose::new(Vec3::new(0.05, -0.08, 0.02), Vec3::new(1.0, -2.0, 1003.0), 0.03);
        let labels = classify_visibility(&rays, &pose, &dist, &params);
        assert!(labels.count(Visibility::Occluded) > 0 && labels.count(Visibility::Visible) > 0);
        let g = rvs_gradient_with_labels(&pose, &dist, &rays, &labels, &params);
        let h = 1e-5;
        let x = pose.to_array();
        for i in 0..7 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (rvs_score_with_labels(&Pose::from_array(&xp), &dist, &rays, &labels, &params)
                - rvs_score_with_labels(&Pose::from_array(&xm), &dist, &rays, &labels, &params))
                / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-4, "component {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn score_is_monotone_in_visible_residual() {
        let params = RvsParams::default();
        let dist = one_vertex_dist(Vec3::zeros(), Mat3::identity() * 3.0);
        let pose = Pose::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 1000.0), 0.0);
        let labels = VisibilityLabels { gamma: vec![Visibility::Visible] };
        let mut prev = f64::INFINITY;
        for off in [-40.0, -20.0, -10.0, -2.0, 0.0] {
            let ray = ray_at(Vec3::new(0.0, 0.0, 1000.0 - off), Vec3::z());
            let s = rvs_score_with_labels(&pose, &dist, &[ray], &labels, &params);
            assert!(s >= 0.0 && s <= prev);
            prev = s;
        }
    }
}
