//! Pinhole camera, depth frames, rigid transforms with log-scale, and
//! point clouds with plane-fit normals.
//!
//! Camera coordinates follow the usual depth-sensor convention: x to the
//! right, y down, z along the optical axis away from the camera. All lengths
//! are millimeters.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depth value reserved for "no measurement".
pub const MISSING_DEPTH: f32 = 0.0;
/// Valid depths lie strictly below this bound (mm).
pub const MAX_DEPTH_MM: f32 = 10_000.0;
/// Bilinear samples whose four neighbors spread more than this (mm) are
/// treated as straddling a depth discontinuity and discarded.
pub const DISCONTINUITY_MM: f64 = 50.0;
/// Half-width of the square normal-estimation window (5x5 pixels).
pub const NORMAL_WINDOW_RADIUS: i64 = 2;
/// Minimum number of valid neighbors for a plane fit.
pub const NORMAL_MIN_NEIGHBORS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub f: f64,
    /// Principal point, pixels.
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {f}"
            )));
        }
        Ok(Self { f, cx, cy })
    }

    /// Kinect-like 640x480 sensor with f = 575 px.
    pub fn kinect() -> Self {
        Self {
            f: 575.0,
            cx: 320.0,
            cy: 240.0,
        }
    }

    pub fn project(&self, p: &Vec3) -> Result<Vector2<f64>> {
        if !(p.z > 0.0) {
            return Err(Error::Domain(format!(
                "cannot project point with z = {}",
                p.z
            )));
        }
        Ok(self.project_unchecked(p))
    }

    /// Projection without the positive-depth check; callers guarantee z > 0.
    #[inline]
    pub fn project_unchecked(&self, p: &Vec3) -> Vector2<f64> {
        Vector2::new(self.f * p.x / p.z + self.cx, self.f * p.y / p.z + self.cy)
    }

    pub fn backproject(&self, pixel: Vector2<f64>, depth: f64) -> Result<Vec3> {
        if depth == MISSING_DEPTH as f64 {
            return Err(Error::NoData {
                u: pixel.x,
                v: pixel.y,
            });
        }
        if !(depth > 0.0) {
            return Err(Error::Domain(format!("negative depth {depth}")));
        }
        Ok(self.backproject_unchecked(pixel.x, pixel.y, depth))
    }

    #[inline]
    pub fn backproject_unchecked(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new(
            (u - self.cx) / self.f * depth,
            (v - self.cy) / self.f * depth,
            depth,
        )
    }

    /// Jacobian of the projection with respect to the 3D point.
    #[inline]
    pub fn projection_jacobian(&self, p: &Vec3) -> nalgebra::Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let fz = self.f * iz;
        nalgebra::Matrix2x3::new(
            fz,
            0.0,
            -fz * p.x * iz,
            0.0,
            fz,
            -fz * p.y * iz,
        )
    }
}

/// Pixel rectangle `[u0, u0 + width) x [v0, v0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub u0: usize,
    pub v0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            u0: 0,
            v0: 0,
            width,
            height,
        }
    }

    /// Rectangle of the given size centered on `(cu, cv)`, clipped to the frame.
    pub fn centered(cu: f64, cv: f64, width: f64, height: f64, frame_w: usize, frame_h: usize) -> Self {
        let clamp = |x: f64, hi: usize| x.round().clamp(0.0, hi as f64) as usize;
        let u0 = clamp(cu - width / 2.0, frame_w);
        let v0 = clamp(cv - height / 2.0, frame_h);
        let u1 = clamp(cu + width / 2.0, frame_w);
        let v1 = clamp(cv + height / 2.0, frame_h);
        Self {
            u0,
            v0,
            width: u1.saturating_sub(u0),
            height: v1.saturating_sub(v0),
        }
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.u0 && u < self.u0 + self.width && v >= self.v0 && v < self.v0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.u0 as f64 + self.width as f64 / 2.0,
            self.v0 as f64 + self.height as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major depths in mm; [`MISSING_DEPTH`] marks no data.
    pub depth: Vec<f32>,
}

impl DepthFrame {
    /// Frame with every pixel missing.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![MISSING_DEPTH; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "depth buffer",
                expected: width * height,
                got: depth.len(),
            });
        }
        if let Some(bad) = depth
            .iter()
            .find(|&&d| d != MISSING_DEPTH && !(d > 0.0 && d < MAX_DEPTH_MM))
        {
            return Err(Error::InvalidArgument(format!(
                "depth {bad} outside (0, {MAX_DEPTH_MM}) mm"
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        if u >= self.width || v >= self.height {
            return None;
        }
        let d = self.depth[v * self.width + u];
        (d != MISSING_DEPTH).then_some(d as f64)
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, d: f32) {
        self.depth[v * self.width + u] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d != MISSING_DEPTH).count()
    }

    /// Bilinear depth at a sub-pixel location (pixel centers at integer
    /// coordinates). Returns `None` if any of the four neighbors is missing
    /// or they straddle a depth discontinuity.
    #[inline]
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        self.sample_bilinear_with_gradient(u, v).map(|(d, _)| d)
    }

    /// Bilinear depth and its derivative with respect to `(u, v)`.
    pub fn sample_bilinear_with_gradient(&self, u: f64, v: f64) -> Option<(f64, Vector2<f64>)> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let u0 = u.floor();
        let v0 = v.floor();
        let (iu, iv) = (u0 as usize, v0 as usize);
        if iu + 1 >= self.width || iv + 1 >= self.height {
            return None;
        }
        let d00 = self.get(iu, iv)?;
        let d10 = self.get(iu + 1, iv)?;
        let d01 = self.get(iu, iv + 1)?;
        let d11 = self.get(iu + 1, iv + 1)?;
        let lo = d00.min(d10).min(d01).min(d11);
        let hi = d00.max(d10).max(d01).max(d11);
        if hi - lo > DISCONTINUITY_MM {
            return None;
        }
        let fu = u - u0;
        let fv = v - v0;
        let top = d00 + fu * (d10 - d00);
        let bottom = d01 + fu * (d11 - d01);
        let d = top + fv * (bottom - top);
        let du = (1.0 - fv) * (d10 - d00) + fv * (d11 - d01);
        let dv = bottom - top;
        Some((d, Vector2::new(du, dv)))
    }
}

/// Rotation vector (axis times angle) to rotation matrix via Rodrigues' formula.
pub fn rotation_matrix(omega: &Vec3) -> Mat3 {
    Rotation3::new(*omega).into_inner()
}

/// Rotation vector of a rotation matrix (inverse of [`rotation_matrix`]).
pub fn rotation_vector(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Partial derivatives of `rotation_matrix(omega)` with respect to each
/// component of `omega`.
///
/// Uses the closed form `dR/dw_i = (w_i [w]x + [w x (I - R) e_i]x) R / |w|^2`,
/// which reduces to `[e_i]x` at the origin.
pub fn rotation_jacobian(omega: &Vec3) -> [Mat3; 3] {
    let theta_sq = omega.norm_squared();
    if theta_sq < 1e-20 {
        return [
            skew(&Vec3::x()),
            skew(&Vec3::y()),
            skew(&Vec3::z()),
        ];
    }
    let r = rotation_matrix(omega);
    let i_minus_r = Mat3::identity() - r;
    let w_skew = skew(omega);
    let mut out = [Mat3::zeros(); 3];
    for (i, d) in out.iter_mut().enumerate() {
        let col = i_minus_r.column(i).into_owned();
        let inner = w_skew * omega[i] + skew(&omega.cross(&col));
        *d = inner * r / theta_sq;
    }
    out
}

/// Rigid pose with log-scale: `q = exp(alpha) R(omega) f + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Rotation vector, radians.
    pub omega: Vec3,
    /// Translation, mm.
    pub t: Vec3,
    /// Log-scale.
    pub alpha: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            omega: Vec3::zeros(),
            t: Vec3::zeros(),
            alpha: 0.0,
        }
    }

    pub fn new(omega: Vec3, t: Vec3, alpha: f64) -> Self {
        Self { omega, t, alpha }
    }

    pub fn rotation(&self) -> Mat3 {
        rotation_matrix(&self.omega)
    }

    pub fn scale(&self) -> f64 {
        self.alpha.exp()
    }

    pub fn transform(&self, f: &Vec3) -> Vec3 {
        self.scale() * (self.rotation() * f) + self.t
    }

    /// Packs into `[omega, t, alpha]`.
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.t.x,
            self.t.y,
            self.t.z,
            self.alpha,
        ]
    }

    pub fn from_array(a: &[f64; 7]) -> Self {
        Self {
            omega: Vec3::new(a[0], a[1], a[2]),
            t: Vec3::new(a[3], a[4], a[5]),
            alpha: a[6],
        }
    }

    /// Applies an incremental pose: rotation composes on the left
    /// (`R(dw) R(w0)`), translation and log-scale add.
    pub fn compose_increment(&self, delta: &Pose) -> Pose {
        let r = delta.rotation() * self.rotation();
        Pose {
            omega: rotation_vector(&r),
            t: self.t + delta.t,
            alpha: self.alpha + delta.alpha,
        }
    }

    /// Increment that takes `self` to `target` under [`Pose::compose_increment`].
    pub fn increment_to(&self, target: &Pose) -> Pose {
        let r = target.rotation() * self.rotation().transpose();
        Pose {
            omega: rotation_vector(&r),
            t: target.t - self.t,
            alpha: target.alpha - self.alpha,
        }
    }
}

/// Free-function form of [`Pose::transform`].
pub fn transform(pose: &Pose, f: &Vec3) -> Vec3 {
    pose.transform(f)
}

/// Intrinsic yaw (about y), pitch (about x), roll (about z) angles in
/// radians, with `R = Ry(yaw) Rx(pitch) Rz(roll)`.
pub fn euler_yaw_pitch_roll(r: &Mat3) -> (f64, f64, f64) {
    let pitch = (-r[(1, 2)]).clamp(-1.0, 1.0).asin();
    let yaw = r[(0, 2)].atan2(r[(2, 2)]);
    let roll = r[(1, 0)].atan2(r[(1, 1)]);
    (yaw, pitch, roll)
}

pub fn matrix_from_yaw_pitch_roll(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    let ry = Rotation3::from_axis_angle(&Vec3::y_axis(), yaw);
    let rx = Rotation3::from_axis_angle(&Vec3::x_axis(), pitch);
    let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), roll);
    (ry * rx * rz).into_inner()
}

/// Back-projected depth pixels of a region with plane-fit normals.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Unit normals pointing away from the camera; `None` where the window
    /// held too few valid neighbors for a plane fit.
    pub normals: Vec<Option<Vec3>>,
    pub pixels: Vec<(usize, usize)>,
    pub roi: Roi,
    index: Vec<u32>,
}

const NO_POINT: u32 = u32::MAX;

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the point back-projected from pixel `(u, v)`, if any.
    pub fn point_at(&self, u: usize, v: usize) -> Option<usize> {
        if !self.roi.contains(u, v) {
            return None;
        }
        let i = self.index[(v - self.roi.v0) * self.roi.width + (u - self.roi.u0)];
        (i != NO_POINT).then_some(i as usize)
    }

    /// Normal of the point at pixel `(u, v)`.
    pub fn normal_at(&self, u: usize, v: usize) -> Option<Vec3> {
        self.point_at(u, v).and_then(|i| self.normals[i])
    }
}

/// Least-squares plane normal through the back-projected neighbors of
/// `(u, v)`, oriented away from the camera.
fn plane_normal(frame: &DepthFrame, k: &CameraIntrinsics, u: usize, v: usize, center_depth: f64) -> Option<Vec3> {
    let mut pts = [Vec3::zeros(); 25];
    let mut n = 0usize;
    let r = NORMAL_WINDOW_RADIUS;
    for dv in -r..=r {
        for du in -r..=r {
            let (nu, nv) = (u as i64 + du, v as i64 + dv);
            if nu < 0 || nv < 0 {
                continue;
            }
            let Some(d) = frame.get(nu as usize, nv as usize) else {
                continue;
            };
            if (d - center_depth).abs() > DISCONTINUITY_MM {
                continue;
            }
            pts[n] = k.backproject_unchecked(nu as f64, nv as f64, d);
            n += 1;
        }
    }
    if n < NORMAL_MIN_NEIGHBORS {
        return None;
    }
    let pts = &pts[..n];
    let centroid = pts.iter().sum::<Vec3>() / n as f64;
    let mut cov = Mat3::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let imin = eig.eigenvalues.imin();
    let mut normal = eig.eigenvectors.column(imin).into_owned();
    let norm = normal.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    normal /= norm;
    if normal.dot(&centroid) < 0.0 {
        normal = -normal;
    }
    Some(normal)
}

/// Converts the valid depth pixels inside `roi` to a point cloud with
/// per-point normals from a 5x5 least-squares plane fit.
pub fn cloud_from_frame(frame: &DepthFrame, roi: Roi, k: &CameraIntrinsics) -> Result<PointCloud> {
    if roi.u0 + roi.width > frame.width || roi.v0 + roi.height > frame.height {
        return Err(Error::InvalidArgument(format!(
            "roi {roi:?} exceeds {}x{} frame",
            frame.width, frame.height
        )));
    }
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut pixels = Vec::new();
    let mut index = vec![NO_POINT; roi.area()];
    for v in roi.v0..roi.v0 + roi.height {
        for u in roi.u0..roi.u0 + roi.width {
            let Some(d) = frame.get(u, v) else { continue };
            index[(v - roi.v0) * roi.width + (u - roi.u0)] = points.len() as u32;
            points.push(k.backproject_unchecked(u as f64, v as f64, d));
            normals.push(plane_normal(frame, k, u, v, d));
            pixels.push((u, v));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud {
        points,
        normals,
        pixels,
        roi,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn projection_examples() {
        let k = cam();
        let p = k.project(&Vec3::new(0.0, 0.0, 1000.0)).unwrap();
        assert_eq!((p.x, p.y), (320.0, 240.0));
        let p = k.project(&Vec3::new(100.0, 0.0, 1000.0)).unwrap();
        assert_eq!((p.x, p.y), (370.0, 240.0));
        assert!(matches!(
            k.project(&Vec3::new(1.0, 1.0, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn backprojection_examples() {
        let k = cam();
        let p = k.backproject(Vector2::new(320.0, 240.0), 800.0).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 800.0));
        let p = k.backproject(Vector2::new(420.0, 240.0), 1000.0).unwrap();
        assert_eq!(p, Vec3::new(200.0, 0.0, 1000.0));
        assert!(matches!(
            k.backproject(Vector2::new(1.0, 1.0), 0.0),
            Err(Error::NoData { .. })
        ));
    }

    #[test]
    fn project_backproject_on_pixel_grid() {
        let k = cam();
        for v in (0..480).step_by(37) {
            for u in (0..640).step_by(41) {
                let p = k.backproject(Vector2::new(u as f64, v as f64), 1234.0).unwrap();
                let x = k.project(&p).unwrap();
                assert!((x.x - u as f64).abs() < 1e-9 && (x.y - v as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotation_matrix(&Vec3::zeros()), Mat3::identity());
        let r = rotation_matrix(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let x = r * Vec3::x();
        assert!((x - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn transform_examples() {
        let f = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(transform(&Pose::identity(), &f), f);
        let pose = Pose::new(Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0), 2f64.ln());
        let q = transform(&pose, &Vec3::x());
        assert!((q - Vec3::new(12.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotation_jacobian_at_origin_is_generator() {
        let j = rotation_jacobian(&Vec3::zeros());
        assert_eq!(j[2], skew(&Vec3::z()));
    }

    #[test]
    fn euler_identity_is_zero() {
        let (y, p, r) = euler_yaw_pitch_roll(&Mat3::identity());
        assert_eq!((y, p, r), (0.0, 0.0, 0.0));
    }

    fn plane_frame(k: &CameraIntrinsics, depth_at: impl Fn(f64, f64) -> Option<f64>) -> DepthFrame {
        let mut frame = DepthFrame::empty(640, 480);
        for v in 0..480 {
            for u in 0..640 {
                if let Some(d) = depth_at(u as f64, v as f64) {
                    frame.set(u, v, d as f32);
                }
            }
        }
        let _ = k;
        frame
    }

    #[test]
    fn frontoparallel_plane_normals() {
        let k = cam();
        let frame = plane_frame(&k, |_, _| Some(1000.0));
        let roi = Roi { u0: 200, v0: 150, width: 100, height: 80 };
        let cloud = cloud_from_frame(&frame, roi, &k).unwrap();
        assert_eq!(cloud.len(), 8000);
        for n in cloud.normals.iter() {
            let n = n.unwrap();
            assert!((n - Vec3::z()).norm() < 1e-3);
        }
    }

    #[test]
    fn inclined_plane_normals_at_45_degrees() {
        let k = cam();
        // Plane z = 1000 + x  (normal along (-1, 0, 1)/sqrt2). Along a pixel
        // ray x = (u - cx) / f * z, so z = 1000 / (1 - (u - cx) / f).
        let frame = plane_frame(&k, |u, _| {
            let a = (u - k.cx) / k.f;
            Some(1000.0 / (1.0 - a))
        });
        let roi = Roi { u0: 250, v0: 200, width: 100, height: 80 };
        let cloud = cloud_from_frame(&frame, roi, &k).unwrap();
        let expected = Vec3::new(-1.0, 0.0, 1.0).normalize();
        for n in cloud.normals.iter() {
            let n = n.unwrap();
            let angle = n.dot(&expected).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle < 1.0, "angle {angle}");
            let axis_angle = n.dot(&Vec3::z()).acos().to_degrees();
            assert!((axis_angle - 45.0).abs() < 1.0);
        }
    }

    #[test]
    fn all_missing_frame_gives_empty_cloud() {
        let frame = DepthFrame::empty(64, 48);
        let err = cloud_from_frame(&frame, Roi::full(64, 48), &cam()).unwrap_err();
        assert!(matches!(err, Error::EmptyCloud));
    }

    #[test]
    fn sparse_window_has_no_normal() {
        let mut frame = DepthFrame::empty(20, 20);
        frame.set(10, 10, 1000.0);
        frame.set(11, 10, 1000.0);
        let cloud = cloud_from_frame(&frame, Roi::full(20, 20), &cam()).unwrap();
        assert!(cloud.normals.iter().all(Option::is_none));
        assert_eq!(cloud.point_at(11, 10), Some(1));
        assert_eq!(cloud.point_at(12, 10), None);
    }

    #[test]
    fn bilinear_discards_missing_neighbors() {
        let mut frame = DepthFrame::empty(4, 4);
        for v in 0..4 {
            for u in 0..4 {
                frame.set(u, v, 1000.0 + u as f32);
            }
        }
        let (d, g) = frame.sample_bilinear_with_gradient(1.25, 1.5).unwrap();
        assert!((d - 1001.25).abs() < 1e-9);
        assert!((g.x - 1.0).abs() < 1e-12 && g.y.abs() < 1e-12);
        frame.set(2, 2, MISSING_DEPTH);
        assert!(frame.sample_bilinear(1.25, 1.5).is_none());
    }

    fn arb_omega() -> impl Strategy<Value = Vec3> {
        (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_map(|(a, b, c)| Vec3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(omega in arb_omega()) {
            let r = rotation_matrix(&omega);
            prop_assert!((r * r.transpose() - Mat3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn projection_roundtrip(x in -400.0f64..400.0, y in -300.0f64..300.0, z in 400.0f64..1500.0) {
            let k = cam();
            let p = Vec3::new(x, y, z);
            let px = k.project(&p).unwrap();
            let back = k.backproject(px, z).unwrap();
            prop_assert!((back - p).norm() <= 1e-9 * p.norm());
        }

        #[test]
        fn transform_composition(w1 in arb_omega(), w2 in arb_omega(),
                                 t1 in -100.0f64..100.0, t2 in -100.0f64..100.0,
                                 a1 in -0.5f64..0.5, a2 in -0.5f64..0.5) {
            let p1 = Pose::new(w1, Vec3::new(t1, -t2, 3.0), a1);
            let p2 = Pose::new(w2, Vec3::new(t2, 1.0, t1), a2);
            let f = Vec3::new(12.0, -7.0, 30.0);
            let two_step = p2.transform(&p1.transform(&f));
            // explicit matrix composition
            let r = p2.rotation() * p1.rotation();
            let s = p2.scale() * p1.scale();
            let t = p2.scale() * (p2.rotation() * p1.t) + p2.t;
            let single = s * (r * f) + t;
            prop_assert!((two_step - single).norm() < 1e-9 * (1.0 + single.norm()));
        }

        #[test]
        fn rotation_jacobian_matches_finite_differences(omega in arb_omega()) {
            prop_assume!(omega.norm() < 3.0);
            let j = rotation_jacobian(&omega);
            let h = 1e-6;
            for i in 0..3 {
                let mut wp = omega; wp[i] += h;
                let mut wm = omega; wm[i] -= h;
                let fd = (rotation_matrix(&wp) - rotation_matrix(&wm)) / (2.0 * h);
                prop_assert!((fd - j[i]).norm() < 1e-7);
            }
        }

        #[test]
        fn euler_roundtrip(yaw in -1.5f64..1.5, pitch in -1.4f64..1.4, roll in -1.5f64..1.5) {
            let r = matrix_from_yaw_pitch_roll(yaw, pitch, roll);
            let (y, p, rr) = euler_yaw_pitch_roll(&r);
            let r2 = matrix_from_yaw_pitch_roll(y, p, rr);
            let (y2, p2, rr2) = euler_yaw_pitch_roll(&r2);
            prop_assert!((y - yaw).abs() < 1e-9 && (p - pitch).abs() < 1e-9 && (rr - roll).abs() < 1e-9);
            prop_assert!((y2 - y).abs() < 1e-12 && (p2 - p).abs() < 1e-12 && (rr2 - rr).abs() < 1e-12);
        }

        #[test]
        fn increment_roundtrip(w1 in arb_omega(), w2 in arb_omega()) {
            prop_assume!(w1.norm() < 3.0 && w2.norm() < 3.0);
            let a = Pose::new(w1, Vec3::new(1.0, 2.0, 3.0), 0.1);
            let b = Pose::new(w2, Vec3::new(-4.0, 0.0, 9.0), -0.2);
            let c = a.compose_increment(&a.increment_to(&b));
            prop_assert!((c.rotation() - b.rotation()).norm() < 1e-9);
            prop_assert!((c.t - b.t).norm() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_about_y_is_yaw() {
        let r = rotation_matrix(&Vec3::new(0.0, FRAC_PI_4, 0.0));
        let (y, p, rr) = euler_yaw_pitch_roll(&r);
        assert!((y - FRAC_PI_4).abs() < 1e-12 && p.abs() < 1e-12 && rr.abs() < 1e-12);
    }
}
