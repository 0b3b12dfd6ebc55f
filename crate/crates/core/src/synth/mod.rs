//! Synthetic ground truth: z-buffer depth rendering, a procedural face
//! corpus, occluder injection, and sensor noise.

mod scene;

pub use scene::{
    orbit_trajectory, render_scene, sample_identity, OccluderSpec, OrbitSpec, RenderedScene, SyntheticScene,
};

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::face_model::Corpus;
use crate::geometry::{CameraIntrinsics, DepthFrame, Pose, Roi, Vec3, MAX_DEPTH_MM, MISSING_DEPTH};

/// Rasterizes a triangle mesh posed by `pose` into a depth frame. Back-facing
/// triangles are culled, the nearest surface wins, and pixels not covered by
/// any triangle are missing.
pub fn render_depth(
    vertices: &[Vec3],
    triangles: &[[u32; 3]],
    pose: &Pose,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> DepthFrame {
    let r = pose.rotation();
    let s = pose.scale();
    let cam: Vec<Vec3> = vertices.iter().map(|v| s * (r * v) + pose.t).collect();
    let mut zbuf = vec![f64::INFINITY; width * height];
    for tri in triangles {
        let [a, b, c] = tri.map(|i| cam[i as usize]);
        if a.z <= 1.0 || b.z <= 1.0 || c.z <= 1.0 {
            continue;
        }
        let normal = (b - a).cross(&(c - a));
        if normal.dot(&a) >= 0.0 {
            continue;
        }
        let pa = k.project_unchecked(&a);
        let pb = k.project_unchecked(&b);
        let pc = k.project_unchecked(&c);
        let area = (pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x);
        if area.abs() < 1e-12 {
            continue;
        }
        let umin = pa.x.min(pb.x).min(pc.x).ceil().max(0.0) as i64;
        let umax = pa.x.max(pb.x).max(pc.x).floor().min(width as f64 - 1.0) as i64;
        let vmin = pa.y.min(pb.y).min(pc.y).ceil().max(0.0) as i64;
        let vmax = pa.y.max(pb.y).max(pc.y).floor().min(height as f64 - 1.0) as i64;
        let (iza, izb, izc) = (1.0 / a.z, 1.0 / b.z, 1.0 / c.z);
        for v in vmin..=vmax {
            let y = v as f64;
            for u in umin..=umax {
                let x = u as f64;
                let w0 = ((pb.x - x) * (pc.y - y) - (pb.y - y) * (pc.x - x)) / area;
                let w1 = ((pc.x - x) * (pa.y - y) - (pc.y - y) * (pa.x - x)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // 1/z is affine in screen space for a planar triangle.
                let z = 1.0 / (w0 * iza + w1 * izb + w2 * izc);
                let idx = v as usize * width + u as usize;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                }
            }
        }
    }
    let depth = zbuf
        .into_iter()
        .map(|z| {
            if z.is_finite() && z < MAX_DEPTH_MM as f64 {
                z as f32
            } else {
                MISSING_DEPTH
            }
        })
        .collect();
    DepthFrame { width, height, depth }
}

/// Azimuth range of the face shell (radians either side of frontal).
const AZIMUTH_SPAN: f64 = 80.0 * std::f64::consts::PI / 180.0;
const ELEVATION_TOP: f64 = 55.0 * std::f64::consts::PI / 180.0;
const ELEVATION_BOTTOM: f64 = -60.0 * std::f64::consts::PI / 180.0;
/// Head half-extents (mm): width, height, depth.
const HEAD_RADII: [f64; 3] = [78.0, 110.0, 95.0];
const IDENTITY_BUMPS: usize = 24;

/// Grid shape used for a requested vertex count.
pub fn shell_grid(n_vertices: usize) -> (usize, usize) {
    let rows = ((n_vertices as f64 / 1.25).sqrt().round() as usize).max(2);
    let cols = ((n_vertices as f64 / rows as f64).round() as usize).max(2);
    (rows, cols)
}

/// Surface parameters (azimuth, elevation) per vertex, row-major from the
/// top of the head.
fn shell_parameters(n_vertices: usize) -> Vec<(f64, f64)> {
    let (rows, cols) = shell_grid(n_vertices);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let el = ELEVATION_TOP + (ELEVATION_BOTTOM - ELEVATION_TOP) * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let az = -AZIMUTH_SPAN + 2.0 * AZIMUTH_SPAN * c as f64 / (cols - 1) as f64;
            out.push((az, el));
        }
    }
    out
}

fn shell_triangles(n_vertices: usize) -> Vec<[u32; 3]> {
    let (rows, cols) = shell_grid(n_vertices);
    let id = |r: usize, c: usize| (r * cols + c) as u32;
    let mut tris = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            // wound so the cross product points out of the head
            tris.push([id(r, c), id(r + 1, c), id(r, c + 1)]);
            tris.push([id(r, c + 1), id(r + 1, c), id(r + 1, c + 1)]);
        }
    }
    tris
}

fn ellipsoid_point(az: f64, el: f64) -> Vec3 {
    let [rx, ry, rz] = HEAD_RADII;
    Vec3::new(rx * az.sin() * el.cos(), -ry * el.sin(), -rz * az.cos() * el.cos())
}

fn outward_normal(p: &Vec3) -> Vec3 {
    let [rx, ry, rz] = HEAD_RADII;
    Vec3::new(p.x / (rx * rx), p.y / (ry * ry), p.z / (rz * rz)).normalize()
}

fn gauss2(az: f64, el: f64, c_az: f64, c_el: f64, s_az: f64, s_el: f64) -> f64 {
    let a = (az - c_az) / s_az;
    let e = (el - c_el) / s_el;
    (-(a * a + e * e)).exp()
}

/// Compactly supported bump: `(1 - r^2)^2` inside the unit ellipse.
fn compact(az: f64, el: f64, c_az: f64, c_el: f64, s_az: f64, s_el: f64) -> f64 {
    let a = (az - c_az) / s_az;
    let e = (el - c_el) / s_el;
    let r2 = a * a + e * e;
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - r2) * (1.0 - r2)
    }
}

/// Outward relief of the neutral face: nose, brows, eye sockets, lips, chin,
/// cheeks.
fn facial_relief(az: f64, el: f64, nose_scale: f64) -> f64 {
    let nose = nose_scale * (24.0 * gauss2(az, el, 0.0, -0.08, 0.12, 0.22) + 6.0 * gauss2(az, el, 0.0, -0.22, 0.08, 0.07));
    let brow = 5.0 * gauss2(az, el, 0.0, 0.30, 0.75, 0.08);
    let eyes = -8.0 * (gauss2(az, el, 0.38, 0.14, 0.15, 0.09) + gauss2(az, el, -0.38, 0.14, 0.15, 0.09));
    let lips = 4.0 * gauss2(az, el, 0.0, -0.50, 0.32, 0.07);
    let chin = 7.0 * gauss2(az, el, 0.0, -0.88, 0.30, 0.14);
    let cheeks = 4.0 * (gauss2(az, el, 0.62, -0.15, 0.25, 0.25) + gauss2(az, el, -0.62, -0.15, 0.25, 0.25));
    nose + brow + eyes + lips + chin + cheeks
}

/// Identity-independent mouth/brow supports of the expression fields.
fn expression_weights(az: f64, el: f64) -> [Vec3; 5] {
    let jaw = compact(az, el, 0.0, -0.80, 0.75, 0.42);
    let smile_l = compact(az, el, 0.32, -0.48, 0.28, 0.2);
    let smile_r = compact(az, el, -0.32, -0.48, 0.28, 0.2);
    let pucker = compact(az, el, 0.0, -0.50, 0.35, 0.14);
    let brow_raise = compact(az, el, 0.0, 0.32, 0.85, 0.2);
    let furrow_l = compact(az, el, 0.18, 0.26, 0.2, 0.14);
    let furrow_r = compact(az, el, -0.18, 0.26, 0.2, 0.14);
    [
        // jaw drop: down and slightly back
        Vec3::new(0.0, 9.0, 3.0) * jaw,
        // smile: mouth corners up, out, and back
        Vec3::new(3.0, -4.0, 3.0) * smile_l + Vec3::new(-3.0, -4.0, 3.0) * smile_r,
        // pucker: lips forward
        Vec3::new(0.0, 0.0, -6.0) * pucker,
        Vec3::new(0.0, -6.0, 0.0) * brow_raise,
        // inner brows down and together
        Vec3::new(-2.5, 3.5, 0.0) * furrow_l + Vec3::new(2.5, 3.5, 0.0) * furrow_r,
    ]
}

/// Vertex masks for corpus measurements.
#[derive(Debug, Clone)]
pub struct CorpusRegions {
    /// Vertices inside the mouth/brow supports of the expression fields.
    pub expression: Vec<bool>,
    /// Cheek vertices, outside every expression support.
    pub cheek: Vec<bool>,
}

pub fn corpus_regions(n_vertices: usize) -> CorpusRegions {
    let params = shell_parameters(n_vertices);
    let expression: Vec<bool> = params
        .iter()
        .map(|&(az, el)| expression_weights(az, el).iter().any(|w| w.norm() > 0.0))
        .collect();
    let cheek = params
        .iter()
        .zip(&expression)
        .map(|(&(az, el), &e)| !e && (az.abs() - 0.62).abs() < 0.2 && (el + 0.1).abs() < 0.2)
        .collect();
    CorpusRegions { expression, cheek }
}

/// Deterministic procedural corpus: an ellipsoidal face shell with facial
/// relief, smooth per-identity deformations, and localized mouth/brow
/// expression deformations. Expression 0 is neutral.
pub fn generate_corpus(seed: u64, n_id: usize, n_exp: usize, n_vertices: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = shell_parameters(n_vertices);
    let triangles = shell_triangles(n_vertices);

    let bump_centers: Vec<(f64, f64)> = (0..IDENTITY_BUMPS)
        .map(|_| {
            (
                rng.random_range(-AZIMUTH_SPAN..AZIMUTH_SPAN),
                rng.random_range(ELEVATION_BOTTOM..ELEVATION_TOP),
            )
        })
        .collect();

    struct IdentityShape {
        scale: Vec3,
        nose: f64,
        bumps: Vec<f64>,
    }
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let identities: Vec<IdentityShape> = (0..n_id)
        .map(|_| IdentityShape {
            scale: Vec3::new(
                1.0 + 0.05 * n01.sample(&mut rng),
                1.0 + 0.05 * n01.sample(&mut rng),
                1.0 + 0.05 * n01.sample(&mut rng),
            ),
            nose: 1.0 + 0.2 * n01.sample(&mut rng),
            bumps: (0..IDENTITY_BUMPS).map(|_| 3.0 * n01.sample(&mut rng)).collect(),
        })
        .collect();
    let expressions: Vec<[f64; 5]> = (0..n_exp)
        .map(|j| {
            if j == 0 {
                [0.0; 5]
            } else {
                std::array::from_fn(|_| rng.random_range(0.0..1.0))
            }
        })
        .collect();

    let mut meshes = Vec::with_capacity(n_id * n_exp);
    for id in &identities {
        let neutral: Vec<Vec3> = params
            .iter()
            .map(|&(az, el)| {
                let base = ellipsoid_point(az, el);
                let normal = outward_normal(&base);
                let scaled = base.component_mul(&id.scale);
                let smooth: f64 = bump_centers
                    .iter()
                    .zip(&id.bumps)
                    .map(|(&(ca, ce), amp)| amp * gauss2(az, el, ca, ce, 0.35, 0.35))
                    .sum();
                scaled + normal * (facial_relief(az, el, id.nose) + smooth)
            })
            .collect();
        for coeffs in &expressions {
            meshes.push(
                neutral
                    .iter()
                    .zip(&params)
                    .map(|(v, &(az, el))| {
                        let fields = expression_weights(az, el);
                        v + fields.iter().zip(coeffs).map(|(f, c)| f * *c).sum::<Vec3>()
                    })
                    .collect(),
            );
        }
    }
    Corpus {
        n_id,
        n_exp,
        meshes,
        triangles,
    }
}

/// Tight bounding box of the valid pixels, or `None` for an empty frame.
pub fn valid_bounding_box(frame: &DepthFrame) -> Option<Roi> {
    let (mut u0, mut v0, mut u1, mut v1) = (usize::MAX, usize::MAX, 0, 0);
    for v in 0..frame.height {
        for u in 0..frame.width {
            if frame.get(u, v).is_some() {
                u0 = u0.min(u);
                v0 = v0.min(v);
                u1 = u1.max(u);
                v1 = v1.max(v);
            }
        }
    }
    (u0 != usize::MAX).then(|| Roi {
        u0,
        v0,
        width: u1 - u0 + 1,
        height: v1 - v0 + 1,
    })
}

/// Where an occluding rectangle sits relative to the face box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionPlacement {
    /// Offset of the rectangle center from the box center, in box widths/heights.
    pub offset: (f64, f64),
    /// Width over height.
    pub aspect: f64,
}

impl OcclusionPlacement {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            offset: (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
            aspect: rng.random_range(0.6..1.6),
        }
    }
}

/// Overwrites a rectangle covering `coverage` of `roi` with a surface
/// `depth_offset` mm in front of the face. Returns the altered frame and the
/// rectangle.
pub fn apply_occlusion(
    frame: &DepthFrame,
    roi: Roi,
    coverage: f64,
    placement: &OcclusionPlacement,
    depth_offset: f64,
) -> (DepthFrame, Option<Roi>) {
    let coverage = coverage.clamp(0.0, 1.0);
    let target = (coverage * roi.area() as f64).round();
    if target < 1.0 || roi.area() == 0 {
        return (frame.clone(), None);
    }
    let mut w = ((target * placement.aspect).sqrt().round() as usize).clamp(1, roi.width);
    let h = ((target / w as f64).round() as usize).clamp(1, roi.height);
    w = ((target / h as f64).round() as usize).clamp(1, roi.width);
    let (cu, cv) = roi.center();
    let cu = cu + placement.offset.0 * roi.width as f64;
    let cv = cv + placement.offset.1 * roi.height as f64;
    let u0 = ((cu - w as f64 / 2.0).round() as i64).clamp(roi.u0 as i64, (roi.u0 + roi.width - w) as i64) as usize;
    let v0 = ((cv - h as f64 / 2.0).round() as i64).clamp(roi.v0 as i64, (roi.v0 + roi.height - h) as i64) as usize;
    let rect = Roi {
        u0,
        v0,
        width: w,
        height: h,
    };

    let median = |r: &Roi| {
        let mut d: Vec<f64> = (r.v0..r.v0 + r.height)
            .flat_map(|v| (r.u0..r.u0 + r.width).map(move |u| (u, v)))
            .filter_map(|(u, v)| frame.get(u, v))
            .collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    };
    let reference = median(&rect).or_else(|| median(&roi)).unwrap_or(1000.0);
    let plate = (reference - depth_offset).max(1.0);
    let mut out = frame.clone();
    for v in rect.v0..rect.v0 + rect.height {
        for u in rect.u0..rect.u0 + rect.width {
            let d = match frame.get(u, v) {
                Some(orig) => plate.min(orig - depth_offset).max(orig * 0.5),
                None => plate,
            };
            out.set(u, v, d as f32);
        }
    }
    (out, Some(rect))
}

/// Occludes `coverage` of the face box (tight box of valid pixels) with a
/// randomly placed rectangle 100 mm in front of the face.
pub fn inject_occlusion(frame: &DepthFrame, coverage: f64, rng: &mut impl Rng) -> DepthFrame {
    let Some(roi) = valid_bounding_box(frame) else {
        return frame.clone();
    };
    let placement = OcclusionPlacement::random(rng);
    apply_occlusion(frame, roi, coverage, &placement, 100.0).0
}

/// Adds zero-mean Gaussian noise of `sigma` mm, then quantizes to `quant` mm
/// (no quantization when `quant == 0`). Missing pixels stay missing.
pub fn add_noise(frame: &DepthFrame, sigma: f64, quant: f64, rng: &mut impl Rng) -> DepthFrame {
    let mut out = frame.clone();
    for d in out.depth.iter_mut() {
        if *d == MISSING_DEPTH {
            continue;
        }
        let mut x = *d as f64;
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            x += sigma * z;
        }
        if quant > 0.0 {
            x = (x / quant).round() * quant;
            if x <= 0.0 {
                x = quant;
            }
        }
        *d = (x.max(1e-3) as f32).min(MAX_DEPTH_MM - 1.0);
    }
    out
}

/// Identity weight drawn from the model's identity prior.
pub(crate) fn gaussian_draw(mean: &DVector<f64>, cov: &nalgebra::DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
    let l = cov
        .clone()
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| nalgebra::DMatrix::from_diagonal(&cov.diagonal().map(|x| x.max(0.0).sqrt())));
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + l * z
}
