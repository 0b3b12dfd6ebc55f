//! Online identity adaptation.
//!
//! Each tracked person is described by a Normal-Inverse-Wishart posterior
//! over the identity weight plus the person's log-scale. Every few frames an
//! identity weight is fitted to the observed depth, weighted by the visible
//! fraction of the face, and collected into a clip. At the end of a clip each
//! sample is assigned to the stored model under which it is most probable, or
//! to the generic model, which spawns a new identity.

mod store;

pub use store::{decode_store, encode_store, merge_stores, read_store, write_store, STORE_MAGIC};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::{FaceDistribution, MultilinearModel, Priors};
use crate::geometry::{cloud_from_frame, CameraIntrinsics, DepthFrame, Mat3, Pose, Vec3};
use crate::tracker::{face_roi, minimize, FrameObjective, MinimizeOptions};
use crate::visibility::{classify_visibility, correspond, RayCorrespondence, RvsParams, Visibility, VisibilityLabels};

/// Ridge added to covariances before inversion.
pub const COVARIANCE_RIDGE: f64 = 1e-8;
/// Visible rays needed for a trustworthy identity fit.
pub const MIN_VISIBLE_RAYS: usize = 50;
/// Mean squared vertex displacement below which adaptation has settled (mm^2).
pub const CONVERGENCE_TOL_MM2: f64 = 1.0;

/// Normal-Inverse-Wishart posterior over an identity weight, with the
/// identity's log-scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityModel {
    pub m: DVector<f64>,
    pub beta: f64,
    pub psi: DMatrix<f64>,
    pub nu: f64,
    pub alpha: f64,
    /// Set once the model's face has settled; a converged model keeps
    /// claiming samples but no longer absorbs them.
    #[serde(default)]
    pub converged: bool,
}

impl IdentityModel {
    /// Model whose expected mean and covariance equal the face model's
    /// identity prior.
    pub fn generic(priors: &Priors) -> Self {
        let d = priors.mu_id.len() as f64;
        let nu = d + 3.0;
        Self {
            m: priors.mu_id.clone(),
            beta: 1.0,
            psi: &priors.sigma_id * (nu - d - 1.0),
            nu,
            alpha: 0.0,
            converged: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.psi.nrows() != d || self.psi.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "psi",
                expected: d,
                got: self.psi.nrows(),
            });
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.nu > d as f64 + 1.0) {
            return Err(Error::UndefinedVariance {
                nu: self.nu,
                min: d as f64 + 1.0,
            });
        }
        Ok(())
    }
}

/// One per-frame identity observation.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySample {
    pub w_id: DVector<f64>,
    /// Visible fraction of the face, in `[0, 1]`.
    pub kappa: f64,
    /// Tracked log-scale at the sampled frame.
    pub alpha: f64,
}

/// The generic model `I_0` and the personalized models `I_1..I_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityStore {
    pub generic: IdentityModel,
    pub models: Vec<IdentityModel>,
    /// `0` for the generic model, `k` for `models[k - 1]`.
    pub present_index: usize,
}

impl IdentityStore {
    pub fn new(generic: IdentityModel) -> Self {
        Self {
            generic,
            models: Vec::new(),
            present_index: 0,
        }
    }

    pub fn from_priors(priors: &Priors) -> Self {
        Self::new(IdentityModel::generic(priors))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Model `k` with `0` meaning the generic model.
    pub fn get(&self, k: usize) -> Option<&IdentityModel> {
        if k == 0 {
            Some(&self.generic)
        } else {
            self.models.get(k - 1)
        }
    }

    pub fn present(&self) -> &IdentityModel {
        self.get(self.present_index).unwrap_or(&self.generic)
    }
}

/// Result of fitting an identity weight to one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEstimate {
    pub w_id: DVector<f64>,
    pub visible: usize,
    /// `false` when too few rays were visible; the sample should be skipped.
    pub confident: bool,
}

/// Normal equations `A w = b` of the identity fit.
#[derive(Debug, Clone)]
pub struct IdentitySystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub visible: usize,
}

impl IdentitySystem {
    /// `|A w - b| / |b|`.
    pub fn relative_residual(&self, w: &DVector<f64>) -> f64 {
        (&self.a * w - &self.b).norm() / self.b.norm().max(f64::MIN_POSITIVE)
    }
}

fn regularized_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let reg = sigma + DMatrix::identity(d, d) * COVARIANCE_RIDGE;
    reg.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))
}

/// Builds the identity-fit normal equations: a Gaussian prior on `w_id` plus,
/// for every visible ray, a point-to-plane term weighted by the inverse
/// signed-distance variance and a point-to-point term weighted by the inverse
/// of the expression-conditioned vertex covariance plus sensor noise.
pub fn identity_system(
    rays: &[RayCorrespondence],
    labels: &VisibilityLabels,
    pose: &Pose,
    model: &MultilinearModel,
    expression_blocks: &[Mat3],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    params: &RvsParams,
) -> Result<IdentitySystem> {
    let n_id = model.n_id();
    let prior_info = regularized_inverse(prior_cov)?;
    let mut a = prior_info.clone();
    let mut b = &prior_info * prior_mean;
    let p_id = model.contract_expression(&model.priors.mu_exp)?;
    let r = pose.rotation();
    let s = pose.scale();
    let mut visible = 0;
    for (ray, gamma) in rays.iter().zip(&labels.gamma) {
        let (Some(hit), Visibility::Visible) = (&ray.hit, gamma) else {
            continue;
        };
        visible += 1;
        let v = ray.vertex;
        let rows = p_id.rows(3 * v, 3);
        // camera-space vertex is s R (f_mean + P_v w) + t = J w + c
        let j = (r * s) * rows;
        let mean_v = Vec3::new(model.mean_face[3 * v], model.mean_face[3 * v + 1], model.mean_face[3 * v + 2]);
        let c = s * (r * mean_v) + pose.t - hit.p;
        let block = s * s * r * expression_blocks[v] * r.transpose();
        let n = hit.normal;
        let plane_var = params.sigma_o_sq + n.dot(&(block * n));
        let jn = j.transpose() * n;
        // point-to-point against the nearest point of the local tangent
        // plane, so the residual is n n^T (q - p)
        let point_info = (block + Mat3::identity() * params.sigma_o_sq)
            .try_inverse()
            .ok_or_else(|| Error::Domain("singular vertex covariance".into()))?;
        let weight = 1.0 / plane_var + n.dot(&(point_info * n));
        a += &jn * jn.transpose() * weight;
        b -= &jn * (n.dot(&c) * weight);
    }
    debug_assert_eq!(a.nrows(), n_id);
    Ok(IdentitySystem { a, b, visible })
}

/// Maximum a posteriori identity weight for one frame at a fixed pose.
/// With fewer than [`MIN_VISIBLE_RAYS`] visible rays the prior mean is
/// returned and flagged as not confident.
pub fn estimate_wid(
    rays: &[RayCorrespondence],
    labels: &VisibilityLabels,
    pose: &Pose,
    model: &MultilinearModel,
    expression_blocks: &[Mat3],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    params: &RvsParams,
) -> Result<IdentityEstimate> {
    let visible = labels.count(Visibility::Visible);
    if visible < MIN_VISIBLE_RAYS {
        return Ok(IdentityEstimate {
            w_id: prior_mean.clone(),
            visible,
            confident: false,
        });
    }
    let sys = identity_system(rays, labels, pose, model, expression_blocks, prior_mean, prior_cov, params)?;
    let w_id = sys
        .a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("identity normal equations are not positive definite".into()))?
        .solve(&sys.b);
    Ok(IdentityEstimate {
        w_id,
        visible: sys.visible,
        confident: true,
    })
}

/// Controls for fitting an identity weight to one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Correspondence/solve alternations.
    pub iterations: usize,
    /// When set, the rigid pose is re-estimated against the current face
    /// before every solve, with the log-scale held fixed.
    pub refine_pose: Option<MinimizeOptions>,
}

#[derive(Debug, Clone)]
pub struct IdentityFit {
    pub estimate: IdentityEstimate,
    /// Classification at the final pose and face.
    pub labels: VisibilityLabels,
    pub pose: Pose,
}

/// Fits an identity weight by alternating ray correspondence against the
/// face at the current estimate with [`estimate_wid`], starting from `start`.
pub fn fit_identity(
    model: &MultilinearModel,
    frame: &DepthFrame,
    pose: &Pose,
    k: &CameraIntrinsics,
    start: &DVector<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    params: &RvsParams,
    options: &FitOptions,
) -> Result<IdentityFit> {
    let mut dist: FaceDistribution = model.identity_conditioned(start)?;
    let roi = face_roi(&dist, pose, k, frame.width, frame.height);
    let cloud = cloud_from_frame(frame, roi, k)?;
    let mut fit = IdentityFit {
        estimate: IdentityEstimate {
            w_id: start.clone(),
            visible: 0,
            confident: false,
        },
        labels: VisibilityLabels { gamma: Vec::new() },
        pose: *pose,
    };
    for _ in 0..options.iterations.max(1) {
        if let Some(minimize_options) = &options.refine_pose {
            let objective = FrameObjective::new(fit.pose, &dist, frame, *k, *params, None, 0.0)?;
            let refined = minimize(&objective, Pose::identity(), &MinimizeOptions { fix_alpha: true, ..*minimize_options });
            fit.pose = objective.pose_at(&refined.delta);
        }
        let rays = correspond(&dist, &fit.pose, frame, &cloud, k);
        fit.labels = classify_visibility(&rays, &fit.pose, &dist, params);
        fit.estimate = estimate_wid(&rays, &fit.labels, &fit.pose, model, &dist.sigma_blocks, prior_mean, prior_cov, params)?;
        if !fit.estimate.confident {
            break;
        }
        dist = model.identity_conditioned(&fit.estimate.w_id)?;
    }
    Ok(fit)
}

/// Visible fraction of all model vertices; excluded rays count as hidden.
pub fn confidence(labels: &VisibilityLabels) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.count(Visibility::Visible) as f64 / labels.len() as f64
}

/// Conjugate update of `model` with confidence-weighted samples. The log-scale
/// is left untouched; a clip with zero total confidence is a no-op.
pub fn niw_update(model: &IdentityModel, samples: &[IdentitySample]) -> IdentityModel {
    let n_c: f64 = samples.iter().map(|s| s.kappa).sum();
    if !(n_c > 0.0) {
        return model.clone();
    }
    let d = model.dim();
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += &s.w_id * s.kappa;
    }
    mean /= n_c;
    let mut scatter = DMatrix::zeros(d, d);
    for s in samples {
        let e = &s.w_id - &mean;
        scatter += &e * e.transpose() * s.kappa;
    }
    let beta = model.beta;
    let shift = &mean - &model.m;
    let psi = &model.psi + scatter + &shift * shift.transpose() * (beta * n_c / (beta + n_c));
    IdentityModel {
        m: (&mean * n_c + &model.m * beta) / (n_c + beta),
        beta: beta + n_c,
        psi: (&psi + psi.transpose()) * 0.5,
        nu: model.nu + n_c,
        alpha: model.alpha,
        converged: model.converged,
    }
}

/// Expected identity mean and covariance `(m, psi / (nu - d - 1))`.
pub fn expected_identity(model: &IdentityModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = model.dim() as f64;
    let denom = model.nu - d - 1.0;
    if !(denom > 0.0) {
        return Err(Error::UndefinedVariance {
            nu: model.nu,
            min: d + 1.0,
        });
    }
    Ok((model.m.clone(), &model.psi / denom))
}

/// Log density of `w` under the model's expected Gaussian.
pub fn log_density(model: &IdentityModel, w: &DVector<f64>) -> Result<f64> {
    let (mu, sigma) = expected_identity(model)?;
    let d = mu.len();
    let chol = (sigma + DMatrix::identity(d, d) * COVARIANCE_RIDGE)
        .cholesky()
        .ok_or_else(|| Error::Domain("identity covariance is not positive definite".into()))?;
    let e = w - mu;
    let maha = e.dot(&chol.solve(&e));
    let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Ok(-0.5 * (maha + log_det + d as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Index of the most probable model for `w`: `0` for the generic model,
/// `k` for stored model `k`. Ties go to the lower index.
pub fn switch(w: &DVector<f64>, store: &IdentityStore) -> Result<usize> {
    let mut best = (0, log_density(&store.generic, w)?);
    for (i, model) in store.models.iter().enumerate() {
        let lp = log_density(model, w)?;
        if lp > best.1 {
            best = (i + 1, lp);
        }
    }
    Ok(best.0)
}

/// Confidence-weighted running mean of the log-scale. The model's pseudo-count
/// above the generic one is the confidence mass already absorbed.
fn blend_alpha(before: &IdentityModel, samples: &[IdentitySample], base_beta: f64) -> f64 {
    let n_c: f64 = samples.iter().map(|s| s.kappa).sum();
    if !(n_c > 0.0) {
        return before.alpha;
    }
    let absorbed = (before.beta - base_beta).max(0.0);
    let sum: f64 = samples.iter().map(|s| s.kappa * s.alpha).sum();
    (before.alpha * absorbed + sum) / (absorbed + n_c)
}

/// One round of adaptation over a clip. Samples are assigned against the
/// store as it was at the start of the clip; every referenced model that has
/// not converged absorbs its samples and all samples assigned to the generic
/// model seed a single new model. The present model becomes the last
/// sample's.
pub fn adapt_clip(store: &IdentityStore, samples: &[IdentitySample]) -> Result<IdentityStore> {
    if samples.is_empty() {
        return Ok(store.clone());
    }
    let assignment = samples.iter().map(|s| switch(&s.w_id, store)).collect::<Result<Vec<_>>>()?;
    let mut clusters: Vec<Vec<IdentitySample>> = vec![Vec::new(); store.models.len() + 1];
    for (s, &k) in samples.iter().zip(&assignment) {
        clusters[k].push(s.clone());
    }
    let base_beta = store.generic.beta;
    let mut out = store.clone();
    for (k, cluster) in clusters.iter().enumerate().skip(1) {
        let before = &store.models[k - 1];
        if cluster.is_empty() || before.converged {
            continue;
        }
        let mut updated = niw_update(before, cluster);
        updated.alpha = blend_alpha(before, cluster, base_beta);
        out.models[k - 1] = updated;
    }
    let new_index = out.models.len() + 1;
    if !clusters[0].is_empty() {
        let mut fresh = niw_update(&store.generic, &clusters[0]);
        fresh.alpha = blend_alpha(&store.generic, &clusters[0], base_beta);
        out.models.push(fresh);
    }
    let last = *assignment.last().expect("samples non-empty");
    out.present_index = if last == 0 { new_index } else { last };
    Ok(out)
}

/// Mean squared displacement between corresponding vertices.
pub fn mean_squared_displacement(prev: &[Vec3], next: &[Vec3]) -> Result<f64> {
    if prev.len() != next.len() {
        return Err(Error::DimensionMismatch {
            what: "face vertices",
            expected: prev.len(),
            got: next.len(),
        });
    }
    if prev.is_empty() {
        return Ok(0.0);
    }
    Ok(prev.iter().zip(next).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / prev.len() as f64)
}

/// Whether successive adapted faces differ by less than `tol` in mean squared
/// vertex displacement.
pub fn adaptation_converged(prev: &[Vec3], next: &[Vec3], tol: f64) -> Result<bool> {
    Ok(mean_squared_displacement(prev, next)? < tol)
}

/// Face mesh implied by an identity model's mean at the mean expression.
pub fn identity_face(model: &MultilinearModel, identity: &IdentityModel) -> Result<Vec<Vec3>> {
    model.synthesize(&identity.m, &model.priors.mu_exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn priors(d: usize) -> Priors {
        Priors {
            mu_id: DVector::from_fn(d, |i, _| 0.1 * i as f64),
            sigma_id: DMatrix::identity(d, d) / d as f64,
            mu_exp: DVector::zeros(2),
            sigma_exp: DMatrix::identity(2, 2) / 2.0,
        }
    }

    fn sample(w: DVector<f64>, kappa: f64) -> IdentitySample {
        IdentitySample { w_id: w, kappa, alpha: 0.0 }
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn generic_model_reproduces_prior() {
        let p = priors(4);
        let g = IdentityModel::generic(&p);
        let (mu, sigma) = expected_identity(&g).unwrap();
        assert_eq!(mu, p.mu_id);
        assert!((sigma - &p.sigma_id).abs().max() < 1e-15);
        g.validate().unwrap();
    }

    #[test]
    fn sample_at_mean_only_counts() {
        let g = IdentityModel::generic(&priors(3));
        let u = niw_update(&g, &[sample(g.m.clone(), 1.0)]);
        assert_eq!(u.m, g.m);
        assert!((&u.psi - &g.psi).abs().max() < 1e-15);
        assert_eq!(u.beta, g.beta + 1.0);
        assert_eq!(u.nu, g.nu + 1.0);
    }

    #[test]
    fn zero_confidence_is_noop() {
        let g = IdentityModel::generic(&priors(3));
        assert_eq!(niw_update(&g, &[sample(DVector::from_element(3, 5.0), 0.0)]), g);
        assert_eq!(niw_update(&g, &[]), g);
    }

    #[test]
    fn undefined_variance_is_reported() {
        let mut g = IdentityModel::generic(&priors(3));
        g.nu = 4.0;
        assert!(matches!(expected_identity(&g), Err(Error::UndefinedVariance { .. })));
    }

    #[test]
    fn posterior_contracts_with_tight_samples() {
        let p = priors(4);
        let g = IdentityModel::generic(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let center = random_vec(&mut rng, 4);
        let samples: Vec<_> = (0..200)
            .map(|_| sample(&center + random_vec(&mut rng, 4) * 0.01, 1.0))
            .collect();
        let u = niw_update(&g, &samples);
        let (_, sigma) = expected_identity(&u).unwrap();
        assert!(sigma.trace() < p.sigma_id.trace());
        assert_eq!(sigma, sigma.transpose());
        assert!(sigma.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn switch_picks_own_model_and_generic_for_outliers() {
        let p = priors(3);
        let mut store = IdentityStore::from_priors(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = &p.mu_id - DVector::from_element(3, 0.5);
        let tight: Vec<_> = (0..50).map(|_| sample(&center + random_vec(&mut rng, 3) * 0.01, 1.0)).collect();
        store.models.push(niw_update(&store.generic, &tight));
        let m = store.models[0].m.clone();
        assert_eq!(switch(&m, &store).unwrap(), 1);
        // far from the tight model but plausible under the prior
        let far = &p.mu_id + DVector::from_element(3, 0.3);
        let (mu, sigma) = expected_identity(&store.models[0]).unwrap();
        let e = &far - mu;
        assert!(e.dot(&(sigma.try_inverse().unwrap() * &e)).sqrt() > 5.0);
        assert_eq!(switch(&far, &store).unwrap(), 0);
    }

    #[test]
    fn switch_ignores_common_normalizer() {
        let p = priors(3);
        let mut store = IdentityStore::from_priors(&p);
        let mut other = IdentityModel::generic(&p);
        other.m[0] += 0.2;
        store.models.push(other);
        let w = DVector::from_vec(vec![0.15, 0.1, 0.2]);
        let lps: Vec<f64> = (0..2).map(|k| log_density(store.get(k).unwrap(), &w).unwrap()).collect();
        let shifted: Vec<f64> = lps.iter().map(|l| l + 3.7).collect();
        let arg = |v: &[f64]| if v[1] > v[0] { 1 } else { 0 };
        assert_eq!(arg(&lps), arg(&shifted));
        assert_eq!(switch(&w, &store).unwrap(), arg(&lps));
    }

    #[test]
    fn adapt_clip_grows_only_matched_model() {
        let p = priors(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = IdentityStore::from_priors(&p);
        let mut centers = Vec::new();
        for _ in 0..2 {
            let c = &p.mu_id + random_vec(&mut rng, 3) * 0.6;
            let s: Vec<_> = (0..30).map(|_| sample(&c + random_vec(&mut rng, 3) * 0.01, 1.0)).collect();
            store.models.push(niw_update(&store.generic, &s));
            centers.push(c);
        }
        let clip: Vec<_> = (0..5).map(|_| sample(&centers[1] + random_vec(&mut rng, 3) * 0.01, 0.8)).collect();
        let out = adapt_clip(&store, &clip).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.models[0], store.models[0]);
        assert!((out.models[1].beta - store.models[1].beta - 4.0).abs() < 1e-12);
        assert!((out.models[1].nu - store.models[1].nu - 4.0).abs() < 1e-12);
        assert_eq!(out.present_index, 2);
        assert_eq!(out.generic, store.generic);

        store.models[1].converged = true;
        let frozen = adapt_clip(&store, &clip).unwrap();
        assert_eq!(frozen.models, store.models);
        assert_eq!(frozen.present_index, 2);
    }

    #[test]
    fn empty_clip_leaves_store_unchanged() {
        let store = IdentityStore::from_priors(&priors(3));
        assert_eq!(adapt_clip(&store, &[]).unwrap(), store);
    }

    #[test]
    fn unmatched_clip_spawns_one_model_with_weighted_alpha() {
        let p = priors(3);
        let store = IdentityStore::from_priors(&p);
        let clip = vec![
            IdentitySample {
                w_id: p.mu_id.clone(),
                kappa: 1.0,
                alpha: 0.1,
            },
            IdentitySample {
                w_id: p.mu_id.clone(),
                kappa: 0.5,
                alpha: 0.4,
            },
        ];
        let out = adapt_clip(&store, &clip).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.present_index, 1);
        assert!((out.models[0].alpha - 0.2).abs() < 1e-12);
        let again = adapt_clip(&out, &clip).unwrap();
        assert_eq!(again.len(), 1);
        assert!((again.models[0].alpha - 0.2).abs() < 1e-12);
    }

    #[test]
    fn confidence_examples() {
        use Visibility::*;
        let labels = |g: Vec<Visibility>| VisibilityLabels { gamma: g };
        assert_eq!(confidence(&labels(vec![Visible; 4])), 1.0);
        assert_eq!(confidence(&labels(vec![Occluded; 4])), 0.0);
        assert_eq!(confidence(&labels(vec![Visible, Occluded, Visible, Excluded])), 0.5);
    }

    #[test]
    fn convergence_examples() {
        let a = vec![Vec3::new(1.0, 2.0, 3.0); 5];
        assert!(adaptation_converged(&a, &a, 1.0).unwrap());
        let b: Vec<_> = a.iter().map(|v| v + Vec3::new(2.0, 0.0, 0.0)).collect();
        assert!((mean_squared_displacement(&a, &b).unwrap() - 4.0).abs() < 1e-12);
        assert!(!adaptation_converged(&a, &b, 1.0).unwrap());
        assert!(adaptation_converged(&a, &b[..4], 1.0).is_err());
    }
}
