use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use raytrack::face_model::{build_from_corpus, truncate, MultilinearModel};
use raytrack::geometry::{cloud_from_frame, CameraIntrinsics, DepthFrame, Pose, Vec3};
use raytrack::identity::{estimate_wid, fit_identity, identity_system, FitOptions};
use raytrack::synth::{generate_corpus, render_depth, sample_identity};
use raytrack::tracker::face_roi;
use raytrack::visibility::{classify_visibility, correspond, RvsParams, Visibility, VisibilityLabels};

fn model() -> MultilinearModel {
    truncate(&build_from_corpus(&generate_corpus(1, 40, 10, 2000)).unwrap(), 28, 7).unwrap()
}

fn render(model: &MultilinearModel, w: &DVector<f64>, pose: &Pose) -> DepthFrame {
    let verts = model.synthesize(w, &model.priors.mu_exp).unwrap();
    render_depth(&verts, &model.triangles, pose, &CameraIntrinsics::kinect(), 640, 480)
}

#[test]
fn recovers_rendered_identity() {
    let model = model();
    let k = CameraIntrinsics::kinect();
    let params = RvsParams::default();
    let face = |w: &DVector<f64>| model.synthesize(w, &model.priors.mu_exp).unwrap();
    for seed in 11..17 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_true = sample_identity(&model, &mut rng);
        let pose = Pose::new(Vec3::new(0.0, 0.1, 0.0), Vec3::new(0.0, 0.0, 900.0), 0.0);
        let frame = render(&model, &w_true, &pose);
        let mu = &model.priors.mu_id;
        let fit = fit_identity(&model, &frame, &pose, &k, mu, mu, &model.priors.sigma_id, &params, &FitOptions { iterations: 4, refine_pose: None }).unwrap();
        let (est, labels) = (fit.estimate, fit.labels);
        assert!(est.confident);
        let seen: Vec<usize> = (0..labels.len()).filter(|&v| labels.gamma[v] == Visibility::Visible).collect();
        let rms = |a: &[Vec3], b: &[Vec3]| {
            (seen.iter().map(|&v| (a[v] - b[v]).norm_squared()).sum::<f64>() / seen.len() as f64).sqrt()
        };
        let truth = face(&w_true);
        let shape_err = rms(&face(&est.w_id), &truth);
        let start_err = rms(&face(mu), &truth);
        let weight_err = (&est.w_id - &w_true).norm() / w_true.norm();
        eprintln!("seed {seed}: weight error {weight_err:.3}, visible shape rms {shape_err:.3} mm from {start_err:.3} mm");
        assert!(shape_err < 1.0, "seed {seed}: shape rms {shape_err}");
        assert!(shape_err < 0.15 * start_err, "seed {seed}: shape rms {shape_err} from {start_err}");
    }
}

#[test]
fn solution_satisfies_normal_equations() {
    let model = model();
    let k = CameraIntrinsics::kinect();
    let pose = Pose::new(Vec3::zeros(), Vec3::new(10.0, 0.0, 950.0), 0.0);
    let frame = render(&model, &model.priors.mu_id, &pose);
    let dist = model.identity_conditioned(&model.priors.mu_id).unwrap();
    let params = RvsParams::default();
    let cloud = cloud_from_frame(&frame, face_roi(&dist, &pose, &k, 640, 480), &k).unwrap();
    let rays = correspond(&dist, &pose, &frame, &cloud, &k);
    let labels = classify_visibility(&rays, &pose, &dist, &params);
    let (mu, sigma) = (&model.priors.mu_id, &model.priors.sigma_id);
    let est = estimate_wid(&rays, &labels, &pose, &model, &dist.sigma_blocks, mu, sigma, &params).unwrap();
    let sys = identity_system(&rays, &labels, &pose, &model, &dist.sigma_blocks, mu, sigma, &params).unwrap();
    assert!(sys.relative_residual(&est.w_id) < 1e-8);
}

#[test]
fn no_visible_rays_returns_prior_mean() {
    let model = model();
    let dist = model.marginalize();
    let labels = VisibilityLabels { gamma: Vec::new() };
    let est = estimate_wid(
        &[],
        &labels,
        &Pose::identity(),
        &model,
        &dist.sigma_blocks,
        &model.priors.mu_id,
        &model.priors.sigma_id,
        &RvsParams::default(),
    )
    .unwrap();
    assert!(!est.confident);
    assert_eq!(est.w_id, model.priors.mu_id);
}
