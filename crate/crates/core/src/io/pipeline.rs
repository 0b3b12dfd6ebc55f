use std::path::Path;

use nalgebra::DVector;

use super::config::PipelineConfig;
use super::records::{write_pose_csv, PoseRecord};
use super::sequence::{load_sequence, SequenceManifest};
use crate::error::{Error, Result};
use crate::face_model::{FaceDistribution, MultilinearModel};
use crate::geometry::{CameraIntrinsics, DepthFrame, Pose};
use crate::identity::{
    adapt_clip, confidence, expected_identity, fit_identity, identity_face, log_density, mean_squared_displacement, write_store,
    FitOptions, IdentityFit, IdentityModel, IdentitySample, IdentityStore,
};
use crate::tracker::{localize_face, track_frame, FrameResult, MinimizeOptions, TrackConfig, TrackerState};

/// Summary of one adaptation round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipReport {
    /// Last frame of the clip.
    pub end_frame: usize,
    pub samples: usize,
    pub present_index: usize,
    pub model_count: usize,
    /// Mean of the present identity after the round.
    pub present_mean: DVector<f64>,
    /// Mean squared vertex change of the present identity's face (mm^2).
    pub face_change_mm2: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub records: Vec<PoseRecord>,
    pub store: IdentityStore,
    pub clips: Vec<ClipReport>,
}

impl PipelineOutput {
    pub fn failed_frames(&self) -> usize {
        self.records.iter().filter(|r| r.failed).count()
    }

    pub fn write(&self, poses: &Path, store: &Path) -> Result<()> {
        write_pose_csv(poses, &self.records)?;
        write_store(store, &self.store)
    }
}

/// Face distribution the tracker uses for an identity model.
pub fn tracking_distribution(model: &MultilinearModel, identity: &IdentityModel) -> Result<FaceDistribution> {
    let (mu, sigma) = expected_identity(identity)?;
    model.marginalize_with_identity(&mu, &sigma)
}

/// Frame-by-frame tracking with periodic identity sampling and per-clip
/// identity adaptation.
pub struct Pipeline<'a> {
    model: &'a MultilinearModel,
    k: CameraIntrinsics,
    config: PipelineConfig,
    track: TrackConfig,
    store: IdentityStore,
    dist: FaceDistribution,
    state: Option<TrackerState>,
    samples: Vec<IdentitySample>,
    records: Vec<PoseRecord>,
    clips: Vec<ClipReport>,
    last_pose: Pose,
}

impl<'a> Pipeline<'a> {
    /// Starts from `store`, or from a fresh store holding only the model's
    /// generic identity.
    pub fn new(
        model: &'a MultilinearModel,
        k: CameraIntrinsics,
        config: &PipelineConfig,
        store: Option<IdentityStore>,
    ) -> Result<Self> {
        config.validate()?;
        let store = store.unwrap_or_else(|| IdentityStore::from_priors(&model.priors));
        if store.generic.dim() != model.n_id() {
            return Err(Error::DimensionMismatch {
                what: "identity store",
                expected: model.n_id(),
                got: store.generic.dim(),
            });
        }
        let dist = tracking_distribution(model, store.present())?;
        let mut track = config.track;
        track.pso.seed = track.pso.seed.wrapping_add(config.seed);
        Ok(Self {
            model,
            k,
            config: *config,
            track,
            store,
            dist,
            state: None,
            samples: Vec::new(),
            records: Vec::new(),
            clips: Vec::new(),
            last_pose: Pose::identity(),
        })
    }

    pub fn store(&self) -> &IdentityStore {
        &self.store
    }

    pub fn clips(&self) -> &[ClipReport] {
        &self.clips
    }

    /// Tracks from the current state, re-localizing when there is none or
    /// when the track is lost. The flag reports a loss.
    fn track(&mut self, frame: &DepthFrame, index: usize) -> Result<(Option<FrameResult>, bool)> {
        let mut lost = false;
        if let Some(state) = &mut self.state {
            match track_frame(state, frame, &self.dist, &self.k, &self.track) {
                Ok(r) => return Ok((Some(r), false)),
                Err(Error::TrackingLost { .. }) | Err(Error::EmptyCloud) => {
                    self.state = None;
                    lost = true;
                }
                Err(e) => return Err(e),
            }
        }
        let pose = match localize_face(frame, &self.k) {
            Ok((_, pose)) => pose,
            Err(Error::LocalizationFailed(_)) => return Ok((None, true)),
            Err(e) => return Err(e),
        };
        let mut state = TrackerState::from_pose(Pose {
            alpha: self.store.present().alpha,
            ..pose
        });
        state.frame_index = index;
        match track_frame(&mut state, frame, &self.dist, &self.k, &self.track) {
            Ok(r) => {
                self.state = Some(state);
                Ok((Some(r), lost))
            }
            Err(Error::TrackingLost { .. }) | Err(Error::EmptyCloud) => Ok((None, true)),
            Err(e) => Err(e),
        }
    }

    /// Processes the next frame and returns its pose record.
    pub fn push(&mut self, frame: &DepthFrame) -> Result<PoseRecord> {
        let index = self.records.len();
        let (result, lost) = self.track(frame, index)?;
        let record = match &result {
            Some(r) => {
                self.last_pose = r.pose;
                PoseRecord::from_pose(index, &r.pose, r.labels.occluded_fraction(), lost || r.failed)
            }
            None => PoseRecord::from_pose(index, &self.last_pose, 1.0, true),
        };
        self.records.push(record);
        let idc = self.config.identity;
        if let (true, Some(r)) = (idc.adapt, &result) {
            if !record.failed && index.is_multiple_of(idc.stride) {
                self.sample(frame, r)?;
            }
        }
        if (index + 1).is_multiple_of(idc.clip_frames) {
            self.end_clip(index)?;
        }
        Ok(record)
    }

    fn sample(&mut self, frame: &DepthFrame, r: &FrameResult) -> Result<()> {
        let priors = &self.model.priors;
        let idc = self.config.identity;
        let options = FitOptions {
            iterations: idc.fit_iterations,
            refine_pose: idc.refine_pose.then(|| MinimizeOptions::from_config(&self.track)),
        };
        // Each start stands for a hypothesis about who is in view: the present
        // model, or an unseen person under the generic model. The fit most
        // probable under its own hypothesis becomes the sample.
        let mut hypotheses = vec![self.store.present()];
        if self.store.present_index != 0 {
            hypotheses.push(&self.store.generic);
        }
        let mut best: Option<(f64, IdentityFit)> = None;
        for hypothesis in hypotheses {
            let fit = match fit_identity(
                self.model,
                frame,
                &r.pose,
                &self.k,
                &hypothesis.m,
                &priors.mu_id,
                &priors.sigma_id,
                &self.track.rvs,
                &options,
            ) {
                Ok(fit) => fit,
                Err(Error::EmptyCloud) => continue,
                Err(e) => return Err(e),
            };
            let score = -log_density(hypothesis, &fit.estimate.w_id)?;
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, fit));
            }
        }
        let Some((_, fit)) = best else {
            return Ok(());
        };
        if fit.estimate.confident && fit.estimate.visible >= idc.min_visible_rays {
            self.samples.push(IdentitySample {
                w_id: fit.estimate.w_id,
                kappa: confidence(&r.labels),
                alpha: r.pose.alpha,
            });
        }
        Ok(())
    }

    fn end_clip(&mut self, end_frame: usize) -> Result<()> {
        if !self.config.identity.adapt {
            return Ok(());
        }
        let samples = std::mem::take(&mut self.samples);
        let before_index = self.store.present_index;
        let mut updated = adapt_clip(&self.store, &samples)?;
        let tol = self.config.identity.converge_tol_mm2;
        for (before, after) in self.store.models.iter().zip(updated.models.iter_mut()) {
            if before != after && !after.converged {
                let change = mean_squared_displacement(&identity_face(self.model, before)?, &identity_face(self.model, after)?)?;
                after.converged = change < tol;
            }
        }
        let after = updated.present().clone();
        // compare with the same model's previous face, or the generic face
        // for a newly created model
        let previous = self.store.get(updated.present_index).unwrap_or(&self.store.generic);
        let change = mean_squared_displacement(
            &identity_face(self.model, previous)?,
            &identity_face(self.model, &after)?,
        )?;
        if updated.present_index != before_index || after.m != self.store.present().m || after.psi != self.store.present().psi {
            self.dist = tracking_distribution(self.model, &after)?;
        }
        if updated.present_index != before_index {
            if let Some(state) = &mut self.state {
                state.reset_scale(after.alpha, &self.track);
            }
        }
        self.store = updated;
        self.clips.push(ClipReport {
            end_frame,
            samples: samples.len(),
            present_index: self.store.present_index,
            model_count: self.store.len(),
            present_mean: after.m.clone(),
            face_change_mm2: change,
            converged: after.converged,
        });
        Ok(())
    }

    /// Closes a trailing partial clip and returns the results.
    pub fn finish(mut self) -> Result<PipelineOutput> {
        if !self.records.len().is_multiple_of(self.config.identity.clip_frames) && !self.samples.is_empty() {
            self.end_clip(self.records.len() - 1)?;
        }
        Ok(PipelineOutput {
            records: self.records,
            store: self.store,
            clips: self.clips,
        })
    }
}

/// Runs the full pipeline over `frames`. Fails with a localization error if
/// no frame could be tracked at all.
pub fn run_pipeline(
    frames: impl IntoIterator<Item = Result<DepthFrame>>,
    model: &MultilinearModel,
    k: CameraIntrinsics,
    config: &PipelineConfig,
    store: Option<IdentityStore>,
) -> Result<PipelineOutput> {
    let mut pipeline = Pipeline::new(model, k, config, store)?;
    for frame in frames {
        pipeline.push(&frame?)?;
    }
    let out = pipeline.finish()?;
    if !out.records.is_empty() && out.failed_frames() == out.records.len() {
        return Err(Error::LocalizationFailed("no frame of the sequence could be tracked".into()));
    }
    Ok(out)
}

pub fn run_manifest(
    manifest: &SequenceManifest,
    model: &MultilinearModel,
    config: &PipelineConfig,
    store: Option<IdentityStore>,
) -> Result<PipelineOutput> {
    run_pipeline(load_sequence(manifest), model, manifest.camera.intrinsics()?, config, store)
}
