use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::{build_from_corpus, truncate, MultilinearModel};
use crate::identity::{CONVERGENCE_TOL_MM2, MIN_VISIBLE_RAYS};
use crate::synth::generate_corpus;
use crate::tracker::TrackConfig;

/// Synthetic training corpus and model truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub corpus_seed: u64,
    pub corpus_identities: usize,
    pub corpus_expressions: usize,
    pub vertices: usize,
    /// Identity dimensions kept.
    pub n_id: usize,
    /// Expression dimensions kept.
    pub n_exp: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            corpus_seed: 1,
            corpus_identities: 40,
            corpus_expressions: 10,
            vertices: 2000,
            n_id: 28,
            n_exp: 7,
        }
    }
}

impl ModelConfig {
    /// Builds and truncates the model from the procedural corpus.
    pub fn build(&self) -> Result<MultilinearModel> {
        let corpus = generate_corpus(self.corpus_seed, self.corpus_identities, self.corpus_expressions, self.vertices);
        truncate(&build_from_corpus(&corpus)?, self.n_id, self.n_exp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityConfig {
    pub adapt: bool,
    /// Frames between identity samples.
    pub stride: usize,
    /// Frames per adaptation clip.
    pub clip_frames: usize,
    /// Correspondence/solve alternations per identity sample.
    pub fit_iterations: usize,
    /// Re-estimate the rigid pose together with each identity sample.
    pub refine_pose: bool,
    pub min_visible_rays: usize,
    /// Mean squared vertex change treated as converged (mm^2).
    pub converge_tol_mm2: f64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self {
            adapt: true,
            stride: 5,
            clip_frames: 30,
            fit_iterations: 4,
            refine_pose: true,
            min_visible_rays: MIN_VISIBLE_RAYS,
            converge_tol_mm2: CONVERGENCE_TOL_MM2,
        }
    }
}

/// Every tunable of the tracker; all keys are optional in the TOML file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub track: TrackConfig,
    pub identity: IdentityConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        if self.identity.stride == 0 || self.identity.clip_frames == 0 {
            return Err(Error::InvalidArgument("identity stride and clip length must be positive".into()));
        }
        if self.model.n_id == 0 || self.model.n_exp == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(path.display().to_string(), detail),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e.to_string()))
    }
}
