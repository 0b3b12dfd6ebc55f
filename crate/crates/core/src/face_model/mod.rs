//! Probabilistic multilinear face model.
//!
//! A face is `f = f_mean + C x2 w_id x3 w_exp` where the core tensor `C` has
//! modes (shape, identity, expression). The shape axis interleaves vertex
//! coordinates as `[x0, y0, z0, x1, ...]`, and the core is stored
//! column-major: element `(s, i, j)` lives at `s + S * (i + n_id * j)` with
//! `S = 3 * vertex_count`.
//!
//! With Gaussian priors on both weight vectors and the bilinear residual
//! dropped, every vertex is Gaussian; [`FaceDistribution`] keeps its mean and
//! the 3x3 diagonal block of the shape covariance.

pub(crate) mod format;
mod hosvd;

pub use format::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC};
pub use hosvd::{build_from_corpus, truncate, Corpus};

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Gaussian priors over the identity and expression weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub mu_id: DVector<f64>,
    pub sigma_id: DMatrix<f64>,
    pub mu_exp: DVector<f64>,
    pub sigma_exp: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultilinearModel {
    /// Flattened mean face, length `3 * vertex_count`.
    pub mean_face: DVector<f64>,
    /// Core tensor, column-major `(3 * vertex_count) x n_id x n_exp`.
    pub core: Vec<f64>,
    /// Identity factor, corpus identities x `n_id` (orthonormal columns).
    pub u_id: DMatrix<f64>,
    /// Expression factor, corpus expressions x `n_exp`.
    pub u_exp: DMatrix<f64>,
    pub priors: Priors,
    /// Fixed mesh topology.
    pub triangles: Vec<[u32; 3]>,
}

impl MultilinearModel {
    pub fn vertex_count(&self) -> usize {
        self.mean_face.len() / 3
    }

    pub fn shape_len(&self) -> usize {
        self.mean_face.len()
    }

    pub fn n_id(&self) -> usize {
        self.u_id.ncols()
    }

    pub fn n_exp(&self) -> usize {
        self.u_exp.ncols()
    }

    /// Checks tensor dimensions, orthonormality of the factors, and that the
    /// prior covariances are symmetric positive semi-definite.
    pub fn validate(&self) -> Result<()> {
        let s = self.shape_len();
        if !s.is_multiple_of(3) || s == 0 {
            return Err(Error::InvalidArgument(format!("shape length {s} is not a positive multiple of 3")));
        }
        let expected = s * self.n_id() * self.n_exp();
        if self.core.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "core tensor",
                expected,
                got: self.core.len(),
            });
        }
        for (name, u) in [("U_id", &self.u_id), ("U_exp", &self.u_exp)] {
            let gram = u.transpose() * u;
            let err = (gram - DMatrix::identity(u.ncols(), u.ncols())).amax();
            if err > 1e-8 {
                return Err(Error::InvalidArgument(format!("{name} columns not orthonormal (error {err:e})")));
            }
        }
        let p = &self.priors;
        check_len("mu_id", p.mu_id.len(), self.n_id())?;
        check_len("mu_exp", p.mu_exp.len(), self.n_exp())?;
        check_len("sigma_id", p.sigma_id.nrows(), self.n_id())?;
        check_len("sigma_exp", p.sigma_exp.nrows(), self.n_exp())?;
        for (name, m) in [("sigma_id", &p.sigma_id), ("sigma_exp", &p.sigma_exp)] {
            if !m.is_square() || (m - m.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
            let min_eig = m.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-9 {
                return Err(Error::InvalidArgument(format!("{name} is not PSD (min eigenvalue {min_eig:e})")));
            }
        }
        if let Some(t) = self
            .triangles
            .iter()
            .find(|t| t.iter().any(|&v| v as usize >= self.vertex_count()))
        {
            return Err(Error::InvalidArgument(format!("triangle {t:?} references a missing vertex")));
        }
        Ok(())
    }

    /// Core tensor viewed as `(S * n_id) x n_exp`.
    fn core_by_expression(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.core, self.shape_len() * self.n_id(), self.n_exp())
    }

    /// Frontal slice `C(:, :, j)` as an `S x n_id` matrix.
    fn core_slice(&self, j: usize) -> DMatrixView<'_, f64> {
        let block = self.shape_len() * self.n_id();
        DMatrixView::from_slice(&self.core[j * block..(j + 1) * block], self.shape_len(), self.n_id())
    }

    /// `C x3 w_exp`, an `S x n_id` matrix.
    pub fn contract_expression(&self, w_exp: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("w_exp", w_exp.len(), self.n_exp())?;
        let flat = self.core_by_expression() * w_exp;
        Ok(DMatrix::from_vec(self.shape_len(), self.n_id(), flat.data.into()))
    }

    /// `C x2 w_id`, an `S x n_exp` matrix.
    pub fn contract_identity(&self, w_id: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("w_id", w_id.len(), self.n_id())?;
        let mut out = DMatrix::zeros(self.shape_len(), self.n_exp());
        for j in 0..self.n_exp() {
            out.set_column(j, &(self.core_slice(j) * w_id));
        }
        Ok(out)
    }

    /// Flattened face `f_mean + C x2 w_id x3 w_exp`.
    pub fn synthesize_flat(&self, w_id: &DVector<f64>, w_exp: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("w_id", w_id.len(), self.n_id())?;
        let p_id = self.contract_expression(w_exp)?;
        Ok(&self.mean_face + p_id * w_id)
    }

    pub fn synthesize(&self, w_id: &DVector<f64>, w_exp: &DVector<f64>) -> Result<Vec<Vec3>> {
        Ok(unflatten(&self.synthesize_flat(w_id, w_exp)?))
    }

    /// Gaussian face distribution under the model's own priors.
    pub fn marginalize(&self) -> FaceDistribution {
        self.marginalize_with_identity(&self.priors.mu_id, &self.priors.sigma_id)
            .expect("priors validated against model dimensions")
    }

    /// Gaussian face distribution with the identity prior replaced, as used
    /// when an adapted identity model drives the tracker.
    pub fn marginalize_with_identity(&self, mu_id: &DVector<f64>, sigma_id: &DMatrix<f64>) -> Result<FaceDistribution> {
        check_len("mu_id", mu_id.len(), self.n_id())?;
        check_len("sigma_id", sigma_id.nrows(), self.n_id())?;
        let p_id = self.contract_expression(&self.priors.mu_exp)?;
        let p_exp = self.contract_identity(mu_id)?;
        let mean = &self.mean_face + &p_id * mu_id;
        let n = self.vertex_count();
        let mut sigma_blocks = Vec::with_capacity(n);
        for v in 0..n {
            let a = p_id.rows(3 * v, 3);
            let b = p_exp.rows(3 * v, 3);
            let block = a * sigma_id * a.transpose() + b * &self.priors.sigma_exp * b.transpose();
            sigma_blocks.push(symmetrize(Mat3::from_iterator(block.iter().copied())));
        }
        Ok(FaceDistribution {
            mu: unflatten(&mean),
            sigma_blocks,
            p_id,
            p_exp,
        })
    }

    /// Distribution of the face given a fixed identity weight: mean
    /// `f_mean + P_id w_id`, covariance from the expression prior only.
    pub fn identity_conditioned(&self, w_id: &DVector<f64>) -> Result<FaceDistribution> {
        check_len("w_id", w_id.len(), self.n_id())?;
        let p_id = self.contract_expression(&self.priors.mu_exp)?;
        let p_exp = self.contract_identity(&self.priors.mu_id)?;
        let mean = &self.mean_face + &p_id * w_id;
        let sigma_blocks = expression_blocks(&p_exp, &self.priors.sigma_exp);
        Ok(FaceDistribution {
            mu: unflatten(&mean),
            sigma_blocks,
            p_id,
            p_exp,
        })
    }

    /// Priors implied by the factor matrices: `mu = U^T 1 / N` (N corpus
    /// rows) and `Sigma = I / n` at the model's own dimension.
    pub fn estimate_hyperparameters(&self) -> Priors {
        estimate_priors(&self.u_id, &self.u_exp)
    }
}

pub(crate) fn estimate_priors(u_id: &DMatrix<f64>, u_exp: &DMatrix<f64>) -> Priors {
    let mean_weight = |u: &DMatrix<f64>| {
        let ones = DVector::from_element(u.nrows(), 1.0);
        u.transpose() * ones / u.nrows() as f64
    };
    let k_id = u_id.ncols();
    let k_exp = u_exp.ncols();
    Priors {
        mu_id: mean_weight(u_id),
        sigma_id: DMatrix::identity(k_id, k_id) / k_id as f64,
        mu_exp: mean_weight(u_exp),
        sigma_exp: DMatrix::identity(k_exp, k_exp) / k_exp as f64,
    }
}

/// Per-vertex blocks of `P_exp Sigma_exp P_exp^T`.
pub(crate) fn expression_blocks(p_exp: &DMatrix<f64>, sigma_exp: &DMatrix<f64>) -> Vec<Mat3> {
    (0..p_exp.nrows() / 3)
        .map(|v| {
            let b = p_exp.rows(3 * v, 3);
            let block = b * sigma_exp * b.transpose();
            symmetrize(Mat3::from_iterator(block.iter().copied()))
        })
        .collect()
}

fn symmetrize(m: Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

pub fn unflatten(flat: &DVector<f64>) -> Vec<Vec3> {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

pub fn flatten(vertices: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(vertices.len() * 3, vertices.iter().flat_map(|v| [v.x, v.y, v.z]))
}

/// Per-vertex Gaussian of the morphable face.
#[derive(Debug, Clone)]
pub struct FaceDistribution {
    /// Vertex means (mm).
    pub mu: Vec<Vec3>,
    /// Diagonal 3x3 blocks of the shape covariance.
    pub sigma_blocks: Vec<Mat3>,
    /// `C x3 mu_exp`, `3N x n_id`.
    pub p_id: DMatrix<f64>,
    /// `C x2 mu_id`, `3N x n_exp`.
    pub p_exp: DMatrix<f64>,
}

impl FaceDistribution {
    pub fn vertex_count(&self) -> usize {
        self.mu.len()
    }

    /// Same means with every covariance block zeroed.
    pub fn deterministic(&self) -> FaceDistribution {
        FaceDistribution {
            sigma_blocks: vec![Mat3::zeros(); self.mu.len()],
            ..self.clone()
        }
    }
}
