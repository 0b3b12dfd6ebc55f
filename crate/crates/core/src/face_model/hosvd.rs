use nalgebra::{DMatrix, DMatrixView, SymmetricEigen};

use super::{estimate_priors, flatten, MultilinearModel};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Training meshes on an identity x expression grid sharing one topology.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub n_id: usize,
    pub n_exp: usize,
    /// Meshes stored as `meshes[i * n_exp + j]` for identity `i`, expression `j`.
    pub meshes: Vec<Vec<Vec3>>,
    pub triangles: Vec<[u32; 3]>,
}

impl Corpus {
    pub fn mesh(&self, i: usize, j: usize) -> &[Vec3] {
        &self.meshes[i * self.n_exp + j]
    }
}

/// Eigenvectors of a symmetric Gram matrix ordered by decreasing eigenvalue,
/// i.e. the left singular vectors of the unfolding it came from. Signs are
/// fixed so the largest-magnitude entry of each column is positive.
fn ordered_eigenvectors(gram: DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        u.set_column(dst, &col);
    }
    u
}

/// Multilinear model of a complete mesh grid by higher-order SVD.
pub fn build_from_corpus(corpus: &Corpus) -> Result<MultilinearModel> {
    let (n_id, n_exp) = (corpus.n_id, corpus.n_exp);
    if n_id == 0 || n_exp == 0 || corpus.meshes.len() != n_id * n_exp {
        return Err(Error::InvalidArgument(format!(
            "incomplete corpus grid: {} meshes for {n_id} x {n_exp}",
            corpus.meshes.len()
        )));
    }
    let n_vert = corpus.meshes[0].len();
    if let Some(bad) = corpus.meshes.iter().find(|m| m.len() != n_vert) {
        return Err(Error::DimensionMismatch {
            what: "corpus mesh vertex count",
            expected: n_vert,
            got: bad.len(),
        });
    }
    let s = 3 * n_vert;

    let mut mean_face = nalgebra::DVector::zeros(s);
    for m in &corpus.meshes {
        mean_face += flatten(m);
    }
    mean_face /= corpus.meshes.len() as f64;

    // Offsets tensor T, column-major (s, i, j).
    let mut offsets = vec![0.0; s * n_id * n_exp];
    for j in 0..n_exp {
        for i in 0..n_id {
            let base = s * (i + n_id * j);
            for (k, v) in corpus.mesh(i, j).iter().enumerate() {
                for c in 0..3 {
                    offsets[base + 3 * k + c] = v[c] - mean_face[3 * k + c];
                }
            }
        }
    }

    let block = s * n_id;
    let slice = |j: usize| DMatrixView::from_slice(&offsets[j * block..(j + 1) * block], s, n_id);
    let mut gram_id = DMatrix::zeros(n_id, n_id);
    for j in 0..n_exp {
        let t = slice(j);
        gram_id += t.transpose() * t;
    }
    let by_exp = DMatrixView::from_slice(&offsets, block, n_exp);
    let gram_exp = by_exp.transpose() * by_exp;

    let u_id = ordered_eigenvectors(gram_id);
    let u_exp = ordered_eigenvectors(gram_exp);

    // C = T x2 U_id^T x3 U_exp^T
    let mut partial = vec![0.0; s * n_id * n_exp];
    for j in 0..n_exp {
        let prod = slice(j) * &u_id;
        partial[j * block..(j + 1) * block].copy_from_slice(prod.as_slice());
    }
    let core = DMatrixView::from_slice(&partial, block, n_exp) * &u_exp;

    let priors = estimate_priors(&u_id, &u_exp);
    Ok(MultilinearModel {
        mean_face,
        core: core.data.into(),
        u_id,
        u_exp,
        priors,
        triangles: corpus.triangles.clone(),
    })
}

/// Keeps the leading `n_id_keep` identity and `n_exp_keep` expression
/// components and re-estimates the priors at the reduced dimensions.
pub fn truncate(model: &MultilinearModel, n_id_keep: usize, n_exp_keep: usize) -> Result<MultilinearModel> {
    let (n_id, n_exp) = (model.n_id(), model.n_exp());
    if n_id_keep == 0 || n_id_keep > n_id || n_exp_keep == 0 || n_exp_keep > n_exp {
        return Err(Error::InvalidArgument(format!(
            "keep counts ({n_id_keep}, {n_exp_keep}) outside 1..=({n_id}, {n_exp})"
        )));
    }
    let s = model.shape_len();
    let mut core = Vec::with_capacity(s * n_id_keep * n_exp_keep);
    for j in 0..n_exp_keep {
        for i in 0..n_id_keep {
            let base = s * (i + n_id * j);
            core.extend_from_slice(&model.core[base..base + s]);
        }
    }
    let u_id = model.u_id.columns(0, n_id_keep).into_owned();
    let u_exp = model.u_exp.columns(0, n_exp_keep).into_owned();
    let priors = estimate_priors(&u_id, &u_exp);
    Ok(MultilinearModel {
        mean_face: model.mean_face.clone(),
        core,
        u_id,
        u_exp,
        priors,
        triangles: model.triangles.clone(),
    })
}
