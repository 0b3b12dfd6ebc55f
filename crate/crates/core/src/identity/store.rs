//! `IDST1` identity store files.
//!
//! Same chunk layout as model files (magic, then `[tag][u64 length][payload]`
//! chunks, closed by `END\0`), little-endian.
//!
//! | tag    | payload |
//! |--------|---------|
//! | `DIMS` | u64 x2: stored model count K, identity dimension d |
//! | `PRES` | u64: present model index (0 = generic) |
//! | `GENR` | one model record |
//! | `MODS` | K model records back to back |
//!
//! A model record is `d + d*d + 4` f64 values: `m`, `psi` (column-major),
//! `beta`, `nu`, `alpha`, and `1` or `0` for whether the model has converged.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{IdentityModel, IdentityStore};
use crate::error::{Error, Result};
use crate::face_model::format::{get_chunk, parse_f64s, read_chunks, ChunkWriter};
use crate::io::write_atomic;

pub const STORE_MAGIC: &[u8; 5] = b"IDST1";
const WHAT: &str = "identity store";

fn record_len(d: usize) -> usize {
    d + d * d + 4
}

fn push_record(out: &mut Vec<f64>, model: &IdentityModel) {
    out.extend_from_slice(model.m.as_slice());
    out.extend_from_slice(model.psi.as_slice());
    out.extend_from_slice(&[model.beta, model.nu, model.alpha, if model.converged { 1.0 } else { 0.0 }]);
}

fn parse_record(values: &[f64], d: usize) -> Result<IdentityModel> {
    let flag = values[d + d * d + 3];
    if flag != 0.0 && flag != 1.0 {
        return Err(Error::format(WHAT, format!("convergence flag must be 0 or 1, found {flag}")));
    }
    let model = IdentityModel {
        m: DVector::from_column_slice(&values[..d]),
        psi: DMatrix::from_column_slice(d, d, &values[d..d + d * d]),
        beta: values[d + d * d],
        nu: values[d + d * d + 1],
        alpha: values[d + d * d + 2],
        converged: flag == 1.0,
    };
    model.validate().map_err(|e| Error::format(WHAT, e.to_string()))?;
    Ok(model)
}

pub fn encode_store(store: &IdentityStore) -> Vec<u8> {
    let d = store.generic.dim();
    let mut w = ChunkWriter::new(STORE_MAGIC);
    let dims: Vec<u8> = [store.models.len() as u64, d as u64].iter().flat_map(|x| x.to_le_bytes()).collect();
    w.chunk(b"DIMS", &dims);
    w.chunk(b"PRES", &(store.present_index as u64).to_le_bytes());
    let mut generic = Vec::with_capacity(record_len(d));
    push_record(&mut generic, &store.generic);
    w.f64s(b"GENR", &generic);
    let mut models = Vec::with_capacity(record_len(d) * store.models.len());
    for m in &store.models {
        push_record(&mut models, m);
    }
    w.f64s(b"MODS", &models);
    w.finish()
}

fn read_u64s(payload: &[u8], n: usize) -> Result<Vec<u64>> {
    if payload.len() != 8 * n {
        return Err(Error::format(WHAT, format!("expected {n} integers, found {} bytes", payload.len())));
    }
    Ok(payload.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn decode_store(bytes: &[u8]) -> Result<IdentityStore> {
    let chunks = read_chunks(bytes, STORE_MAGIC, WHAT)?;
    let dims = read_u64s(get_chunk(&chunks, b"DIMS", WHAT)?, 2)?;
    let (k, d) = (dims[0] as usize, dims[1] as usize);
    if d == 0 {
        return Err(Error::format(WHAT, "identity dimension is zero"));
    }
    let present = read_u64s(get_chunk(&chunks, b"PRES", WHAT)?, 1)?[0] as usize;
    if present > k {
        return Err(Error::format(WHAT, format!("present index {present} exceeds model count {k}")));
    }
    let generic = parse_record(&parse_f64s(get_chunk(&chunks, b"GENR", WHAT)?, record_len(d), WHAT)?, d)?;
    let flat = parse_f64s(get_chunk(&chunks, b"MODS", WHAT)?, record_len(d) * k, WHAT)?;
    let models = flat
        .chunks_exact(record_len(d).max(1))
        .map(|r| parse_record(r, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(IdentityStore {
        generic,
        models,
        present_index: present,
    })
}

pub fn write_store(path: &Path, store: &IdentityStore) -> Result<()> {
    write_atomic(path, &encode_store(store))
}

pub fn read_store(path: &Path) -> Result<IdentityStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}

/// Appends the personalized models of `other` to `base`. Both stores must
/// share the same generic model.
pub fn merge_stores(base: &IdentityStore, other: &IdentityStore) -> Result<IdentityStore> {
    if base.generic != other.generic {
        return Err(Error::InvalidArgument("stores were built from different generic models".into()));
    }
    let mut out = base.clone();
    out.models.extend(other.models.iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::Priors;
    use crate::identity::{niw_update, IdentitySample};

    fn store() -> IdentityStore {
        let d = 3;
        let priors = Priors {
            mu_id: DVector::from_vec(vec![0.1, 0.2, 0.3]),
            sigma_id: DMatrix::identity(d, d) / 3.0,
            mu_exp: DVector::zeros(1),
            sigma_exp: DMatrix::identity(1, 1),
        };
        let mut s = IdentityStore::from_priors(&priors);
        let sample = IdentitySample {
            w_id: DVector::from_vec(vec![0.5, -0.1, 0.0]),
            kappa: 0.7,
            alpha: 0.02,
        };
        let mut m = niw_update(&s.generic, &[sample]);
        m.alpha = 0.02;
        m.converged = true;
        s.models.push(m);
        s.present_index = 1;
        s
    }

    #[test]
    fn roundtrip_is_exact() {
        let s = store();
        let bytes = encode_store(&s);
        assert_eq!(&bytes[..5], STORE_MAGIC);
        assert_eq!(decode_store(&bytes).unwrap(), s);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_store(&store());
        assert!(decode_store(&bytes[..bytes.len() - 20]).is_err());
        assert!(decode_store(b"IDST0").is_err());
    }

    #[test]
    fn merge_appends_and_checks_generic() {
        let a = store();
        let merged = merge_stores(&a, &a).unwrap();
        assert_eq!(merged.len(), 2);
        let mut other = a.clone();
        other.generic.beta = 2.0;
        assert!(merge_stores(&a, &other).is_err());
    }
}
