//! `MLFM1` model files.
//!
//! Little-endian. The file starts with the 5-byte magic `MLFM1`, followed by
//! chunks of `[4-byte ASCII tag][u64 payload length][payload]`, terminated by
//! an `END\0` chunk with empty payload. Matrices are column-major `f64`.
//!
//! | tag    | payload |
//! |--------|---------|
//! | `DIMS` | u64 x5: vertex count, identity rows, n_id, expression rows, n_exp |
//! | `MEAN` | f64 x 3N mean face, interleaved xyz |
//! | `CORE` | f64 x 3N*n_id*n_exp, shape axis fastest, then identity, then expression |
//! | `UID_` | identity rows x n_id |
//! | `UEXP` | expression rows x n_exp |
//! | `MUID`, `SGID`, `MUEX`, `SGEX` | prior means and covariances |
//! | `TRIS` | u32 x 3T triangle vertex indices |
//!
//! Readers skip unknown tags.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{MultilinearModel, Priors};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 5] = b"MLFM1";

pub(crate) struct ChunkWriter {
    buf: Vec<u8>,
}

impl ChunkWriter {
    pub(crate) fn new(magic: &[u8]) -> Self {
        Self { buf: magic.to_vec() }
    }

    pub(crate) fn chunk(&mut self, tag: &[u8; 4], payload: &[u8]) {
        self.buf.extend_from_slice(tag);
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(payload);
    }

    pub(crate) fn f64s(&mut self, tag: &[u8; 4], values: &[f64]) {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.chunk(tag, &bytes);
    }

    pub(crate) fn finish(mut self) -> Vec<u8> {
        self.chunk(b"END\0", &[]);
        self.buf
    }
}

pub(crate) fn read_chunks<'a>(bytes: &'a [u8], magic: &[u8], what: &str) -> Result<HashMap<[u8; 4], &'a [u8]>> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(Error::format(what, "bad magic"));
    }
    let mut chunks = HashMap::new();
    let mut pos = magic.len();
    loop {
        if pos + 12 > bytes.len() {
            return Err(Error::format(what, "truncated chunk header"));
        }
        let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
        pos += 12;
        if bytes.len() - pos < len {
            return Err(Error::format(what, format!("chunk {:?} overruns file", String::from_utf8_lossy(&tag))));
        }
        if &tag == b"END\0" {
            return Ok(chunks);
        }
        chunks.insert(tag, &bytes[pos..pos + len]);
        pos += len;
    }
}

pub(crate) fn parse_f64s(payload: &[u8], expected: usize, what: &str) -> Result<Vec<f64>> {
    if payload.len() != expected * 8 {
        return Err(Error::format(what, format!("expected {expected} f64 values, found {} bytes", payload.len())));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn get_chunk<'a>(chunks: &HashMap<[u8; 4], &'a [u8]>, tag: &[u8; 4], what: &str) -> Result<&'a [u8]> {
    chunks
        .get(tag)
        .copied()
        .ok_or_else(|| Error::format(what, format!("missing chunk {}", String::from_utf8_lossy(tag))))
}

pub fn encode_model(model: &MultilinearModel) -> Vec<u8> {
    let mut w = ChunkWriter::new(MODEL_MAGIC);
    let dims = [
        model.vertex_count() as u64,
        model.u_id.nrows() as u64,
        model.n_id() as u64,
        model.u_exp.nrows() as u64,
        model.n_exp() as u64,
    ];
    let dims: Vec<u8> = dims.iter().flat_map(|d| d.to_le_bytes()).collect();
    w.chunk(b"DIMS", &dims);
    w.f64s(b"MEAN", model.mean_face.as_slice());
    w.f64s(b"CORE", &model.core);
    w.f64s(b"UID_", model.u_id.as_slice());
    w.f64s(b"UEXP", model.u_exp.as_slice());
    w.f64s(b"MUID", model.priors.mu_id.as_slice());
    w.f64s(b"SGID", model.priors.sigma_id.as_slice());
    w.f64s(b"MUEX", model.priors.mu_exp.as_slice());
    w.f64s(b"SGEX", model.priors.sigma_exp.as_slice());
    let tris: Vec<u8> = model.triangles.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    w.chunk(b"TRIS", &tris);
    w.finish()
}

pub fn decode_model(bytes: &[u8]) -> Result<MultilinearModel> {
    const WHAT: &str = "MLFM1 model";
    let chunks = read_chunks(bytes, MODEL_MAGIC, WHAT)?;
    let dims = get_chunk(&chunks, b"DIMS", WHAT)?;
    if dims.len() != 40 {
        return Err(Error::format(WHAT, "DIMS chunk must hold five u64"));
    }
    let d: Vec<usize> = dims
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let (n_vert, id_rows, n_id, exp_rows, n_exp) = (d[0], d[1], d[2], d[3], d[4]);
    let s = 3 * n_vert;
    let f = |tag: &[u8; 4], n: usize| parse_f64s(get_chunk(&chunks, tag, WHAT)?, n, WHAT);
    let mean_face = DVector::from_vec(f(b"MEAN", s)?);
    let core = f(b"CORE", s * n_id * n_exp)?;
    let u_id = DMatrix::from_vec(id_rows, n_id, f(b"UID_", id_rows * n_id)?);
    let u_exp = DMatrix::from_vec(exp_rows, n_exp, f(b"UEXP", exp_rows * n_exp)?);
    let priors = Priors {
        mu_id: DVector::from_vec(f(b"MUID", n_id)?),
        sigma_id: DMatrix::from_vec(n_id, n_id, f(b"SGID", n_id * n_id)?),
        mu_exp: DVector::from_vec(f(b"MUEX", n_exp)?),
        sigma_exp: DMatrix::from_vec(n_exp, n_exp, f(b"SGEX", n_exp * n_exp)?),
    };
    let tris = get_chunk(&chunks, b"TRIS", WHAT)?;
    if tris.len() % 12 != 0 {
        return Err(Error::format(WHAT, "TRIS length not a multiple of 12"));
    }
    let triangles = tris
        .chunks_exact(12)
        .map(|c| {
            let v = |k: usize| u32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
            [v(0), v(1), v(2)]
        })
        .collect();
    let model = MultilinearModel {
        mean_face,
        core,
        u_id,
        u_exp,
        priors,
        triangles,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &MultilinearModel) -> Result<()> {
    crate::io::write_atomic(path, &encode_model(model))
}

pub fn read_model(path: &Path) -> Result<MultilinearModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
