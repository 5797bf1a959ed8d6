//! The LGMRFEAT binary feature format and the in-memory f32 matrix type.
//!
//! Layout: magic bytes `LGMRFEAT` (8), u32 little-endian version (= 1),
//! u32 little-endian ndim, ndim x u64 little-endian dims, then a payload of
//! row-major float32 little-endian values. Every value must be finite.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LGMRFEAT";
pub const VERSION: u32 = 1;

/// Dense row-major f32 tensor as stored in an LGMRFEAT file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl FeatTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::invalid(format!(
                "payload holds {} values, dims {:?} require {expect}",
                data.len(),
                dims
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite value {bad} in tensor")));
        }
        Ok(Self { dims, data })
    }
}

/// Row-major 2-D f32 matrix used for feature sequences and token features.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::invalid("ragged rows in matrix"));
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_feat_tensor(&self) -> FeatTensor {
        FeatTensor {
            dims: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }
}

/// Serializes a tensor into LGMRFEAT bytes.
pub fn encode_feat(tensor: &FeatTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + 4 + 8 * tensor.dims.len() + 4 * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses LGMRFEAT bytes, validating the header and that all values are finite.
pub fn decode_feat(bytes: &[u8]) -> Result<FeatTensor> {
    if bytes.len() < 16 {
        return Err(Error::schema("feature file shorter than header"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::schema("bad magic bytes, not an LGMRFEAT file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::schema(format!(
            "unsupported feature file version {version}, expected {VERSION}"
        )));
    }
    let ndim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let dims_end = 16 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::schema("truncated dims in feature file header"));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for k in 0..ndim {
        let off = 16 + 8 * k;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let d = usize::try_from(d).map_err(|_| Error::schema("dimension overflows usize"))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::schema("tensor size overflows usize"))?;
        dims.push(d);
    }
    let payload = &bytes[dims_end..];
    if payload.len() != count * 4 {
        return Err(Error::schema(format!(
            "truncated payload: header claims {count} values ({} bytes), found {} bytes",
            count * 4,
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite value {v} in feature payload"
            )));
        }
        data.push(v);
    }
    Ok(FeatTensor { dims, data })
}

/// Loads a 2-D feature matrix from LGMRFEAT bytes.
pub fn load_feature_matrix(bytes: &[u8]) -> Result<Matrix> {
    let t = decode_feat(bytes)?;
    if t.dims.len() != 2 {
        return Err(Error::schema(format!(
            "expected a 2-D feature matrix, file has ndim {}",
            t.dims.len()
        )));
    }
    Ok(Matrix {
        rows: t.dims[0],
        cols: t.dims[1],
        data: t.data,
    })
}

/// Serializes a 2-D feature matrix into LGMRFEAT bytes.
pub fn save_feature_matrix(m: &Matrix) -> Vec<u8> {
    encode_feat(&m.to_feat_tensor())
}

pub fn read_matrix_file(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)
        .map_err(|e| Error::schema(format!("cannot read {}: {e}", path.display())))?;
    load_feature_matrix(&bytes)
}

pub fn write_matrix_file(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, save_feature_matrix(m))?;
    Ok(())
}

pub fn write_feat_file(path: &Path, t: &FeatTensor) -> Result<()> {
    fs::write(path, encode_feat(t))?;
    Ok(())
}

pub fn read_feat_file(path: &Path) -> Result<FeatTensor> {
    let bytes = fs::read(path)
        .map_err(|e| Error::schema(format!("cannot read {}: {e}", path.display())))?;
    decode_feat(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_matrix_round_trip() {
        let m = Matrix::zeros(3, 4);
        let back = load_feature_matrix(&save_feature_matrix(&m)).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn truncated_payload_rejected() {
        let m = Matrix::zeros(10, 8);
        let mut bytes = save_feature_matrix(&m);
        bytes.truncate(bytes.len() - 8 * 4); // drop one row
        let err = load_feature_matrix(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn bad_magic_rejected() {
        let m = Matrix::zeros(2, 2);
        let mut bytes = save_feature_matrix(&m);
        bytes[0] = b'X';
        assert!(load_feature_matrix(&bytes).is_err());
    }

    #[test]
    fn version_mismatch_rejected() {
        let m = Matrix::zeros(2, 2);
        let mut bytes = save_feature_matrix(&m);
        bytes[8] = 9;
        let err = load_feature_matrix(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = Matrix::zeros(2, 2);
        m.data[3] = f32::NAN;
        let bytes = save_feature_matrix(&m);
        assert!(load_feature_matrix(&bytes).is_err());
    }

    #[test]
    fn large_random_matrix_bit_identical() {
        // Byte-compare oracle on the serialized buffer: encode twice, and the
        // decoded values must be bit-identical to the source.
        use rand::{Rng, RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut m = Matrix::zeros(25, 3840);
        for v in m.data.iter_mut() {
            *v = rng.random::<f32>() * 2.0 - 1.0;
        }
        let bytes = save_feature_matrix(&m);
        assert_eq!(bytes, save_feature_matrix(&m));
        let back = load_feature_matrix(&bytes).unwrap();
        assert_eq!(back.data.len(), m.data.len());
        for (a, b) in back.data.iter().zip(m.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_finite_matrix(rows in 1usize..12, cols in 1usize..12, seed in 0u64..1000) {
            use rand::{Rng, RngExt, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = Matrix::zeros(rows, cols);
            for v in m.data.iter_mut() {
                *v = (rng.random::<f32>() - 0.5) * 1e6;
            }
            let back = load_feature_matrix(&save_feature_matrix(&m)).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
