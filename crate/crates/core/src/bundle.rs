//! Matrix bundles: a JSON manifest (`<stem>.json`) next to a raw payload
//! (`<stem>.bin`) of little-endian f64 values in column-major order.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EditError, Result};
use crate::linalg::{ensure_finite, Matrix};

pub const DTYPE: &str = "f64";
pub const LAYOUT: &str = "col-major";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub layout: String,
    pub role: String,
}

impl MatrixManifest {
    /// Manifest describing `matrix` in the only supported encoding.
    pub fn for_matrix(name: impl Into<String>, role: impl Into<String>, matrix: &Matrix) -> Self {
        Self {
            name: name.into(),
            rows: matrix.nrows(),
            cols: matrix.ncols(),
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
            role: role.into(),
        }
    }

    fn check_encoding(&self) -> Result<()> {
        if self.dtype != DTYPE || self.layout != LAYOUT {
            return Err(EditError::DtypeUnsupported(format!("{}/{}", self.dtype, self.layout)));
        }
        Ok(())
    }

    fn payload_len(&self) -> Option<usize> {
        self.rows.checked_mul(self.cols)?.checked_mul(8)
    }
}

/// Manifest and payload paths for a bundle. `path` may be the bare stem or
/// either of the two files.
pub fn bundle_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s: OsString = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".bin"))
}

pub fn encode_payload(matrix: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(matrix.len() * 8);
    // nalgebra storage is already column-major.
    for v in matrix.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_payload(bytes: &[u8], rows: usize, cols: usize) -> Option<Matrix> {
    if Some(bytes.len()) != rows.checked_mul(cols).and_then(|n| n.checked_mul(8)) {
        return None;
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    Some(Matrix::from_iterator(rows, cols, values))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| EditError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| EditError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| EditError::io(path, e))?;
    tmp.persist(path).map_err(|e| EditError::io(path, e.error))?;
    Ok(())
}

/// Writes both files of a bundle, each through a temporary file renamed
/// into place.
pub fn write_bundle(path: &Path, matrix: &Matrix, manifest: &MatrixManifest) -> Result<()> {
    manifest.check_encoding()?;
    if (manifest.rows, manifest.cols) != matrix.shape() {
        return Err(EditError::shape(format!(
            "manifest says {}x{}, matrix is {}x{}",
            manifest.rows,
            manifest.cols,
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    ensure_finite(matrix, "bundle matrix")?;
    let (json_path, bin_path) = bundle_paths(path);
    let header = serde_json::to_vec_pretty(manifest)
        .map_err(|e| EditError::io(&json_path, std::io::Error::other(e)))?;
    write_atomic(&bin_path, &encode_payload(matrix))?;
    write_atomic(&json_path, &header)
}

pub fn read_bundle(path: &Path) -> Result<(MatrixManifest, Matrix)> {
    let (json_path, bin_path) = bundle_paths(path);
    let header = std::fs::read(&json_path).map_err(|e| EditError::io(&json_path, e))?;
    let corrupt = |reason: String| EditError::CorruptHeader {
        path: json_path.clone(),
        reason,
    };
    let manifest: MatrixManifest =
        serde_json::from_slice(&header).map_err(|e| corrupt(format!("unparsable manifest: {e}")))?;
    manifest.check_encoding()?;
    let payload = std::fs::read(&bin_path).map_err(|e| EditError::io(&bin_path, e))?;
    let expected = manifest
        .payload_len()
        .ok_or_else(|| corrupt("declared shape overflows".into()))?;
    let matrix = decode_payload(&payload, manifest.rows, manifest.cols).ok_or_else(|| {
        corrupt(format!(
            "payload has {} bytes, manifest implies {expected}",
            payload.len()
        ))
    })?;
    Ok((manifest, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn one_encodes_to_golden_bytes() {
        assert_eq!(
            encode_payload(&dmatrix![1.0]),
            [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xF0, 0x3F]
        );
    }

    #[test]
    fn payload_is_column_major() {
        let bytes = encode_payload(&dmatrix![1.0, 2.0; 3.0, 4.0]);
        let firsts: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(firsts, [1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("w");
        let m = dmatrix![1.5, -0.0; 3.25e-300, 7.0; f64::MIN_POSITIVE, -2.0];
        let manifest = MatrixManifest::for_matrix("w", "key", &m);
        write_bundle(&stem, &m, &manifest).unwrap();
        let (back_manifest, back) = read_bundle(&stem).unwrap();
        assert_eq!(back_manifest, manifest);
        assert_eq!(encode_payload(&back), encode_payload(&m));

        let (_, bin) = bundle_paths(&stem);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_bundle(&stem), Err(EditError::CorruptHeader { .. })));
    }

    #[test]
    fn foreign_dtype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("h");
        let mut manifest = MatrixManifest::for_matrix("h", "x", &dmatrix![1.0]);
        manifest.dtype = "f16".into();
        let (json, bin) = bundle_paths(&stem);
        std::fs::write(json, serde_json::to_vec(&manifest).unwrap()).unwrap();
        std::fs::write(bin, [0u8; 2]).unwrap();
        assert!(matches!(read_bundle(&stem), Err(EditError::DtypeUnsupported(_))));
    }

    #[test]
    fn stem_accepts_either_file() {
        let (a, b) = bundle_paths(Path::new("out/w.k.json"));
        assert_eq!(a, Path::new("out/w.k.json"));
        assert_eq!(b, Path::new("out/w.k.bin"));
        assert_eq!(bundle_paths(Path::new("x.v")).0, Path::new("x.v.json"));
    }
}
