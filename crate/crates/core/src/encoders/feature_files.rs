//! Feature-file adapter: per-frame feature records on disk.
//!
//! Each record is a binary tensor payload (`<key>.bin`, row-major
//! little-endian) plus a JSON sidecar (`<key>.json`) carrying shape, dtype,
//! patch size, and the producing encoder's id. This is the seam through
//! which externally computed backbone features (real pretrained models)
//! enter the pipeline.

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSidecar {
    /// `[grid, grid, dim]`.
    pub shape: [usize; 3],
    pub dtype: String,
    pub patch_size: usize,
    pub encoder_id: String,
}

pub fn write_feature_record<S: Scalar>(
    dir: &Path,
    key: &str,
    feat: &FeatureMap<S>,
    encoder_id: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let sidecar = FeatureSidecar {
        shape: [feat.grid, feat.grid, feat.width()],
        dtype: S::DTYPE.to_string(),
        patch_size: feat.patch_size,
        encoder_id: encoder_id.to_string(),
    };
    fs::write(
        dir.join(format!("{key}.json")),
        serde_json::to_vec_pretty(&sidecar)?,
    )?;
    let mut bytes = Vec::with_capacity(feat.tokens.len() * S::WIDTH);
    for &v in feat.tokens.iter() {
        v.write_le(&mut bytes);
    }
    fs::write(dir.join(format!("{key}.bin")), bytes)?;
    Ok(())
}

pub fn read_feature_record<S: Scalar>(dir: &Path, key: &str) -> Result<(FeatureMap<S>, String)> {
    let json_path = dir.join(format!("{key}.json"));
    if !json_path.exists() {
        return Err(Error::MissingArtifact(json_path.display().to_string()));
    }
    let sidecar: FeatureSidecar = serde_json::from_slice(&fs::read(&json_path)?)?;
    let [g0, g1, dim] = sidecar.shape;
    if g0 != g1 {
        return Err(Error::Corrupt("feature grid must be square".into()));
    }
    let bytes = fs::read(dir.join(format!("{key}.bin")))?;
    let n = g0 * g1;
    let width = match sidecar.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Corrupt(format!("unknown dtype {other}"))),
    };
    if bytes.len() != n * dim * width {
        return Err(Error::Corrupt(format!(
            "feature payload is {} bytes, expected {}",
            bytes.len(),
            n * dim * width
        )));
    }
    let mut tokens = Array2::zeros((n, dim));
    for i in 0..n {
        for j in 0..dim {
            let off = (i * dim + j) * width;
            let v = match sidecar.dtype.as_str() {
                "f32" => f32::from_le_bytes([
                    bytes[off],
                    bytes[off + 1],
                    bytes[off + 2],
                    bytes[off + 3],
                ]) as f64,
                _ => f64::from_le_bytes([
                    bytes[off],
                    bytes[off + 1],
                    bytes[off + 2],
                    bytes[off + 3],
                    bytes[off + 4],
                    bytes[off + 5],
                    bytes[off + 6],
                    bytes[off + 7],
                ]),
            };
            tokens[(i, j)] = s::<S>(v);
        }
    }
    Ok((
        FeatureMap::new(tokens, g0, sidecar.patch_size)?,
        sidecar.encoder_id,
    ))
}

/// A directory of per-frame feature records keyed by stem name.
#[derive(Debug, Clone)]
pub struct FeatureDir {
    pub dir: PathBuf,
}

impl FeatureDir {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::MissingArtifact(dir.display().to_string()));
        }
        Ok(FeatureDir { dir })
    }

    pub fn get<S: Scalar>(&self, key: &str) -> Result<(FeatureMap<S>, String)> {
        read_feature_record(&self.dir, key)
    }

    pub fn keys(&self) -> Result<Vec<String>> {
        let mut keys: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                if p.extension().is_some_and(|x| x == "json") {
                    p.file_stem().map(|stem| stem.to_string_lossy().into_owned())
                } else {
                    None
                }
            })
            .collect();
        keys.sort();
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_features() {
        let dir = tempfile::tempdir().unwrap();
        let tokens = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f32 * 0.5);
        let feat = FeatureMap::new(tokens, 2, 8).unwrap();
        write_feature_record(dir.path(), "frame0", &feat, "external-vit").unwrap();
        let (loaded, id): (FeatureMap<f32>, _) =
            read_feature_record(dir.path(), "frame0").unwrap();
        assert_eq!(loaded.tokens, feat.tokens);
        assert_eq!(loaded.patch_size, 8);
        assert_eq!(id, "external-vit");
        let fd = FeatureDir::open(dir.path()).unwrap();
        assert_eq!(fd.keys().unwrap(), vec!["frame0".to_string()]);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let feat = FeatureMap::new(Array2::<f32>::zeros((4, 3)), 2, 8).unwrap();
        write_feature_record(dir.path(), "x", &feat, "e").unwrap();
        let bin = dir.path().join("x.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            read_feature_record::<f32>(dir.path(), "x"),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn missing_record_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_feature_record::<f32>(dir.path(), "nope"),
            Err(Error::MissingArtifact(_))
        ));
    }
}
