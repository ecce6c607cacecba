//! Face model files: a JSON header next to a little-endian f64 blob.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::basis::FaceBasis;
use super::params::ModelDims;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    dims: ModelDims,
    sigma_alpha: Vec<f64>,
    sigma_beta: Vec<f64>,
    sigma_delta: Vec<f64>,
    landmark_ids: Vec<usize>,
    triangles: Vec<[u32; 3]>,
    mirror: Vec<usize>,
    expression_pairs: Vec<(usize, usize)>,
    /// Blob file name, relative to the header.
    blob: String,
    /// Order of the column-major arrays in the blob.
    blob_layout: Vec<String>,
}

const FORMAT: &str = "egoface-basis-1";
const LAYOUT: [&str; 5] = [
    "mean_geometry",
    "geometry_basis",
    "mean_reflectance",
    "reflectance_basis",
    "expression_basis",
];

fn blob_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

impl FaceBasis {
    /// Writes `path` (JSON header) and `path` with a `.bin` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob = blob_path(path);
        let header = Header {
            format: FORMAT.into(),
            dims: self.dims,
            sigma_alpha: self.sigma_alpha.clone(),
            sigma_beta: self.sigma_beta.clone(),
            sigma_delta: self.sigma_delta.clone(),
            landmark_ids: self.landmark_ids.clone(),
            triangles: self.triangles.clone(),
            mirror: self.mirror.clone(),
            expression_pairs: self.expression_pairs.clone(),
            blob: blob
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            blob_layout: LAYOUT.iter().map(|s| s.to_string()).collect(),
        };
        let json = serde_json::to_string_pretty(&header)?;
        std::fs::write(path, json).map_err(CoreError::io(path))?;
        let mut bytes = Vec::new();
        for s in [
            self.mean_geometry.as_slice(),
            self.geometry_basis.as_slice(),
            self.mean_reflectance.as_slice(),
            self.reflectance_basis.as_slice(),
            self.expression_basis.as_slice(),
        ] {
            for v in s {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(&blob, bytes).map_err(CoreError::io(&blob))
    }

    pub fn load(path: &Path) -> Result<FaceBasis> {
        let text = std::fs::read_to_string(path).map_err(CoreError::io(path))?;
        let header: Header = serde_json::from_str(&text).map_err(|e| CoreError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let format_err = |message: String| CoreError::Format {
            path: path.to_path_buf(),
            message,
        };
        if header.format != FORMAT {
            return Err(format_err(format!("unsupported format {:?}", header.format)));
        }
        let blob = path.with_file_name(&header.blob);
        let bytes = std::fs::read(&blob).map_err(CoreError::io(&blob))?;
        let d = header.dims;
        let n3 = 3 * d.vertices;
        let sizes = [n3, n3 * d.alpha, n3, n3 * d.beta, n3 * d.delta];
        let total: usize = sizes.iter().sum();
        if bytes.len() != 8 * total {
            return Err(CoreError::Format {
                path: blob,
                message: format!("expected {} bytes, found {}", 8 * total, bytes.len()),
            });
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
        let basis = FaceBasis {
            dims: d,
            mean_geometry: DVector::from_vec(take(sizes[0])),
            geometry_basis: DMatrix::from_vec(n3, d.alpha, take(sizes[1])),
            mean_reflectance: DVector::from_vec(take(sizes[2])),
            reflectance_basis: DMatrix::from_vec(n3, d.beta, take(sizes[3])),
            expression_basis: DMatrix::from_vec(n3, d.delta, take(sizes[4])),
            sigma_alpha: header.sigma_alpha,
            sigma_beta: header.sigma_beta,
            sigma_delta: header.sigma_delta,
            triangles: header.triangles,
            landmark_ids: header.landmark_ids,
            mirror: header.mirror,
            expression_pairs: header.expression_pairs,
        };
        basis.validate().map_err(|e| format_err(e.to_string()))?;
        Ok(basis)
    }
}
