//! Second-order real spherical harmonics and Lambertian vertex shading.

use nalgebra::Vector3;

use crate::error::{check_len, CoreError, Result};

use super::params::GAMMA_LEN;

/// Band-0 constant `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: f64 = 1.092_548_430_592_079_2;
const SH_C3: f64 = 0.315_391_565_252_520_05;
const SH_C4: f64 = 0.546_274_215_296_039_6;

const UNIT_TOLERANCE: f64 = 1e-3;

/// The nine real SH basis functions evaluated at a unit direction.
pub fn sh_basis(n: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C4 * (x * x - y * y),
    ]
}

/// Gradient of each basis function with respect to the direction components.
pub fn sh_basis_gradient(n: &Vector3<f64>) -> [Vector3<f64>; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        Vector3::zeros(),
        Vector3::new(0.0, SH_C1, 0.0),
        Vector3::new(0.0, 0.0, SH_C1),
        Vector3::new(SH_C1, 0.0, 0.0),
        Vector3::new(SH_C2 * y, SH_C2 * x, 0.0),
        Vector3::new(0.0, SH_C2 * z, SH_C2 * y),
        Vector3::new(0.0, 0.0, 6.0 * SH_C3 * z),
        Vector3::new(SH_C2 * z, 0.0, SH_C2 * x),
        Vector3::new(2.0 * SH_C4 * x, -2.0 * SH_C4 * y, 0.0),
    ]
}

/// Irradiance per channel: `sum_b gamma[9c + b] * Y_b(n)`.
pub fn irradiance(n: &Vector3<f64>, gamma: &[f64]) -> [f64; 3] {
    let y = sh_basis(n);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (0..9).map(|b| gamma[9 * c + b] * y[b]).sum();
    }
    out
}

/// Diffuse colours `c_i = r_i * irradiance(n_i)`, per channel.
pub fn shade_vertices(reflectance: &[f64], normals: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    check_len("gamma", GAMMA_LEN, gamma.len())?;
    check_len("normals", reflectance.len(), normals.len())?;
    if reflectance.len() % 3 != 0 {
        return Err(CoreError::Dimensions(
            "per-vertex arrays must hold 3 values per vertex".into(),
        ));
    }
    let mut colors = vec![0.0; reflectance.len()];
    for (i, (n, out)) in normals.chunks_exact(3).zip(colors.chunks_exact_mut(3)).enumerate() {
        let n = Vector3::new(n[0], n[1], n[2]);
        let length = n.norm();
        if (length - 1.0).abs() > UNIT_TOLERANCE {
            return Err(CoreError::NonUnitNormal { index: i, length });
        }
        let e = irradiance(&n, gamma);
        for c in 0..3 {
            out[c] = reflectance[3 * i + c] * e[c];
        }
    }
    Ok(colors)
}

/// Soft frontal key light plus ambient, used as the default illumination.
pub fn default_gamma() -> Vec<f64> {
    lighting(Vector3::new(0.3, -0.5, -0.8), [1.0, 1.0, 1.0], 0.65, 0.3)
}

/// Builds SH coefficients for an ambient term plus one directional lobe
/// arriving from `toward_light` (model frame), tinted per channel.
pub fn lighting(toward_light: Vector3<f64>, tint: [f64; 3], ambient: f64, key: f64) -> Vec<f64> {
    let d = toward_light.normalize();
    let mut gamma = vec![0.0; GAMMA_LEN];
    for c in 0..3 {
        let g = &mut gamma[9 * c..9 * c + 9];
        g[0] = tint[c] * ambient / SH_C0;
        g[1] = tint[c] * key * d.y / SH_C1;
        g[2] = tint[c] * key * d.z / SH_C1;
        g[3] = tint[c] * key * d.x / SH_C1;
        // A little second-order energy so the band-2 terms are exercised.
        g[6] = tint[c] * 0.04 * (3.0 * d.z * d.z - 1.0);
        g[8] = tint[c] * 0.03 * (d.x * d.x - d.y * d.y);
    }
    gamma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_band_gives_exact_white() {
        let mut gamma = vec![0.0; GAMMA_LEN];
        for c in 0..3 {
            gamma[9 * c] = 1.0 / 0.2820948;
        }
        let normals = [0.0, 0.0, 1.0, 0.6, 0.8, 0.0];
        let colors = shade_vertices(&[1.0; 6], &normals, &gamma).unwrap();
        for c in colors {
            assert!((c - 1.0).abs() < 1e-6);
        }
        let mut exact = vec![0.0; GAMMA_LEN];
        for c in 0..3 {
            exact[9 * c] = 1.0 / SH_C0;
        }
        let colors = shade_vertices(&[1.0; 6], &normals, &exact).unwrap();
        assert!(colors.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn rejects_non_unit_normals() {
        let err = shade_vertices(&[1.0; 3], &[0.0, 0.0, 1.1], &default_gamma()).unwrap_err();
        assert!(matches!(err, CoreError::NonUnitNormal { index: 0, .. }));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = Vector3::new(0.3, -0.4, 0.7);
        let g = sh_basis_gradient(&n);
        for axis in 0..3 {
            let mut hi = n;
            let mut lo = n;
            hi[axis] += 1e-6;
            lo[axis] -= 1e-6;
            let (yh, yl) = (sh_basis(&hi), sh_basis(&lo));
            for b in 0..9 {
                let fd = (yh[b] - yl[b]) / 2e-6;
                assert!((fd - g[b][axis]).abs() < 1e-8);
            }
        }
    }
}
