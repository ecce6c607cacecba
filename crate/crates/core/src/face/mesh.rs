use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{CoreError, Result};

pub(crate) fn vertex(positions: &[f64], i: usize) -> Vector3<f64> {
    Vector3::new(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2])
}

/// Unnormalised per-vertex accumulation of `(b - a) x (c - a)` over incident
/// triangles, i.e. twice the area-weighted face normal sum.
pub(crate) fn accumulated_normals(positions: &[f64], triangles: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); positions.len() / 3];
    for t in triangles {
        let [a, b, c] = t.map(|i| i as usize);
        let (pa, pb, pc) = (vertex(positions, a), vertex(positions, b), vertex(positions, c));
        let n = (pb - pa).cross(&(pc - pa));
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    acc
}

/// Area-weighted vertex normals; vertices with a zero accumulation get +z.
pub fn vertex_normals(positions: &[f64], triangles: &[[u32; 3]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len());
    for m in accumulated_normals(positions, triangles) {
        let len = m.norm();
        if len > 0.0 && len.is_finite() {
            out.extend_from_slice((m / len).as_slice());
        } else {
            out.extend_from_slice(&[0.0, 0.0, 1.0]);
        }
    }
    out
}

/// Per-vertex geometry and reflectance; all arrays hold 3 values per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub positions: Vec<f64>,
    pub reflectance: Vec<f64>,
    pub normals: Vec<f64>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn vertex_count(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        vertex(&self.positions, i)
    }

    /// Wavefront OBJ with positions and faces only.
    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(CoreError::io(path))?;
        let mut w = std::io::BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for p in self.positions.chunks_exact(3) {
                writeln!(w, "v {} {} {}", p[0], p[1], p[2])?;
            }
            for t in &self.triangles {
                writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
            w.flush()
        };
        body().map_err(CoreError::io(path))
    }
}

/// A mesh together with its shaded vertex colours.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadedMesh {
    pub mesh: Mesh,
    pub colors: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::euler_matrix;

    #[test]
    fn flat_quad_normals_point_up() {
        let p = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let n = vertex_normals(&p, &[[0, 1, 2], [0, 2, 3]]);
        for v in n.chunks_exact(3) {
            assert_eq!(v, &[0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn isolated_vertex_defaults_to_plus_z() {
        let p = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 5.0, 5.0, 5.0];
        let n = vertex_normals(&p, &[[0, 1, 2]]);
        assert_eq!(&n[9..], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn normals_rotate_with_the_mesh() {
        let p = [0.0, 0.0, 0.3, 1.0, 0.0, 0.0, 1.0, 1.0, 0.2, 0.0, 1.0, -0.1];
        let tris = [[0, 1, 2], [0, 2, 3]];
        let rot = euler_matrix([0.4, -0.3, 1.2]);
        let rotated: Vec<f64> = p
            .chunks_exact(3)
            .flat_map(|v| {
                let r = rot * Vector3::new(v[0], v[1], v[2]);
                [r.x, r.y, r.z]
            })
            .collect();
        let n0 = vertex_normals(&p, &tris);
        let n1 = vertex_normals(&rotated, &tris);
        for i in 0..4 {
            let expect = rot * vertex(&n0, i);
            assert!((expect - vertex(&n1, i)).norm() < 1e-9);
        }
    }
}
