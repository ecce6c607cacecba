//! Procedural head template: a half-ellipsoid grid with nose, eye, brow,
//! lip and chin relief, a symmetric triangulation and 66 landmark vertices.

use crate::error::{CoreError, Result};

const SEMI_X: f64 = 78.0;
const SEMI_Y: f64 = 96.0;
const SEMI_Z: f64 = 70.0;
const AZIMUTH_SPAN: f64 = 1.35;
const ELEVATION_SPAN: f64 = 1.2;

/// Vertex grid of `rows × cols`; `cols` is odd so the centre column lies on
/// the symmetry plane x = 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    /// Picks the factorisation `rows × cols == n` with odd `cols` whose
    /// aspect ratio is closest to square.
    pub fn for_vertex_count(n: usize) -> Result<Grid> {
        let mut best: Option<(f64, Grid)> = None;
        for cols in (5..=n / 5).step_by(2) {
            if n % cols != 0 {
                continue;
            }
            let rows = n / cols;
            let ratio = rows as f64 / cols as f64;
            if rows < 5 || !(0.5..=2.0).contains(&ratio) {
                continue;
            }
            let score = ratio.ln().abs();
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, Grid { rows, cols }));
            }
        }
        best.map(|(_, g)| g).ok_or_else(|| {
            CoreError::Dimensions(format!(
                "vertex count {n} has no rows × cols factorisation with odd cols ≥ 5 and aspect in [0.5, 2]"
            ))
        })
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    /// Index of the vertex mirrored across x = 0.
    pub fn mirror(&self, i: usize) -> usize {
        let (r, c) = (i / self.cols, i % self.cols);
        self.index(r, self.cols - 1 - c)
    }

    /// Two triangles per cell, with the diagonal flipped on the right half so
    /// that the mirror image of the triangulation is itself.
    pub fn triangles(&self) -> Vec<[u32; 3]> {
        let mut tris = Vec::with_capacity(2 * (self.rows - 1) * (self.cols - 1));
        let half = (self.cols - 1) / 2;
        for r in 0..self.rows - 1 {
            for c in 0..self.cols - 1 {
                let a = self.index(r, c) as u32;
                let b = self.index(r, c + 1) as u32;
                let d = self.index(r + 1, c) as u32;
                let e = self.index(r + 1, c + 1) as u32;
                if c < half {
                    tris.push([a, e, b]);
                    tris.push([a, d, e]);
                } else {
                    tris.push([a, d, b]);
                    tris.push([b, d, e]);
                }
            }
        }
        tris
    }
}

pub(crate) fn gauss2(x: f64, y: f64, cx: f64, cy: f64, sx: f64, sy: f64) -> f64 {
    let dx = (x - cx) / sx;
    let dy = (y - cy) / sy;
    (-0.5 * (dx * dx + dy * dy)).exp()
}

/// Template positions in model coordinates: x right, y down, the face looks
/// toward −z.
pub(crate) fn template_positions(grid: &Grid) -> Vec<f64> {
    let half = (grid.cols - 1) / 2;
    let mut pos = vec![0.0; 3 * grid.len()];
    for r in 0..grid.rows {
        let v = -1.0 + 2.0 * r as f64 / (grid.rows - 1) as f64;
        let psi = v * ELEVATION_SPAN;
        for c in 0..=half {
            let u = if c == half {
                0.0
            } else {
                -1.0 + 2.0 * c as f64 / (grid.cols - 1) as f64
            };
            let phi = u * AZIMUTH_SPAN;
            let x = SEMI_X * phi.sin() * psi.cos();
            let y = SEMI_Y * psi.sin();
            let front = phi.cos() * psi.cos();
            let mut z = -SEMI_Z * front;
            let ax = x.abs();
            let relief = -24.0 * gauss2(x, y, 0.0, 8.0, 9.0, 20.0)
                + 7.0 * gauss2(ax, y, 30.0, -22.0, 12.0, 8.0)
                - 4.0 * gauss2(ax, y, 30.0, -38.0, 15.0, 5.0)
                - 5.0 * gauss2(x, y, 0.0, 45.0, 18.0, 6.0)
                - 5.0 * gauss2(x, y, 0.0, 75.0, 16.0, 10.0)
                - 4.0 * gauss2(ax, y, 38.0, 18.0, 14.0, 14.0);
            z += relief * front.max(0.0);
            let i = grid.index(r, c);
            pos[3 * i..3 * i + 3].copy_from_slice(&[x, y, z]);
            let m = grid.mirror(i);
            pos[3 * m..3 * m + 3].copy_from_slice(&[-x, y, z]);
        }
    }
    pos
}

fn blend(base: [f64; 3], feature: [f64; 3], w: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| base[k] * (1.0 - w) + feature[k] * w)
}

/// Skin tone with lips, brows, eye whites and pupils; mirror symmetric.
pub(crate) fn template_reflectance(positions: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len());
    for p in positions.chunks_exact(3) {
        let (x, y) = (p[0], p[1]);
        let ax = x.abs();
        let shade = 0.04 * (y / SEMI_Y);
        let mut c = [0.80 - shade, 0.60 - shade, 0.50 - shade];
        c = blend(c, [0.72, 0.36, 0.36], gauss2(x, y, 0.0, 45.0, 16.0, 6.0));
        c = blend(c, [0.35, 0.25, 0.20], gauss2(ax, y, 30.0, -38.0, 14.0, 3.5));
        c = blend(c, [0.92, 0.90, 0.88], gauss2(ax, y, 30.0, -22.0, 9.0, 4.0));
        c = blend(c, [0.15, 0.10, 0.08], gauss2(ax, y, 30.0, -22.0, 3.5, 3.5));
        out.extend_from_slice(&c);
    }
    out
}

/// Canonical 2D landmark layout (mm, model x/y): jaw 17, brows 10, nose 9,
/// eyes 12, outer lips 12, inner lips 6.
fn canonical_landmarks() -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(66);
    for t in 0..17 {
        let s = PI * t as f64 / 16.0;
        pts.push((-62.0 * s.cos(), -10.0 + 84.0 * s.sin()));
    }
    for side in [-1.0, 1.0] {
        for k in 0..5 {
            let f = k as f64 / 4.0;
            let x = side * (50.0 - 36.0 * f);
            let bump = 4.0 * (PI * f).sin();
            pts.push((x, -38.0 - bump));
        }
    }
    for y in [-22.0, -10.0, 2.0, 14.0] {
        pts.push((0.0, y));
    }
    for (x, y) in [(-12.0, 24.0), (-6.0, 27.0), (0.0, 28.0), (6.0, 27.0), (12.0, 24.0)] {
        pts.push((x, y));
    }
    for side in [-1.0, 1.0] {
        for k in 0..6 {
            let a = PI * k as f64 / 3.0;
            pts.push((side * 30.0 + 11.0 * a.cos(), -22.0 + 4.0 * a.sin()));
        }
    }
    for k in 0..12 {
        let a = PI * k as f64 / 6.0;
        pts.push((24.0 * a.cos(), 45.0 + 9.0 * a.sin()));
    }
    for deg in [60.0f64, 90.0, 120.0, 240.0, 270.0, 300.0] {
        let a = deg.to_radians();
        pts.push((14.0 * a.cos(), 45.0 + 3.0 * a.sin()));
    }
    pts
}

/// Nearest not-yet-used front-facing vertex for each canonical landmark.
pub(crate) fn landmark_vertices(positions: &[f64]) -> Vec<usize> {
    let mut used = vec![false; positions.len() / 3];
    let mut ids = Vec::with_capacity(66);
    for (lx, ly) in canonical_landmarks() {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in positions.chunks_exact(3).enumerate() {
            if used[i] || p[2] >= 0.0 {
                continue;
            }
            let d = (p[0] - lx).powi(2) + (p[1] - ly).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        used[best.1] = true;
        ids.push(best.1);
    }
    ids
}

/// Separable Gaussian filter of a per-vertex scalar field over the grid, with
/// clamped borders. `sigma` is in grid cells.
pub(crate) fn smooth_field(grid: &Grid, field: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    let off = j as isize - radius;
                    let (rr, cc) = if along_rows {
                        (r as isize, c as isize + off)
                    } else {
                        (r as isize + off, c as isize)
                    };
                    let rr = rr.clamp(0, grid.rows as isize - 1) as usize;
                    let cc = cc.clamp(0, grid.cols as isize - 1) as usize;
                    acc += w * src[grid.index(rr, cc)];
                    wsum += w;
                }
                dst[grid.index(r, c)] = acc / wsum;
            }
        }
        dst
    };
    pass(&pass(field, true), false)
}
