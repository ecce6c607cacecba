//! Z-buffered triangle rasterization with perspective-correct colour
//! interpolation. Pixel `(x, y)` is sampled at its centre `(x + 0.5, y + 0.5)`.

use super::image::Image;

pub const NO_TRIANGLE: u32 = u32::MAX;

/// A vertex in screen space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    /// Positive camera-space depth; used for the depth test and for
    /// perspective-correct weights.
    pub depth: f64,
    pub valid: bool,
}

/// Output of a rasterization pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub image: Image,
    /// Per-pixel depth, `f64::INFINITY` where nothing was drawn.
    pub depth: Vec<f64>,
    /// Per-pixel triangle index, [`NO_TRIANGLE`] where nothing was drawn.
    pub triangle: Vec<u32>,
}

impl Raster {
    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.triangle[y * self.image.width() + x] != NO_TRIANGLE
    }

    pub fn coverage(&self) -> f64 {
        let n = self.triangle.iter().filter(|&&t| t != NO_TRIANGLE).count();
        n as f64 / self.triangle.len() as f64
    }
}

fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Whether an edge owns pixel centres lying exactly on it. Two triangles
/// sharing an edge traverse it in opposite directions, so exactly one owns it.
fn owns_edge(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let (dx, dy) = (bx - ax, by - ay);
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

/// Draws `triangles` in index order. A fragment replaces the stored one only
/// if it is strictly nearer, so the lower triangle index wins exact ties.
pub fn rasterize(
    width: usize,
    height: usize,
    vertices: &[ScreenVertex],
    colors: &[f64],
    triangles: &[[u32; 3]],
    background: [f64; 3],
) -> Raster {
    let mut image = Image::filled(width, height, background);
    let mut depth = vec![f64::INFINITY; width * height];
    let mut tri_buf = vec![NO_TRIANGLE; width * height];

    for (t, tri) in triangles.iter().enumerate() {
        let mut idx = tri.map(|i| i as usize);
        if idx.iter().any(|&i| !vertices[i].valid) {
            continue;
        }
        let area0 = {
            let [a, b, c] = idx.map(|i| vertices[i]);
            edge(a.x, a.y, b.x, b.y, c.x, c.y)
        };
        if !(area0.abs() > 0.0) || !area0.is_finite() {
            continue;
        }
        if area0 < 0.0 {
            idx.swap(1, 2);
        }
        let [v0, v1, v2] = idx.map(|i| vertices[i]);
        let area = edge(v0.x, v0.y, v1.x, v1.y, v2.x, v2.y);

        let min_x = v0.x.min(v1.x).min(v2.x);
        let max_x = v0.x.max(v1.x).max(v2.x);
        let min_y = v0.y.min(v1.y).min(v2.y);
        let max_y = v0.y.max(v1.y).max(v2.y);
        if max_x < 0.0 || max_y < 0.0 || min_x > width as f64 || min_y > height as f64 {
            continue;
        }
        let x_lo = (min_x - 0.5).ceil().max(0.0) as usize;
        let y_lo = (min_y - 0.5).ceil().max(0.0) as usize;
        let x_hi = ((max_x - 0.5).floor().min(width as f64 - 1.0)).max(-1.0);
        let y_hi = ((max_y - 0.5).floor().min(height as f64 - 1.0)).max(-1.0);
        if x_hi < 0.0 || y_hi < 0.0 {
            continue;
        }
        let (x_hi, y_hi) = (x_hi as usize, y_hi as usize);

        let own = [
            owns_edge(v1.x, v1.y, v2.x, v2.y),
            owns_edge(v2.x, v2.y, v0.x, v0.y),
            owns_edge(v0.x, v0.y, v1.x, v1.y),
        ];
        let inv_d = [1.0 / v0.depth, 1.0 / v1.depth, 1.0 / v2.depth];
        let col = idx.map(|i| [colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]]);

        for py in y_lo..=y_hi {
            let sy = py as f64 + 0.5;
            for px in x_lo..=x_hi {
                let sx = px as f64 + 0.5;
                let w = [
                    edge(v1.x, v1.y, v2.x, v2.y, sx, sy),
                    edge(v2.x, v2.y, v0.x, v0.y, sx, sy),
                    edge(v0.x, v0.y, v1.x, v1.y, sx, sy),
                ];
                if (0..3).any(|k| w[k] < 0.0 || (w[k] == 0.0 && !own[k])) {
                    continue;
                }
                // Screen-space barycentrics, then perspective correction.
                let pw = [0, 1, 2].map(|k| w[k] / area * inv_d[k]);
                let sum = pw[0] + pw[1] + pw[2];
                let z = 1.0 / sum;
                let pix = py * width + px;
                if !(z < depth[pix]) {
                    continue;
                }
                depth[pix] = z;
                tri_buf[pix] = t as u32;
                let mut rgb = [0.0; 3];
                for (c, out) in rgb.iter_mut().enumerate() {
                    *out = (pw[0] * col[0][c] + pw[1] * col[1][c] + pw[2] * col[2][c]) / sum;
                }
                image.set(px, py, rgb);
            }
        }
    }
    Raster {
        image,
        depth,
        triangle: tri_buf,
    }
}
