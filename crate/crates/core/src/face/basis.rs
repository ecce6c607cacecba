use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, CoreError, Result};

use super::mesh::{vertex_normals, Mesh, ShadedMesh};
use super::params::{ModelDims, ParamVector};
use super::shading::shade_vertices;
use super::template::{
    gauss2, landmark_vertices, smooth_field, template_positions, template_reflectance, Grid,
};

pub const LANDMARK_COUNT: usize = 66;
pub const SIGMA_DECAY: f64 = 0.9;
const SIGMA_ALPHA0: f64 = 120.0;
const SIGMA_BETA0: f64 = 2.0;
const SIGMA_DELTA0: f64 = 70.0;

/// Linear face model: mean shapes, unit-norm basis columns and the prior
/// standard deviation of each coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceBasis {
    pub dims: ModelDims,
    /// 3N mean positions in millimetres.
    pub mean_geometry: DVector<f64>,
    /// 3N × |alpha| identity columns.
    pub geometry_basis: DMatrix<f64>,
    /// 3N mean RGB reflectance.
    pub mean_reflectance: DVector<f64>,
    /// 3N × |beta| reflectance columns.
    pub reflectance_basis: DMatrix<f64>,
    /// 3N × |delta| expression columns.
    pub expression_basis: DMatrix<f64>,
    pub sigma_alpha: Vec<f64>,
    pub sigma_beta: Vec<f64>,
    pub sigma_delta: Vec<f64>,
    pub triangles: Vec<[u32; 3]>,
    pub landmark_ids: Vec<usize>,
    /// Vertex index of each vertex's mirror image across x = 0 (empty if the
    /// model has no known symmetry).
    pub mirror: Vec<usize>,
    /// Expression columns that are exact mirror images of each other; the
    /// first index acts on the +x half of the face.
    pub expression_pairs: Vec<(usize, usize)>,
}

fn geometric_sigmas(first: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| first * SIGMA_DECAY.powi(k as i32)).collect()
}

fn axpy(out: &mut DVector<f64>, basis: &DMatrix<f64>, coeffs: &[f64]) {
    for (k, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            out.axpy(c, &basis.column(k), 1.0);
        }
    }
}

/// Modified Gram-Schmidt with one re-orthogonalisation pass, applied in place
/// to the columns of `m` against `prior` columns and each other.
fn orthonormalize(m: &mut DMatrix<f64>, prior: Option<&DMatrix<f64>>) -> Result<()> {
    for j in 0..m.ncols() {
        let mut v = m.column(j).clone_owned();
        let start = v.norm();
        for _ in 0..2 {
            if let Some(p) = prior {
                for q in p.column_iter() {
                    let d = q.dot(&v);
                    v.axpy(-d, &q, 1.0);
                }
            }
            for k in 0..j {
                let q = m.column(k);
                let d = q.dot(&v);
                v.axpy(-d, &q, 1.0);
            }
        }
        let n = v.norm();
        if !(n > 1e-9 * start.max(1e-300)) {
            return Err(CoreError::Dimensions(format!(
                "basis column {j} is linearly dependent on earlier columns"
            )));
        }
        m.set_column(j, &(v / n));
    }
    Ok(())
}

fn random_vector_field(grid: &Grid, rng: &mut ChaCha8Rng, sigma_cells: f64) -> Vec<f64> {
    let n = grid.len();
    let mut out = vec![0.0; 3 * n];
    for axis in 0..3 {
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let smooth = smooth_field(grid, &noise, sigma_cells);
        for i in 0..n {
            out[3 * i + axis] = smooth[i];
        }
    }
    out
}

/// `(M f)_i = S f_{m(i)}` with `S = diag(-1, 1, 1)`.
pub(crate) fn mirror_field(mirror: &[usize], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for (i, &m) in mirror.iter().enumerate() {
        out[3 * i] = -f[3 * m];
        out[3 * i + 1] = f[3 * m + 1];
        out[3 * i + 2] = f[3 * m + 2];
    }
    out
}

fn symmetric_part(mirror: &[usize], f: &[f64]) -> Vec<f64> {
    let m = mirror_field(mirror, f);
    f.iter().zip(&m).map(|(a, b)| (a + b) * 0.5).collect()
}

fn antisymmetric_part(mirror: &[usize], f: &[f64]) -> Vec<f64> {
    let m = mirror_field(mirror, f);
    f.iter().zip(&m).map(|(a, b)| (a - b) * 0.5).collect()
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Regions on the +x half whose one-sided activations form mirrored pairs.
const PAIR_REGIONS: [(f64, f64); 4] = [(28.0, -35.0), (24.0, 45.0), (36.0, 15.0), (28.0, -22.0)];

/// Expression columns: symmetric fields first (jaw drop, smile, then random),
/// followed by left/right mirror pairs of localised activations.
fn expression_fields(
    grid: &Grid,
    positions: &[f64],
    mirror: &[usize],
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, Vec<(usize, usize)>)> {
    let n = grid.len();
    let pairs = dim / 3;
    let sym = dim - 2 * pairs;
    let mut sym_set = DMatrix::zeros(3 * n, sym + pairs);
    for k in 0..sym {
        let raw: Vec<f64> = match k {
            0 => positions
                .chunks_exact(3)
                .flat_map(|p| {
                    let w = smoothstep((p[1] - 20.0) / 45.0) * (p[2] < 0.0) as u8 as f64;
                    [0.0, 10.0 * w, 3.0 * w]
                })
                .collect(),
            1 => positions
                .chunks_exact(3)
                .flat_map(|p| {
                    let w = gauss2(p[0].abs(), p[1], 24.0, 42.0, 12.0, 12.0);
                    [6.0 * p[0].signum() * w * (p[0] != 0.0) as u8 as f64, -4.0 * w, 2.0 * w]
                })
                .collect(),
            _ => random_vector_field(grid, rng, 3.0),
        };
        sym_set.set_column(k, &DVector::from_vec(symmetric_part(mirror, &raw)));
    }
    let mut anti_set = DMatrix::zeros(3 * n, pairs);
    for k in 0..pairs {
        let (cx, cy) = PAIR_REGIONS[k % PAIR_REGIONS.len()];
        let field = random_vector_field(grid, rng, 2.0);
        let raw: Vec<f64> = (0..n)
            .flat_map(|i| {
                let p = &positions[3 * i..3 * i + 3];
                let w = gauss2(p[0], p[1], cx, cy, 22.0, 22.0);
                [0, 1, 2].map(|a| 8.0 * w * field[3 * i + a])
            })
            .collect();
        sym_set.set_column(sym + k, &DVector::from_vec(symmetric_part(mirror, &raw)));
        anti_set.set_column(k, &DVector::from_vec(antisymmetric_part(mirror, &raw)));
    }
    orthonormalize(&mut sym_set, None)?;
    orthonormalize(&mut anti_set, None)?;

    let mut out = DMatrix::zeros(3 * n, dim);
    for k in 0..sym {
        out.set_column(k, &sym_set.column(k));
    }
    let mut pair_ids = Vec::with_capacity(pairs);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..pairs {
        let s = sym_set.column(sym + k);
        let a = anti_set.column(k);
        let (l, r) = (sym + 2 * k, sym + 2 * k + 1);
        out.set_column(l, &((s + a) * inv_sqrt2));
        out.set_column(r, &((s - a) * inv_sqrt2));
        pair_ids.push((l, r));
    }
    Ok((out, pair_ids))
}

/// Generates a deterministic synthetic face model.
pub fn synth_basis(
    vertex_count: usize,
    dim_alpha: usize,
    dim_beta: usize,
    dim_delta: usize,
    seed: u64,
) -> Result<FaceBasis> {
    let dims = ModelDims {
        vertices: vertex_count,
        alpha: dim_alpha,
        beta: dim_beta,
        delta: dim_delta,
    };
    dims.validate()?;
    let grid = Grid::for_vertex_count(vertex_count)?;
    if 3 * vertex_count < dim_alpha.max(dim_beta).max(dim_delta) {
        return Err(CoreError::Dimensions(
            "more basis columns than degrees of freedom".into(),
        ));
    }
    // Filter widths are defined on the 25-column desk grid and scale with it.
    let cell_scale = grid.cols as f64 / 25.0;
    let positions = template_positions(&grid);
    let mirror: Vec<usize> = (0..grid.len()).map(|i| grid.mirror(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut geometry_basis = DMatrix::zeros(3 * vertex_count, dim_alpha);
    for k in 0..dim_alpha {
        let f = random_vector_field(&grid, &mut rng, 3.0 * cell_scale);
        geometry_basis.set_column(k, &DVector::from_vec(f));
    }
    orthonormalize(&mut geometry_basis, None)?;

    let mut reflectance_basis = DMatrix::zeros(3 * vertex_count, dim_beta);
    for k in 0..dim_beta {
        let f = random_vector_field(&grid, &mut rng, 2.5 * cell_scale);
        reflectance_basis.set_column(k, &DVector::from_vec(f));
    }
    orthonormalize(&mut reflectance_basis, None)?;

    let (expression_basis, expression_pairs) =
        expression_fields(&grid, &positions, &mirror, dim_delta, &mut rng)?;

    Ok(FaceBasis {
        dims,
        mean_reflectance: DVector::from_vec(template_reflectance(&positions)),
        landmark_ids: landmark_vertices(&positions),
        mean_geometry: DVector::from_vec(positions),
        geometry_basis,
        reflectance_basis,
        expression_basis,
        sigma_alpha: geometric_sigmas(SIGMA_ALPHA0, dim_alpha),
        sigma_beta: geometric_sigmas(SIGMA_BETA0, dim_beta),
        sigma_delta: geometric_sigmas(SIGMA_DELTA0, dim_delta),
        triangles: grid.triangles(),
        mirror,
        expression_pairs,
    })
}

impl FaceBasis {
    pub fn vertex_count(&self) -> usize {
        self.dims.vertices
    }

    /// `a_geo + B_geo alpha + B_exp delta`.
    pub fn assemble_geometry(&self, alpha: &[f64], delta: &[f64]) -> Result<Vec<f64>> {
        check_len("alpha", self.dims.alpha, alpha.len())?;
        check_len("delta", self.dims.delta, delta.len())?;
        let mut v = self.mean_geometry.clone();
        axpy(&mut v, &self.geometry_basis, alpha);
        axpy(&mut v, &self.expression_basis, delta);
        Ok(v.data.into())
    }

    /// `a_ref + B_ref beta`.
    pub fn assemble_reflectance(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len("beta", self.dims.beta, beta.len())?;
        let mut r = self.mean_reflectance.clone();
        axpy(&mut r, &self.reflectance_basis, beta);
        Ok(r.data.into())
    }

    /// Model-frame mesh (pose is applied by the cameras, not here).
    pub fn mesh(&self, params: &ParamVector) -> Result<Mesh> {
        params.dims_match(&self.dims)?;
        let positions = self.assemble_geometry(&params.alpha, &params.delta)?;
        let normals = vertex_normals(&positions, &self.triangles);
        Ok(Mesh {
            reflectance: self.assemble_reflectance(&params.beta)?,
            positions,
            normals,
            triangles: self.triangles.clone(),
        })
    }

    /// Mesh shaded under `params.gamma`, lit in the model frame.
    pub fn shaded_mesh(&self, params: &ParamVector) -> Result<ShadedMesh> {
        let mesh = self.mesh(params)?;
        let colors = shade_vertices(&mesh.reflectance, &mesh.normals, &params.gamma)?;
        Ok(ShadedMesh { mesh, colors })
    }

    /// Swaps each mirrored expression pair; symmetric columns are unchanged.
    pub fn mirror_expression(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = delta.to_vec();
        for &(l, r) in &self.expression_pairs {
            out.swap(l, r);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let n3 = 3 * self.dims.vertices;
        check_len("mean geometry", n3, self.mean_geometry.len())?;
        check_len("mean reflectance", n3, self.mean_reflectance.len())?;
        for (what, m, cols) in [
            ("geometry basis", &self.geometry_basis, self.dims.alpha),
            ("reflectance basis", &self.reflectance_basis, self.dims.beta),
            ("expression basis", &self.expression_basis, self.dims.delta),
        ] {
            check_len(what, n3, m.nrows())?;
            check_len(what, cols, m.ncols())?;
            for (k, c) in m.column_iter().enumerate() {
                if (c.norm() - 1.0).abs() > 1e-6 {
                    return Err(CoreError::Dimensions(format!(
                        "{what} column {k} is not unit norm"
                    )));
                }
            }
        }
        check_len("sigma_alpha", self.dims.alpha, self.sigma_alpha.len())?;
        check_len("sigma_beta", self.dims.beta, self.sigma_beta.len())?;
        check_len("sigma_delta", self.dims.delta, self.sigma_delta.len())?;
        let sigmas = self.sigma_alpha.iter().chain(&self.sigma_beta).chain(&self.sigma_delta);
        if sigmas.clone().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CoreError::Dimensions("prior sigmas must be positive".into()));
        }
        check_len("landmark ids", LANDMARK_COUNT, self.landmark_ids.len())?;
        let n = self.dims.vertices;
        if self.landmark_ids.iter().any(|&i| i >= n)
            || self.triangles.iter().flatten().any(|&i| i as usize >= n)
            || self.mirror.iter().any(|&i| i >= n)
        {
            return Err(CoreError::Dimensions("vertex index out of range".into()));
        }
        if !self.mirror.is_empty() {
            check_len("mirror map", n, self.mirror.len())?;
        }
        if self
            .expression_pairs
            .iter()
            .any(|&(l, r)| l >= self.dims.delta || r >= self.dims.delta)
        {
            return Err(CoreError::Dimensions("expression pair out of range".into()));
        }
        Ok(())
    }
}
