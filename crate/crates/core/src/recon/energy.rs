//! Stacked residuals `photo | landmark | prior` and their analytic Jacobian.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::camera::PerspectiveCamera;
use crate::error::{check_len, CoreError, Result};
use crate::face::{
    accumulated_normals, irradiance, sh_basis, sh_basis_gradient, FaceBasis, ParamVector,
    LANDMARK_COUNT,
};
use crate::render::{rasterize, Image, LandmarkSet, ScreenVertex, NO_TRIANGLE};
use crate::rotation::{euler_matrix, euler_partials};

use super::config::{free_slots, EnergyConfig, FreeSet, Slot};

/// Depth disagreement (mm) beyond which a vertex counts as occluded.
const OCCLUSION_TOLERANCE: f64 = 1.0;
/// Minimum cosine between the normal and the direction to the camera; more
/// oblique vertices sit on steep image gradients near the silhouette.
const MIN_FACING: f64 = 0.25;

/// Residual blocks; squared sums give the per-term energies.
#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    pub photo: Vec<f64>,
    pub landmark: Vec<f64>,
    pub prior: Vec<f64>,
}

impl Residuals {
    pub fn photo_energy(&self) -> f64 {
        self.photo.iter().map(|r| r * r).sum()
    }

    pub fn landmark_energy(&self) -> f64 {
        self.landmark.iter().map(|r| r * r).sum()
    }

    pub fn prior_energy(&self) -> f64 {
        self.prior.iter().map(|r| r * r).sum()
    }

    pub fn total(&self) -> f64 {
        self.photo_energy() + self.landmark_energy() + self.prior_energy()
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.photo.len() + self.landmark.len() + self.prior.len());
        v.extend_from_slice(&self.photo);
        v.extend_from_slice(&self.landmark);
        v.extend_from_slice(&self.prior);
        v
    }
}

/// Observed data for one pyramid level. Landmarks are always compared in
/// full-resolution pixels through `landmark_cam`.
pub(crate) struct Observation<'a> {
    pub image: &'a Image,
    pub cam: PerspectiveCamera,
    pub landmarks: &'a LandmarkSet,
    pub landmark_cam: PerspectiveCamera,
}

/// Model quantities shared by residual and Jacobian evaluation.
struct ModelState {
    positions: Vec<f64>,
    reflectance: Vec<f64>,
    /// Unnormalised normal accumulations.
    normal_acc: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    rot: Matrix3<f64>,
    cam_points: Vec<Vector3<f64>>,
}

impl ModelState {
    fn new(basis: &FaceBasis, params: &ParamVector) -> Result<Self> {
        params.dims_match(&basis.dims)?;
        let positions = basis.assemble_geometry(&params.alpha, &params.delta)?;
        let reflectance = basis.assemble_reflectance(&params.beta)?;
        let normal_acc = accumulated_normals(&positions, &basis.triangles);
        let normals = normal_acc
            .iter()
            .map(|m| {
                let n = m.norm();
                if n > 0.0 && n.is_finite() {
                    m / n
                } else {
                    Vector3::z()
                }
            })
            .collect();
        let rot = euler_matrix(params.rotation);
        let t = Vector3::from(params.translation);
        let cam_points = positions
            .chunks_exact(3)
            .map(|p| rot * Vector3::new(p[0], p[1], p[2]) + t)
            .collect();
        Ok(ModelState {
            positions,
            reflectance,
            normal_acc,
            normals,
            rot,
            cam_points,
        })
    }

    fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.positions[3 * i], self.positions[3 * i + 1], self.positions[3 * i + 2])
    }
}

/// Vertices usable by the photo term under `params`: in front of the camera,
/// facing it, not occluded, with a colour the renderer does not clip, and
/// with every bilinear tap on pixels covered by the model (which excludes the
/// silhouette, where the image mixes in background).
pub fn photo_vertices(basis: &FaceBasis, params: &ParamVector, cam: &PerspectiveCamera) -> Result<Vec<usize>> {
    let state = ModelState::new(basis, params)?;
    let verts: Vec<ScreenVertex> = state
        .cam_points
        .iter()
        .map(|p| {
            let q = cam.project_camera_point(p);
            ScreenVertex {
                x: q.u,
                y: q.v,
                depth: q.depth,
                valid: q.valid,
            }
        })
        .collect();
    let zeros = vec![0.0; state.positions.len()];
    let raster = rasterize(cam.width, cam.height, &verts, &zeros, &basis.triangles, [0.0; 3]);
    let (w, h) = (cam.width as isize, cam.height as isize);
    let mut out = Vec::new();
    for (i, q) in verts.iter().enumerate() {
        if !q.valid {
            continue;
        }
        let p = state.cam_points[i];
        if -(state.rot * state.normals[i]).dot(&p) < MIN_FACING * p.norm() {
            continue;
        }
        let e = irradiance(&state.normals[i], &params.gamma);
        if (0..3).any(|c| {
            let color = state.reflectance[3 * i + c] * e[c];
            !(color > 0.0 && color < 1.0)
        }) {
            continue;
        }
        let x0 = (q.x - 0.5).floor() as isize;
        let y0 = (q.y - 0.5).floor() as isize;
        if x0 < 0 || y0 < 0 || x0 + 1 >= w || y0 + 1 >= h {
            continue;
        }
        let taps = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
        if taps
            .iter()
            .any(|&(x, y)| raster.triangle[(y * w + x) as usize] == NO_TRIANGLE)
        {
            continue;
        }
        let pix = (q.y as isize * w + q.x as isize) as usize;
        let t = raster.triangle[pix];
        if t == NO_TRIANGLE {
            continue;
        }
        let tri = basis.triangles[t as usize].map(|k| state.cam_points[k as usize]);
        let dir = Vector3::new((q.x - cam.cx) / cam.focal, (q.y - cam.cy) / cam.focal, 1.0);
        let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        let surface = n.dot(&tri[0]) / n.dot(&dir);
        if (surface - q.depth).abs() <= OCCLUSION_TOLERANCE {
            out.push(i);
        }
    }
    Ok(out)
}

fn check_inputs(basis: &FaceBasis, params: &ParamVector, obs: &Observation) -> Result<()> {
    params.dims_match(&basis.dims)?;
    check_len("landmarks", LANDMARK_COUNT, obs.landmarks.points.len())?;
    check_len("landmark visibility", LANDMARK_COUNT, obs.landmarks.visible.len())?;
    if obs.image.width() != obs.cam.width || obs.image.height() != obs.cam.height {
        return Err(CoreError::ImageSize(format!(
            "image {}x{} does not match camera {}x{}",
            obs.image.width(),
            obs.image.height(),
            obs.cam.width,
            obs.cam.height
        )));
    }
    Ok(())
}

pub(crate) fn evaluate(
    basis: &FaceBasis,
    params: &ParamVector,
    obs: &Observation,
    vertices: &[usize],
    cfg: &EnergyConfig,
    jacobian_for: Option<&FreeSet>,
) -> Result<(Residuals, Option<DMatrix<f64>>)> {
    check_inputs(basis, params, obs)?;
    let state = ModelState::new(basis, params)?;
    let sp = cfg.w_photo.sqrt();
    let sl = cfg.w_lmk.sqrt();
    let sr = cfg.w_prior.sqrt();

    // Photo block.
    let photo_ids: &[usize] = if cfg.w_photo > 0.0 { vertices } else { &[] };
    let mut photo = Vec::with_capacity(3 * photo_ids.len());
    let mut photo_lin = Vec::with_capacity(photo_ids.len());
    for &i in photo_ids {
        let p = state.cam_points[i];
        let q = obs.cam.project_camera_point(&p);
        let (sample, grad) = obs.image.sample_bilinear(q.u, q.v);
        let n = state.normals[i];
        let e = irradiance(&n, &params.gamma);
        for c in 0..3 {
            let color = state.reflectance[3 * i + c] * e[c];
            photo.push(sp * (sample[c] - color));
        }
        photo_lin.push((grad, obs.cam.projection_jacobian(&p), e));
    }

    // Landmark block.
    let lmk_ids: Vec<(usize, usize)> = if cfg.w_lmk > 0.0 {
        basis
            .landmark_ids
            .iter()
            .enumerate()
            .filter(|(l, _)| obs.landmarks.visible[*l])
            .map(|(l, &v)| (l, v))
            .collect()
    } else {
        Vec::new()
    };
    let mut landmark = Vec::with_capacity(2 * lmk_ids.len());
    for &(l, v) in &lmk_ids {
        let q = obs.landmark_cam.project_camera_point(&state.cam_points[v]);
        landmark.push(sl * (q.u - obs.landmarks.points[l][0]));
        landmark.push(sl * (q.v - obs.landmarks.points[l][1]));
    }

    // Prior block.
    let mut prior = Vec::new();
    if cfg.w_prior > 0.0 {
        for (coeffs, sigmas) in [
            (&params.alpha, &basis.sigma_alpha),
            (&params.beta, &basis.sigma_beta),
            (&params.delta, &basis.sigma_delta),
        ] {
            prior.extend(coeffs.iter().zip(sigmas.iter()).map(|(a, s)| sr * a / s));
        }
    }
    let residuals = Residuals {
        photo,
        landmark,
        prior,
    };
    let Some(free) = jacobian_for else {
        return Ok((residuals, None));
    };

    let slots = free_slots(free, &basis.dims);
    let rows = residuals.photo.len() + residuals.landmark.len() + residuals.prior.len();
    let mut jac = DMatrix::zeros(rows, slots.len());
    let rot_partials = euler_partials(params.rotation);
    let lmk_row0 = residuals.photo.len();
    let prior_row0 = lmk_row0 + residuals.landmark.len();

    // Shading sensitivity to the normal: sum_b gamma_cb grad Y_b(n), per channel.
    let shade_grad = |i: usize| -> [Vector3<f64>; 3] {
        let g = sh_basis_gradient(&state.normals[i]);
        [0, 1, 2].map(|c| (0..9).fold(Vector3::zeros(), |acc, b| acc + g[b] * params.gamma[9 * c + b]))
    };
    let photo_shade: Vec<[Vector3<f64>; 3]> = photo_ids.iter().map(|&i| shade_grad(i)).collect();
    // d(image sample)/d(camera point), per channel.
    let photo_dp: Vec<[Vector3<f64>; 3]> = photo_lin
        .iter()
        .map(|(grad, jp, _)| {
            [0, 1, 2].map(|c| {
                Vector3::new(
                    grad[0][c] * jp[0][0] + grad[1][c] * jp[1][0],
                    grad[0][c] * jp[0][1] + grad[1][c] * jp[1][1],
                    grad[0][c] * jp[0][2] + grad[1][c] * jp[1][2],
                )
            })
        })
        .collect();
    let lmk_jp: Vec<[[f64; 3]; 2]> = lmk_ids
        .iter()
        .map(|&(_, v)| obs.landmark_cam.projection_jacobian(&state.cam_points[v]))
        .collect();

    for (col, &(_, slot)) in slots.iter().enumerate() {
        match slot {
            Slot::Rotation(_) | Slot::Translation(_) => {
                let dp = |i: usize| -> Vector3<f64> {
                    match slot {
                        Slot::Rotation(j) => rot_partials[j] * state.position(i),
                        Slot::Translation(j) => {
                            let mut e = Vector3::zeros();
                            e[j] = 1.0;
                            e
                        }
                        _ => unreachable!(),
                    }
                };
                for (k, &i) in photo_ids.iter().enumerate() {
                    let d = dp(i);
                    for c in 0..3 {
                        jac[(3 * k + c, col)] = sp * photo_dp[k][c].dot(&d);
                    }
                }
                for (k, &(_, v)) in lmk_ids.iter().enumerate() {
                    let d = dp(v);
                    for a in 0..2 {
                        let jp = lmk_jp[k][a];
                        jac[(lmk_row0 + 2 * k + a, col)] = sl * (jp[0] * d.x + jp[1] * d.y + jp[2] * d.z);
                    }
                }
            }
            Slot::Alpha(m) | Slot::Delta(m) => {
                let column = match slot {
                    Slot::Alpha(_) => basis.geometry_basis.column(m),
                    _ => basis.expression_basis.column(m),
                };
                let delta_of = |i: usize| Vector3::new(column[3 * i], column[3 * i + 1], column[3 * i + 2]);
                // Derivative of the normal accumulations along this column.
                let mut dm = vec![Vector3::zeros(); basis.dims.vertices];
                for t in &basis.triangles {
                    let [a, b, c] = t.map(|i| i as usize);
                    let (pa, pb, pc) = (state.position(a), state.position(b), state.position(c));
                    let (da, db, dc) = (delta_of(a), delta_of(b), delta_of(c));
                    let d = (db - da).cross(&(pc - pa)) + (pb - pa).cross(&(dc - da));
                    dm[a] += d;
                    dm[b] += d;
                    dm[c] += d;
                }
                for (k, &i) in photo_ids.iter().enumerate() {
                    let d = state.rot * delta_of(i);
                    let len = state.normal_acc[i].norm();
                    let dn = if len > 0.0 {
                        let n = state.normals[i];
                        (dm[i] - n * n.dot(&dm[i])) / len
                    } else {
                        Vector3::zeros()
                    };
                    for c in 0..3 {
                        let dcolor = state.reflectance[3 * i + c] * photo_shade[k][c].dot(&dn);
                        jac[(3 * k + c, col)] = sp * (photo_dp[k][c].dot(&d) - dcolor);
                    }
                }
                for (k, &(_, v)) in lmk_ids.iter().enumerate() {
                    let d = state.rot * delta_of(v);
                    for a in 0..2 {
                        let jp = lmk_jp[k][a];
                        jac[(lmk_row0 + 2 * k + a, col)] = sl * (jp[0] * d.x + jp[1] * d.y + jp[2] * d.z);
                    }
                }
                if cfg.w_prior > 0.0 {
                    let (row, sigma) = match slot {
                        Slot::Alpha(_) => (m, basis.sigma_alpha[m]),
                        _ => (basis.dims.alpha + basis.dims.beta + m, basis.sigma_delta[m]),
                    };
                    jac[(prior_row0 + row, col)] = sr / sigma;
                }
            }
            Slot::Beta(m) => {
                let column = basis.reflectance_basis.column(m);
                for (k, &i) in photo_ids.iter().enumerate() {
                    let e = photo_lin[k].2;
                    for c in 0..3 {
                        jac[(3 * k + c, col)] = -sp * column[3 * i + c] * e[c];
                    }
                }
                if cfg.w_prior > 0.0 {
                    jac[(prior_row0 + basis.dims.alpha + m, col)] = sr / basis.sigma_beta[m];
                }
            }
            Slot::Gamma(g) => {
                let (c, b) = (g / 9, g % 9);
                for (k, &i) in photo_ids.iter().enumerate() {
                    let y = sh_basis(&state.normals[i]);
                    jac[(3 * k + c, col)] = -sp * state.reflectance[3 * i + c] * y[b];
                }
            }
        }
    }
    Ok((residuals, Some(jac)))
}

/// Residuals at `params`, with the photo term restricted to
/// [`photo_vertices`] of the same parameters.
pub fn energy_residuals(
    basis: &FaceBasis,
    params: &ParamVector,
    cam: &PerspectiveCamera,
    image: &Image,
    landmarks: &LandmarkSet,
    cfg: &EnergyConfig,
) -> Result<Residuals> {
    let vertices = photo_vertices(basis, params, cam)?;
    let obs = Observation {
        image,
        cam: *cam,
        landmarks,
        landmark_cam: *cam,
    };
    Ok(evaluate(basis, params, &obs, &vertices, cfg, None)?.0)
}

/// Jacobian of [`energy_residuals`] with respect to the free parameters, in
/// flat parameter order. The photo vertex set is held fixed.
pub fn energy_jacobian(
    basis: &FaceBasis,
    params: &ParamVector,
    cam: &PerspectiveCamera,
    image: &Image,
    landmarks: &LandmarkSet,
    cfg: &EnergyConfig,
    free: &FreeSet,
) -> Result<(Residuals, DMatrix<f64>)> {
    let vertices = photo_vertices(basis, params, cam)?;
    energy_jacobian_on(basis, params, cam, image, landmarks, cfg, free, &vertices)
}

/// As [`energy_jacobian`] but with an explicit photo vertex set, so finite
/// differences can be taken without the set changing under them.
#[allow(clippy::too_many_arguments)]
pub fn energy_jacobian_on(
    basis: &FaceBasis,
    params: &ParamVector,
    cam: &PerspectiveCamera,
    image: &Image,
    landmarks: &LandmarkSet,
    cfg: &EnergyConfig,
    free: &FreeSet,
    vertices: &[usize],
) -> Result<(Residuals, DMatrix<f64>)> {
    let obs = Observation {
        image,
        cam: *cam,
        landmarks,
        landmark_cam: *cam,
    };
    let (r, j) = evaluate(basis, params, &obs, vertices, cfg, Some(free))?;
    Ok((r, j.expect("jacobian requested")))
}

/// Residuals on an explicit photo vertex set.
pub fn energy_residuals_on(
    basis: &FaceBasis,
    params: &ParamVector,
    cam: &PerspectiveCamera,
    image: &Image,
    landmarks: &LandmarkSet,
    cfg: &EnergyConfig,
    vertices: &[usize],
) -> Result<Residuals> {
    let obs = Observation {
        image,
        cam: *cam,
        landmarks,
        landmark_cam: *cam,
    };
    Ok(evaluate(basis, params, &obs, vertices, cfg, None)?.0)
}
