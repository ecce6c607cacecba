//! Software renderer: shaded frontal views, unlit albedo views, fisheye
//! views and landmark projection.

mod image;
mod raster;

pub use image::{Image, Rgb8Image};
pub use raster::{rasterize, Raster, ScreenVertex, NO_TRIANGLE};

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{FisheyeCamera, PerspectiveCamera, Pose};
use crate::error::Result;
use crate::face::{FaceBasis, Mesh, ParamVector, ShadedMesh, LANDMARK_COUNT};
use crate::rotation::euler_matrix;

/// Depth agreement (mm) required for a landmark to count as visible.
pub const LANDMARK_DEPTH_TOLERANCE: f64 = 1.0;

pub(crate) fn to_camera(positions: &[f64], rot: &Matrix3<f64>, t: &Vector3<f64>) -> Vec<Vector3<f64>> {
    positions
        .chunks_exact(3)
        .map(|p| rot * Vector3::new(p[0], p[1], p[2]) + t)
        .collect()
}

fn perspective_vertices(cam: &PerspectiveCamera, cam_points: &[Vector3<f64>]) -> Vec<ScreenVertex> {
    cam_points
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
        .collect()
}

fn render_perspective(
    mesh: &Mesh,
    colors: &[f64],
    cam: &PerspectiveCamera,
    pose: &Pose,
    background: [f64; 3],
) -> Raster {
    let pts = to_camera(
        &mesh.positions,
        &euler_matrix(pose.rotation),
        &Vector3::from(pose.translation),
    );
    let verts = perspective_vertices(cam, &pts);
    rasterize(cam.width, cam.height, &verts, colors, &mesh.triangles, background)
}

/// Frontal render of shaded vertex colours under head pose `pose`.
pub fn rasterize_shaded(
    mesh: &ShadedMesh,
    cam: &PerspectiveCamera,
    pose: &Pose,
    background: [f64; 3],
) -> Raster {
    render_perspective(&mesh.mesh, &mesh.colors, cam, pose, background)
}

/// Unlit render of the reflectance, posed by `pose` instead of the pose
/// stored in `params`; illumination is ignored.
pub fn rasterize_albedo(
    basis: &FaceBasis,
    params: &ParamVector,
    cam: &PerspectiveCamera,
    pose: &Pose,
    background: [f64; 3],
) -> Result<Image> {
    let mesh = basis.mesh(params)?;
    Ok(render_perspective(&mesh, &mesh.reflectance, cam, pose, background).image)
}

/// Fisheye render from the face-fixed camera; triangles with any vertex
/// outside the field of view are dropped.
pub fn rasterize_egocentric(mesh: &ShadedMesh, cam: &FisheyeCamera, background: [f64; 3]) -> Raster {
    let rot = cam.offset.matrix();
    let t = Vector3::from(cam.offset.translation);
    let verts: Vec<ScreenVertex> = to_camera(&mesh.mesh.positions, &rot, &t)
        .iter()
        .map(|p| {
            let q = cam.project_camera_point(p).projection;
            ScreenVertex {
                x: q.u,
                y: q.v,
                depth: q.depth,
                valid: q.valid,
            }
        })
        .collect();
    rasterize(cam.width, cam.height, &verts, &mesh.colors, &mesh.mesh.triangles, background)
}

/// Projected landmark positions with visibility flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Copy with independent Gaussian noise of `sigma` pixels on each
    /// coordinate, as a stand-in for a landmark detector.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> LandmarkSet {
        if sigma == 0.0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = || -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        };
        LandmarkSet {
            points: self.points.iter().map(|p| [p[0] + jitter(), p[1] + jitter()]).collect(),
            visible: self.visible.clone(),
        }
    }
}

/// Depth along the camera ray through `(u, v)` where it meets the plane of a
/// camera-space triangle.
fn plane_depth(cam: &PerspectiveCamera, tri: [Vector3<f64>; 3], u: f64, v: f64) -> f64 {
    let dir = Vector3::new((u - cam.cx) / cam.focal, (v - cam.cy) / cam.focal, 1.0);
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    n.dot(&tri[0]) / n.dot(&dir)
}

/// Projects the 66 landmark vertices under the pose stored in `params`. A
/// landmark is visible when it projects inside the image and its depth agrees
/// with the rendered surface at that point.
pub fn project_landmarks(basis: &FaceBasis, params: &ParamVector, cam: &PerspectiveCamera) -> Result<LandmarkSet> {
    let mesh = basis.mesh(params)?;
    let pose = Pose {
        rotation: params.rotation,
        translation: params.translation,
    };
    let pts = to_camera(
        &mesh.positions,
        &euler_matrix(pose.rotation),
        &Vector3::from(pose.translation),
    );
    let verts = perspective_vertices(cam, &pts);
    let dummy = vec![0.0; mesh.positions.len()];
    let raster = rasterize(cam.width, cam.height, &verts, &dummy, &mesh.triangles, [0.0; 3]);
    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    let mut visible = Vec::with_capacity(LANDMARK_COUNT);
    for &id in &basis.landmark_ids {
        let q = verts[id];
        points.push([q.x, q.y]);
        let inside = q.valid
            && q.x >= 0.0
            && q.y >= 0.0
            && q.x < cam.width as f64
            && q.y < cam.height as f64;
        let vis = inside && {
            let pix = q.y as usize * cam.width + q.x as usize;
            let t = raster.triangle[pix];
            t != NO_TRIANGLE && {
                let tri = mesh.triangles[t as usize].map(|i| pts[i as usize]);
                let surface = plane_depth(cam, tri, q.x, q.y);
                (surface - q.depth).abs() <= LANDMARK_DEPTH_TOLERANCE
            }
        };
        visible.push(vis);
    }
    Ok(LandmarkSet { points, visible })
}
