//! Pinhole camera for the frontal view and an equidistant fisheye for the
//! head-mounted view.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rotation::{euler_matrix, matrix_to_euler};

/// Points closer than this (mm) to the camera plane are not projected.
pub const NEAR_PLANE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerspectiveCamera {
    /// Pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// A projected point; `valid` is false in front of the near plane or outside
/// the field of view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-space z for the pinhole, distance to the centre for the fisheye.
    pub depth: f64,
    pub valid: bool,
}

impl PerspectiveCamera {
    pub fn frontal_default() -> Self {
        PerspectiveCamera {
            focal: 560.0,
            cx: 128.0,
            cy: 128.0,
            width: 256,
            height: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(CoreError::Config(
                "perspective camera needs focal > 0 and a non-empty image".into(),
            ));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return Err(CoreError::Config("principal point outside the image".into()));
        }
        Ok(())
    }

    /// Camera for an image downsampled by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        let s = factor as f64;
        PerspectiveCamera {
            focal: self.focal / s,
            cx: self.cx / s,
            cy: self.cy / s,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Projects a camera-space point.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Projection {
        let valid = p.z > NEAR_PLANE && p.iter().all(|v| v.is_finite());
        Projection {
            u: self.focal * p.x / p.z + self.cx,
            v: self.focal * p.y / p.z + self.cy,
            depth: p.z,
            valid,
        }
    }

    /// d(u, v) / d(camera-space point).
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> [[f64; 3]; 2] {
        let iz = 1.0 / p.z;
        let f = self.focal;
        [
            [f * iz, 0.0, -f * p.x * iz * iz],
            [0.0, f * iz, -f * p.y * iz * iz],
        ]
    }
}

/// `u = f x'/z' + cx, v = f y'/z' + cy` with `p' = Rot(R) p + T`.
pub fn project_perspective(
    cam: &PerspectiveCamera,
    rotation: [f64; 3],
    translation: [f64; 3],
    point: &Vector3<f64>,
) -> Projection {
    let p = euler_matrix(rotation) * point + Vector3::from(translation);
    cam.project_camera_point(&p)
}

/// Head pose in front of the frontal camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    /// Euler angles (radians).
    pub rotation: [f64; 3],
    /// Millimetres.
    pub translation: [f64; 3],
}

impl Pose {
    /// Face centred 600 mm in front of the camera, looking into it.
    pub fn frontal_default() -> Self {
        Pose {
            rotation: [0.0; 3],
            translation: [0.0, 0.0, 600.0],
        }
    }
}

/// Rigid transform from model coordinates to camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidOffset {
    /// Euler angles (radians), same convention as the head pose.
    pub rotation: [f64; 3],
    /// Millimetres.
    pub translation: [f64; 3],
}

impl RigidOffset {
    pub fn matrix(&self) -> Matrix3<f64> {
        euler_matrix(self.rotation)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix() * p + Vector3::from(self.translation)
    }

    /// Camera placed at `eye` looking at `target`, image rows running along
    /// model +y as far as possible.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let down = Vector3::new(0.0, 1.0, 0.0);
        let y = (down - z * down.dot(&z)).normalize();
        let x = y.cross(&z);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = matrix_to_euler(&rot);
        let t = -(euler_matrix(rotation) * eye);
        RigidOffset {
            rotation,
            translation: [t.x, t.y, t.z],
        }
    }
}

/// Camera position and look-at target of the default head-mounted camera:
/// beside the right cheek, in front of the nose tip, aimed at the mouth.
pub const EGO_EYE: [f64; 3] = [55.0, 10.0, -95.0];
pub const EGO_TARGET: [f64; 3] = [0.0, 45.0, -65.0];

pub fn ego_offset_default() -> RigidOffset {
    RigidOffset::look_at(Vector3::from(EGO_EYE), Vector3::from(EGO_TARGET))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisheyeCamera {
    /// Pixels per radian.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Full field of view (radians).
    pub fov: f64,
    pub offset: RigidOffset,
}

impl FisheyeCamera {
    /// 256×256, 170° field of view spanning the image width.
    pub fn ego_default() -> Self {
        let fov = 170f64.to_radians();
        FisheyeCamera {
            focal: 128.0 / (fov / 2.0),
            cx: 128.0,
            cy: 128.0,
            width: 256,
            height: 256,
            fov,
            offset: ego_offset_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(CoreError::Config(
                "fisheye camera needs focal > 0 and a non-empty image".into(),
            ));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(CoreError::Config("fisheye fov must lie in (0, pi)".into()));
        }
        Ok(())
    }

    /// Projects a camera-space point: `rho = f theta` along the azimuth.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> FisheyeProjection {
        let r_xy = p.x.hypot(p.y);
        let theta = r_xy.atan2(p.z);
        let rho = self.focal * theta;
        let (u, v) = if r_xy > 0.0 {
            (self.cx + rho * p.x / r_xy, self.cy + rho * p.y / r_xy)
        } else {
            (self.cx, self.cy)
        };
        let distance = p.norm();
        FisheyeProjection {
            projection: Projection {
                u,
                v,
                depth: distance,
                valid: theta < self.fov / 2.0 && distance > NEAR_PLANE && u.is_finite() && v.is_finite(),
            },
            theta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisheyeProjection {
    pub projection: Projection,
    /// Angle from the optical axis (radians).
    pub theta: f64,
}

/// Projects a model-space point through the camera's rigid offset.
pub fn project_fisheye(cam: &FisheyeCamera, point: &Vector3<f64>) -> FisheyeProjection {
    cam.project_camera_point(&cam.offset.apply(point))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> PerspectiveCamera {
        PerspectiveCamera {
            focal: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn pinhole_examples() {
        let o = project_perspective(&cam(), [0.0; 3], [0.0, 0.0, 1000.0], &Vector3::zeros());
        assert_eq!((o.u, o.v, o.depth, o.valid), (320.0, 240.0, 1000.0, true));
        let p = Vector3::new(100.0, 0.0, 0.0);
        let a = project_perspective(&cam(), [0.0; 3], [0.0, 0.0, 1000.0], &p);
        assert_eq!((a.u, a.v), (370.0, 240.0));
        let b = project_perspective(&cam(), [0.0; 3], [0.0, 0.0, 2000.0], &p);
        assert_eq!((b.u, b.v), (345.0, 240.0));
        let behind = project_perspective(&cam(), [0.0; 3], [0.0, 0.0, -5.0], &p);
        assert!(!behind.valid);
    }

    #[test]
    fn fisheye_examples() {
        let mut f = FisheyeCamera::ego_default();
        f.offset = RigidOffset {
            rotation: [0.0; 3],
            translation: [0.0; 3],
        };
        let on_axis = project_fisheye(&f, &Vector3::new(0.0, 0.0, 50.0));
        assert_eq!((on_axis.projection.u, on_axis.projection.v), (f.cx, f.cy));
        f.focal = 200.0;
        let p = Vector3::new(0.5f64.tan(), 0.0, 1.0) * 100.0;
        let q = project_fisheye(&f, &p);
        assert!((q.projection.u - (f.cx + 100.0)).abs() < 1e-9);
        assert!((q.projection.v - f.cy).abs() < 1e-12);
        let wide = 85.01f64.to_radians();
        let edge = project_fisheye(&f, &Vector3::new(wide.sin(), 0.0, wide.cos()));
        assert!(!edge.projection.valid);
    }

    #[test]
    fn default_offset_is_orthonormal_and_deterministic() {
        let a = ego_offset_default();
        assert_eq!(a, ego_offset_default());
        let m = a.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
        // The eye maps to the camera origin and the target onto the axis.
        let eye = a.apply(&Vector3::from(EGO_EYE));
        assert!(eye.norm() < 1e-9);
        let t = a.apply(&Vector3::from(EGO_TARGET));
        assert!(t.x.abs() < 1e-9 && t.y.abs() < 1e-9 && t.z > 0.0);
    }
}
