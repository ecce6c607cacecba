//! Euler-angle rotations `Rot = Rz(rz) · Ry(ry) · Rx(rx)` and their partials.

use nalgebra::Matrix3;

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn dry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

pub fn euler_matrix(angles: [f64; 3]) -> Matrix3<f64> {
    rz(angles[2]) * ry(angles[1]) * rx(angles[0])
}

/// Partial derivatives of [`euler_matrix`] w.r.t. each of the three angles.
pub fn euler_partials(angles: [f64; 3]) -> [Matrix3<f64>; 3] {
    let [a, b, c] = angles;
    [
        rz(c) * ry(b) * drx(a),
        rz(c) * dry(b) * rx(a),
        drz(c) * ry(b) * rx(a),
    ]
}

/// Inverse of [`euler_matrix`] for rotations away from gimbal lock.
pub fn matrix_to_euler(m: &Matrix3<f64>) -> [f64; 3] {
    let ry = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let rx = m[(2, 1)].atan2(m[(2, 2)]);
    let rz = m[(1, 0)].atan2(m[(0, 0)]);
    [rx, ry, rz]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partials_match_finite_differences() {
        let angles = [0.3, -0.7, 1.1];
        let parts = euler_partials(angles);
        for (k, part) in parts.iter().enumerate() {
            let mut hi = angles;
            let mut lo = angles;
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let fd = (euler_matrix(hi) - euler_matrix(lo)) / 2e-6;
            assert!((fd - part).norm() < 1e-8);
        }
    }

    #[test]
    fn euler_round_trip() {
        let angles = [0.4, -0.2, 2.5];
        let back = matrix_to_euler(&euler_matrix(angles));
        for k in 0..3 {
            assert!((back[k] - angles[k]).abs() < 1e-12);
        }
        let m = euler_matrix(angles);
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
    }
}
