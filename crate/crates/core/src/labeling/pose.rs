use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{invalid, Result};

const ORTHO_TOL: f64 = 1e-6;

/// Timestamped rigid body-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehiclePose {
    pub stamp: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl VehiclePose {
    /// Rejects rotations that are not orthonormal with determinant +1.
    pub fn new(stamp: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if !(err <= ORTHO_TOL) {
            return Err(invalid(format!(
                "rotation at t={stamp} is not orthonormal (|R^T R - I| = {err:e})"
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(invalid(format!(
                "rotation at t={stamp} has negative determinant"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) || !stamp.is_finite() {
            return Err(invalid(format!("non-finite pose at t={stamp}")));
        }
        Ok(VehiclePose {
            stamp,
            rotation,
            translation,
        })
    }

    pub fn identity(stamp: f64) -> Self {
        VehiclePose {
            stamp,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Planar pose: position `(x, y, z)` and heading `yaw` (rad, about +z).
    pub fn from_yaw(stamp: f64, x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let rotation = *UnitQuaternion::from_euler_angles(0.0, 0.0, yaw)
            .to_rotation_matrix()
            .matrix();
        VehiclePose {
            stamp,
            rotation,
            translation: Vector3::new(x, y, z),
        }
    }

    /// From a quaternion `(w, x, y, z)`; the quaternion is normalised and
    /// must have non-zero norm.
    pub fn from_quaternion(stamp: f64, translation: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = raw.norm();
        if !(norm > 1e-9) || !norm.is_finite() {
            return Err(invalid(format!("degenerate quaternion at t={stamp}")));
        }
        let rot = UnitQuaternion::from_quaternion(raw).to_rotation_matrix();
        Self::new(stamp, *rot.matrix(), Vector3::from(translation))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `(w, x, y, z)` of the rotation.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_body(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }
}

/// Maps body-frame points observed at pose `at` into the body frame at
/// pose `current`: `(T_current)^-1 * T_at * p`.
pub fn transform_to_current(
    points: &[Vector3<f64>],
    at: &VehiclePose,
    current: &VehiclePose,
) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|p| current.to_body(&at.to_world(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.1;
        assert!(VehiclePose::new(0.0, r, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(VehiclePose::new(0.0, reflect, Vector3::zeros()).is_err());
        assert!(VehiclePose::from_quaternion(0.0, [0.0; 3], [0.0; 4]).is_err());
    }

    #[test]
    fn quaternion_round_trip() {
        let p = VehiclePose::from_yaw(1.5, 3.0, -2.0, 0.5, 0.7);
        let q = p.quaternion();
        let back = VehiclePose::from_quaternion(1.5, [3.0, -2.0, 0.5], q).unwrap();
        assert!((back.rotation() - p.rotation()).abs().max() < 1e-12);
    }

    #[test]
    fn yaw_quarter_turn_matrix() {
        let p = VehiclePose::from_yaw(0.0, 0.0, 0.0, 0.0, FRAC_PI_2);
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((p.rotation() - expect).abs().max() < 1e-12);
    }
}
