use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid motion mapping fixed-space points to moving-space points:
/// `p ↦ R (p − center) + center + translation` with `R = Rz · Ry · Rx`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    #[serde(rename = "angles_rad")]
    pub angles: [f64; 3],
    #[serde(rename = "translation_mm")]
    pub translation: [f64; 3],
    #[serde(rename = "center_mm")]
    pub center: [f64; 3],
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::identity([0.0; 3])
    }
}

impl RigidTransform {
    pub fn identity(center: [f64; 3]) -> Self {
        RigidTransform {
            angles: [0.0; 3],
            translation: [0.0; 3],
            center,
        }
    }

    pub fn new(angles: [f64; 3], translation: [f64; 3], center: [f64; 3]) -> Self {
        RigidTransform {
            angles,
            translation,
            center,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let [ax, ay, az] = self.angles;
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), ax);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), ay);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), az);
        (rz * ry * rx).into_inner()
    }

    /// Equivalent affine form `p ↦ M p + b`.
    pub fn affine(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let r = self.rotation();
        let c = Vector3::from(self.center);
        (r, c - r * c + Vector3::from(self.translation))
    }

    #[inline]
    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        let (m, b) = self.affine();
        m * p + b
    }

    /// Rebuilds a transform about `center` from a rotation matrix and offset.
    pub fn from_affine(rotation: &Matrix3<f64>, offset: Vector3<f64>, center: [f64; 3]) -> Self {
        let c = Vector3::from(center);
        let t = offset - c + rotation * c;
        RigidTransform {
            angles: euler_zyx(rotation),
            translation: [t.x, t.y, t.z],
            center,
        }
    }

    pub fn inverse(&self) -> Self {
        let (m, b) = self.affine();
        let mt = m.transpose();
        RigidTransform::from_affine(&mt, -(mt * b), self.center)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let (m1, b1) = self.affine();
        let (m2, b2) = other.affine();
        RigidTransform::from_affine(&(m1 * m2), m1 * b2 + b1, self.center)
    }

    /// Rotation angle of the motion, in radians.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation())
    }

    /// Displacement of the rotation center.
    pub fn center_displacement(&self) -> f64 {
        let c = Vector3::from(self.center);
        (self.apply(c) - c).norm()
    }
}

/// Angle of a rotation matrix from its trace.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Euler angles `(x, y, z)` with `R = Rz(z) · Ry(y) · Rx(x)`.
fn euler_zyx(r: &Matrix3<f64>) -> [f64; 3] {
    let sy = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let ay = sy.asin();
    if sy.abs() < 1.0 - 1e-12 {
        let ax = r[(2, 1)].atan2(r[(2, 2)]);
        let az = r[(1, 0)].atan2(r[(0, 0)]);
        [ax, ay, az]
    } else {
        // gimbal lock: fold the x rotation into z
        let az = (-r[(0, 1)]).atan2(r[(1, 1)]);
        [0.0, ay, az]
    }
}
