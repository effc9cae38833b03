use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Rigid transform `x' = R x + t`.
///
/// Updates are applied on the left: `exp(ξ) ∘ T` with `ξ = (ω, v)`, rotation
/// part first. The rotation is stored as a unit quaternion and renormalized
/// after every update so the matrix stays orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct PoseSE3 {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rotation),
            translation,
        }
    }

    pub fn from_quaternion(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from an arbitrary 3×3 matrix, projecting it onto SO(3).
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_matrix_eps(rotation, 1e-15, 100, Rotation3::identity());
        Self::new(r, translation)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        self.rotation.to_rotation_matrix()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Left update by a 6-vector `(ω, v)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dr = UnitQuaternion::from_scaled_axis(omega);
        let mut rotation = dr * self.rotation;
        rotation.renormalize();
        Self {
            rotation,
            translation: dr * self.translation + v,
        }
    }

    /// Origin of the source frame expressed in the target frame's inverse,
    /// i.e. the camera center `-Rᵀ t` when the pose maps world to camera.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Geodesic rotation distance to `other`, radians.
    pub fn rotation_distance(&self, other: &PoseSE3) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance(&self, other: &PoseSE3) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Largest deviation of `RᵀR` from identity, and of `det R` from one.
    pub fn manifold_error(&self) -> f64 {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        ortho.max((r.determinant() - 1.0).abs())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// Row-major rotation matrix.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<PoseSE3> for PoseRepr {
    fn from(p: PoseSE3) -> Self {
        let r = p.rotation();
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[(i, j)];
            }
        }
        PoseRepr {
            rotation: rows,
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl From<PoseRepr> for PoseSE3 {
    fn from(r: PoseRepr) -> Self {
        let m = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        PoseSE3::from_matrix(&m, Vector3::from(r.translation))
    }
}
