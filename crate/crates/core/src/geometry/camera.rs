use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Pinhole intrinsics. Pixel coordinates put integer values at pixel
/// centers; the image spans `[-0.5, width - 0.5) × [-0.5, height - 0.5)`.
/// Camera axes are right-down-forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Centered camera with the given horizontal field of view (radians).
    pub fn from_hfov(width: u32, height: u32, hfov: f64) -> Result<Self, GeometryError> {
        let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cy > 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidCamera(format!("{self:?}")))
        }
    }

    /// `K⁻¹ (u, v, 1)`, not normalized.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// Projects a camera-frame point; `None` when it is not in front.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 1e-9 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

/// World-from-camera rotation for a camera looking along compass azimuth
/// `azimuth` (clockwise from north) tilted up by `pitch`, in an
/// east-north-up world frame.
pub fn camera_rotation(azimuth: f64, pitch: f64) -> Rotation3<f64> {
    let (sa, ca) = azimuth.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let forward = Vector3::new(sa * cp, ca * cp, sp);
    let right = Vector3::new(ca, -sa, 0.0);
    let down = forward.cross(&right);
    Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[right, down, forward]))
}

/// Virtual camera rig mounted at the panorama center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualRig {
    pub camera: PinholeCamera,
    /// Radians, positive up.
    pub pitch: f64,
    /// Compass azimuths, radians, strictly increasing in `[0, 2π)`.
    pub yaws: Vec<f64>,
}

impl VirtualRig {
    pub fn new(camera: PinholeCamera, pitch: f64, yaws: Vec<f64>) -> Result<Self, GeometryError> {
        camera.validate()?;
        if yaws.is_empty() {
            return Err(GeometryError::InvalidRig("no yaw directions".into()));
        }
        let tau = std::f64::consts::TAU;
        if yaws.iter().any(|y| !(0.0..tau).contains(y)) {
            return Err(GeometryError::InvalidRig("yaws must lie in [0, 2π)".into()));
        }
        if yaws.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GeometryError::InvalidRig(
                "yaws must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            camera,
            pitch,
            yaws,
        })
    }

    /// Eight cameras at 45° spacing, zero pitch.
    pub fn eight_way(camera: PinholeCamera) -> Self {
        let yaws = (0..8)
            .map(|i| i as f64 * std::f64::consts::FRAC_PI_4)
            .collect();
        Self {
            camera,
            pitch: 0.0,
            yaws,
        }
    }

    pub fn len(&self) -> usize {
        self.yaws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yaws.is_empty()
    }

    pub fn rotation(&self, slot: usize) -> Rotation3<f64> {
        camera_rotation(self.yaws[slot], self.pitch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_axes_at_north() {
        let r = camera_rotation(0.0, 0.0);
        let fwd = r * Vector3::z();
        let right = r * Vector3::x();
        let down = r * Vector3::y();
        assert!((fwd - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((right - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((down - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn east_facing_camera() {
        let r = camera_rotation(std::f64::consts::FRAC_PI_2, 0.0);
        let fwd = r * Vector3::z();
        assert!((fwd - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let up = camera_rotation(0.3, 0.2) * Vector3::z();
        assert!((up.z - 0.2f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn rig_validation() {
        let cam = PinholeCamera::from_hfov(64, 48, 1.0).unwrap();
        assert!(VirtualRig::new(cam, 0.0, vec![0.0, 1.0, 0.5]).is_err());
        assert!(VirtualRig::new(cam, 0.0, vec![0.0, 7.0]).is_err());
        let rig = VirtualRig::eight_way(cam);
        assert_eq!(rig.len(), 8);
        assert!(VirtualRig::new(cam, 0.0, rig.yaws.clone()).is_ok());
    }

    #[test]
    fn camera_validation() {
        assert!(PinholeCamera::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 5.0, 1.0, 4, 4).is_err());
        assert!(PinholeCamera::new(1.0, 1.0, 2.0, 2.0, 4, 4).is_ok());
    }
}
