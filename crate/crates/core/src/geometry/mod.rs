//! Panorama model and rectilinear view synthesis.
//!
//! Frames: the panorama frame is east-north-up centered on the panorama
//! camera; cameras are right-down-forward. Depths are distances along the
//! viewing ray, not z-depths.

mod camera;
mod depth;
mod panorama;
mod render;

pub use camera::{camera_rotation, PinholeCamera, VirtualRig};
pub use depth::{decode_depth, DepthPlane, PlanarDepthMap, GRAZING_EPS};
pub use panorama::{EquirectGrid, PanoramaImage};
pub use render::{
    depth_from_plane_index, render_depth, render_plane_index, render_rectilinear, render_view,
    to_gray, DepthImage, RectilinearView,
};

use nalgebra::{Rotation3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("zero-length vector cannot be projected to the sphere")]
    ZeroVector,
    #[error("ray is parallel to the depth plane")]
    GrazingRay,
    #[error("pixel has unknown depth")]
    UnknownDepth,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid panorama: {0}")]
    InvalidPanorama(String),
    #[error("invalid depth map: {0}")]
    InvalidDepthMap(String),
}

/// `(ρ cosθ sinφ, ρ sinθ sinφ, ρ cosφ)`: θ is the longitude from +x toward
/// +y, φ the polar angle from +z.
pub fn spherical_to_cartesian(theta: f64, phi: f64, rho: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(rho * ct * sp, rho * st * sp, rho * cp)
}

pub fn project_to_sphere(point: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let n = point.norm();
    if n < 1e-12 {
        return Err(GeometryError::ZeroVector);
    }
    Ok(point / n)
}

/// Unit ray through `pixel`, expressed in the frame `rotation` maps into.
pub fn pixel_to_ray(
    camera: &PinholeCamera,
    rotation: &Rotation3<f64>,
    pixel: &Vector2<f64>,
) -> Vector3<f64> {
    (rotation * camera.unproject(pixel)).normalize()
}

/// Camera-frame point at distance `depth` along the pixel's ray.
pub fn backproject_pixel(
    camera: &PinholeCamera,
    pixel: &Vector2<f64>,
    depth: f64,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::UnknownDepth);
    }
    Ok(camera.unproject(pixel).normalize() * depth)
}
