//! Geodetic datum handling.
//!
//! Metric work happens on a Lambert conformal conic plane; results are
//! converted back to WGS84 latitude/longitude at the end of the pipeline.

mod lambert;

pub use lambert::{Ellipsoid, LambertProjection};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::PoseSE3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {lat}° is outside the projection band")]
    OutOfBand { lat: f64 },
    #[error("inverse projection did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("invalid projection: {0}")]
    InvalidProjection(String),
    #[error("invalid geographic point: lat {lat}, lon {lon}")]
    InvalidPoint { lat: f64, lon: f64 },
}

/// WGS84 position. Latitude and longitude in degrees, altitude in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub alt: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self, GeoError> {
        let p = Self { lat, lon, alt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let ok = self.lat.is_finite()
            && self.lon.is_finite()
            && self.alt.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..180.0).contains(&self.lon);
        if ok {
            Ok(())
        } else {
            Err(GeoError::InvalidPoint {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

/// Planar (easting, northing) pair on the projection plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn distance(&self, other: &PlanePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn wgs84_to_lambert(p: &GeoPoint, proj: &LambertProjection) -> Result<PlanePoint, GeoError> {
    proj.forward(p)
}

pub fn lambert_to_wgs84(xy: &PlanePoint, proj: &LambertProjection) -> Result<GeoPoint, GeoError> {
    proj.inverse(xy)
}

/// Rotation taking local east-north-up vectors at `p` to grid
/// (easting, northing, up) vectors. Only the meridian convergence is
/// applied; the point scale factor stays within 1e-4 of unity inside the
/// zone and is ignored for metric offsets.
pub fn grid_from_enu(p: &GeoPoint, proj: &LambertProjection) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), proj.convergence(p))
}

/// Converts a relative pose to a global position.
///
/// `vehicle` maps reference-camera coordinates into vehicle-camera
/// coordinates (the output of pair-wise pose estimation); `reference_rotation`
/// is the reference camera's orientation in the local east-north-up frame at
/// `reference`.
pub fn local_pose_to_geo(
    vehicle: &PoseSE3,
    reference: &GeoPoint,
    reference_rotation: &Rotation3<f64>,
    proj: &LambertProjection,
) -> Result<GeoPoint, GeoError> {
    reference.validate()?;
    let center_in_ref = vehicle.center();
    let enu = reference_rotation * center_in_ref;
    offset_to_geo(reference, &enu, proj)
}

/// Moves `origin` by a local east-north-up offset (meters).
pub fn offset_to_geo(
    origin: &GeoPoint,
    enu: &Vector3<f64>,
    proj: &LambertProjection,
) -> Result<GeoPoint, GeoError> {
    let base = proj.forward(origin)?;
    let grid = grid_from_enu(origin, proj) * enu;
    let mut out = proj.inverse(&PlanePoint {
        x: base.x + grid.x,
        y: base.y + grid.y,
    })?;
    out.alt = origin.alt + enu.z;
    Ok(out)
}
