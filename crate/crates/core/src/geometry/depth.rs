use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{EquirectGrid, GeometryError};

/// Below this `|n · ray|` a ray is treated as parallel to the plane.
pub const GRAZING_EPS: f64 = 1e-6;

/// Plane `n · X + d = 0` in the panorama's east-north-up frame, with `n`
/// pointing toward the panorama center and `d > 0` its distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPlane {
    pub normal: Vector3<f64>,
    pub distance: f64,
}

/// Depth stored as per-pixel plane indices over an equirectangular grid
/// plus a plane table. Index 0 means "no plane" (sky or unknown); index
/// `i > 0` refers to `planes[i - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarDepthMap {
    width: u32,
    height: u32,
    plane_index: Vec<u16>,
    planes: Vec<DepthPlane>,
}

impl PlanarDepthMap {
    pub fn new(
        width: u32,
        height: u32,
        plane_index: Vec<u16>,
        planes: Vec<DepthPlane>,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || plane_index.len() != (width * height) as usize {
            return Err(GeometryError::InvalidDepthMap(format!(
                "index grid has {} entries for {width}×{height}",
                plane_index.len()
            )));
        }
        for (i, p) in planes.iter().enumerate() {
            if ((p.normal.norm() - 1.0).abs()) > 1e-9 {
                return Err(GeometryError::InvalidDepthMap(format!(
                    "plane {} normal has norm {}",
                    i + 1,
                    p.normal.norm()
                )));
            }
            if !(p.distance > 0.0) || !p.distance.is_finite() {
                return Err(GeometryError::InvalidDepthMap(format!(
                    "plane {} has non-positive distance {}",
                    i + 1,
                    p.distance
                )));
            }
        }
        if let Some(&bad) = plane_index.iter().find(|&&i| i as usize > planes.len()) {
            return Err(GeometryError::InvalidDepthMap(format!(
                "plane index {bad} exceeds plane count {}",
                planes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            plane_index,
            planes,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn planes(&self) -> &[DepthPlane] {
        &self.planes
    }

    pub fn plane_index(&self) -> &[u16] {
        &self.plane_index
    }

    pub fn index_at(&self, col: u32, row: u32) -> u16 {
        self.plane_index[(row * self.width + col) as usize]
    }

    pub fn grid(&self, heading: f64) -> EquirectGrid {
        EquirectGrid::new(self.width, self.height, heading)
    }

    /// Nearest-neighbor resampling of the index grid; plane identities are
    /// preserved.
    pub fn resample(&self, width: u32, height: u32) -> PlanarDepthMap {
        let mut idx = Vec::with_capacity((width * height) as usize);
        for r in 0..height {
            let sr = (((r as f64 + 0.5) * self.height as f64 / height as f64) as u32)
                .min(self.height - 1);
            for c in 0..width {
                let sc = (((c as f64 + 0.5) * self.width as f64 / width as f64) as u32)
                    .min(self.width - 1);
                idx.push(self.index_at(sc, sr));
            }
        }
        PlanarDepthMap {
            width,
            height,
            plane_index: idx,
            planes: self.planes.clone(),
        }
    }
}

/// Distance along `ray` (unit) to the plane recorded at grid pixel
/// `(col, row)`.
///
/// `Ok(None)` for "no plane" and for planes facing away from the ray;
/// `Err(GrazingRay)` when the ray is parallel to the plane.
pub fn decode_depth(
    depthmap: &PlanarDepthMap,
    ray: &Vector3<f64>,
    pixel: (u32, u32),
) -> Result<Option<f64>, GeometryError> {
    let idx = depthmap.index_at(pixel.0, pixel.1);
    if idx == 0 {
        return Ok(None);
    }
    let plane = &depthmap.planes[idx as usize - 1];
    let cos = plane.normal.dot(ray);
    if cos.abs() < GRAZING_EPS {
        return Err(GeometryError::GrazingRay);
    }
    if cos > 0.0 {
        return Ok(None);
    }
    Ok(Some(-plane.distance / cos))
}
