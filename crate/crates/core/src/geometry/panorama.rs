use std::f64::consts::{PI, TAU};

use image::RgbImage;
use nalgebra::Vector3;

use super::{spherical_to_cartesian, GeometryError};
use crate::geo::GeoPoint;

/// Equirectangular panorama: 360° horizontally, 180° vertically.
///
/// Column `c` (pixel centers at integers) looks along compass azimuth
/// `heading + 2π((c + 0.5)/W − 0.5)`, so the center column looks along
/// `heading`. Row `r` has polar angle `π (r + 0.5)/H` from the zenith.
#[derive(Debug, Clone)]
pub struct PanoramaImage {
    pixels: RgbImage,
    pub geotag: GeoPoint,
    heading: f64,
}

impl PanoramaImage {
    pub fn new(pixels: RgbImage, geotag: GeoPoint, heading: f64) -> Result<Self, GeometryError> {
        if pixels.width() == 0 || pixels.width() != 2 * pixels.height() {
            return Err(GeometryError::InvalidPanorama(format!(
                "width {} must be twice height {}",
                pixels.width(),
                pixels.height()
            )));
        }
        if !heading.is_finite() {
            return Err(GeometryError::InvalidPanorama("non-finite heading".into()));
        }
        Ok(Self {
            pixels,
            geotag,
            heading: heading.rem_euclid(TAU),
        })
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Bilinear sample along an east-north-up direction. Wraps in
    /// longitude, clamps in latitude.
    pub fn sample(&self, dir: &Vector3<f64>) -> [f64; 3] {
        let grid = EquirectGrid::new(self.width(), self.height(), self.heading);
        let (col, row) = grid.direction_to_pixel(dir);
        bilinear_rgb(&self.pixels, col, row)
    }
}

/// Pixel ↔ direction mapping shared by panoramas and their depth maps.
#[derive(Debug, Clone, Copy)]
pub struct EquirectGrid {
    pub width: u32,
    pub height: u32,
    pub heading: f64,
}

impl EquirectGrid {
    pub fn new(width: u32, height: u32, heading: f64) -> Self {
        Self {
            width,
            height,
            heading,
        }
    }

    /// Continuous (col, row); col in `[−0.5, W − 0.5)` after wrapping.
    pub fn direction_to_pixel(&self, dir: &Vector3<f64>) -> (f64, f64) {
        let w = self.width as f64;
        let h = self.height as f64;
        let azimuth = dir.x.atan2(dir.y);
        let norm = dir.norm();
        let polar = (dir.z / norm).clamp(-1.0, 1.0).acos();
        let u = ((azimuth - self.heading) / TAU + 0.5).rem_euclid(1.0);
        let col = u * w - 0.5;
        let row = polar / PI * h - 0.5;
        (col, row)
    }

    /// Unit direction through the given continuous pixel position.
    pub fn pixel_to_direction(&self, col: f64, row: f64) -> Vector3<f64> {
        let azimuth = self.heading + TAU * ((col + 0.5) / self.width as f64 - 0.5);
        let polar = PI * (row + 0.5) / self.height as f64;
        // Compass azimuth is measured clockwise from north; the spherical
        // longitude is counter-clockwise from east.
        spherical_to_cartesian(PI / 2.0 - azimuth, polar, 1.0)
    }

    /// Nearest integer pixel, wrapped and clamped.
    pub fn nearest(&self, dir: &Vector3<f64>) -> (u32, u32) {
        let (col, row) = self.direction_to_pixel(dir);
        let c = (col.round() as i64).rem_euclid(self.width as i64) as u32;
        let r = (row.round().max(0.0) as u32).min(self.height - 1);
        (c, r)
    }
}

pub(crate) fn bilinear_rgb(img: &RgbImage, col: f64, row: f64) -> [f64; 3] {
    let w = img.width() as i64;
    let h = img.height() as i64;
    let x0 = col.floor();
    let y0 = row.floor();
    let fx = col - x0;
    let fy = row - y0;
    let xa = (x0 as i64).rem_euclid(w) as u32;
    let xb = (x0 as i64 + 1).rem_euclid(w) as u32;
    let ya = (y0 as i64).clamp(0, h - 1) as u32;
    let yb = (y0 as i64 + 1).clamp(0, h - 1) as u32;
    let p00 = img.get_pixel(xa, ya).0;
    let p10 = img.get_pixel(xb, ya).0;
    let p01 = img.get_pixel(xa, yb).0;
    let p11 = img.get_pixel(xb, yb).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}
