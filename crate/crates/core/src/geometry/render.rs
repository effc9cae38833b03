use image::{GrayImage, Rgb, RgbImage};
use nalgebra::{Rotation3, Vector2};
use rayon::prelude::*;

use super::{DepthPlane, PanoramaImage, PinholeCamera, PlanarDepthMap, VirtualRig, GRAZING_EPS};
use crate::geo::GeoPoint;

/// Per-pixel ray distance in meters; 0 marks unknown depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    /// Depth at the pixel nearest to a sub-pixel position; `None` when
    /// unknown or outside the image.
    pub fn nearest(&self, pixel: &Vector2<f64>) -> Option<f64> {
        let x = pixel.x.round();
        let y = pixel.y.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        let d = self.get(x as u32, y as u32);
        (d > 0.0).then_some(d)
    }
}

/// A perspective cut-out of a panorama with its depth.
#[derive(Debug, Clone)]
pub struct RectilinearView {
    pub image: GrayImage,
    pub depth: DepthImage,
    pub camera: PinholeCamera,
    /// World (panorama east-north-up) from camera.
    pub rotation: Rotation3<f64>,
    pub panorama_id: usize,
    pub yaw_slot: usize,
    pub geotag: GeoPoint,
}

/// Back-projects every output pixel onto the panorama sphere and samples it
/// bilinearly.
pub fn render_rectilinear(
    panorama: &PanoramaImage,
    camera: &PinholeCamera,
    rotation: &Rotation3<f64>,
) -> RgbImage {
    let (w, h) = (camera.width, camera.height);
    let mut buf = vec![0u8; (w * h * 3) as usize];
    buf.par_chunks_mut((w * 3) as usize)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w as usize {
                let ray = rotation * camera.unproject(&Vector2::new(x as f64, y as f64));
                let rgb = panorama.sample(&ray);
                for c in 0..3 {
                    row[x * 3 + c] = rgb[c].round().clamp(0.0, 255.0) as u8;
                }
            }
        });
    RgbImage::from_raw(w, h, buf).expect("buffer sized for image")
}

/// Nearest-neighbor plane lookup followed by exact ray-plane intersection.
/// Grazing rays and missing planes give 0.
pub fn render_depth(
    depthmap: &PlanarDepthMap,
    heading: f64,
    camera: &PinholeCamera,
    rotation: &Rotation3<f64>,
) -> DepthImage {
    let index = render_plane_index(depthmap, heading, camera, rotation);
    depth_from_plane_index(depthmap.planes(), &index, camera, rotation)
}

/// Plane index seen by each view pixel (row-major, 0 for none).
pub fn render_plane_index(
    depthmap: &PlanarDepthMap,
    heading: f64,
    camera: &PinholeCamera,
    rotation: &Rotation3<f64>,
) -> Vec<u16> {
    let w = camera.width as usize;
    let grid = depthmap.grid(heading);
    let mut out = vec![0u16; w * camera.height as usize];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, idx) in row.iter_mut().enumerate() {
            let ray = rotation * camera.unproject(&Vector2::new(x as f64, y as f64));
            let (c, r) = grid.nearest(&ray.normalize());
            *idx = depthmap.index_at(c, r);
        }
    });
    out
}

/// Intersects each view ray with the plane named by `index`. Indices out of
/// range, grazing rays and planes facing away give 0.
pub fn depth_from_plane_index(
    planes: &[DepthPlane],
    index: &[u16],
    camera: &PinholeCamera,
    rotation: &Rotation3<f64>,
) -> DepthImage {
    let (w, h) = (camera.width, camera.height);
    let mut data = vec![0.0f64; (w * h) as usize];
    data.par_chunks_mut(w as usize)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let i = index.get(y * w as usize + x).copied().unwrap_or(0) as usize;
                let Some(plane) = i.checked_sub(1).and_then(|i| planes.get(i)) else {
                    continue;
                };
                let ray =
                    (rotation * camera.unproject(&Vector2::new(x as f64, y as f64))).normalize();
                let cos = plane.normal.dot(&ray);
                if cos <= -GRAZING_EPS {
                    *out = -plane.distance / cos;
                }
            }
        });
    DepthImage {
        width: w,
        height: h,
        data,
    }
}

/// Renders rig slot `slot` of a panorama into a grayscale view with depth.
pub fn render_view(
    panorama: &PanoramaImage,
    depthmap: &PlanarDepthMap,
    rig: &VirtualRig,
    slot: usize,
    panorama_id: usize,
) -> RectilinearView {
    let rotation = rig.rotation(slot);
    let rgb = render_rectilinear(panorama, &rig.camera, &rotation);
    let depth = render_depth(depthmap, panorama.heading(), &rig.camera, &rotation);
    RectilinearView {
        image: to_gray(&rgb),
        depth,
        camera: rig.camera,
        rotation,
        panorama_id,
        yaw_slot: slot,
        geotag: panorama.geotag,
    }
}

/// Rec. 601 luma.
pub fn to_gray(rgb: &RgbImage) -> GrayImage {
    GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let Rgb([r, g, b]) = *rgb.get_pixel(x, y);
        let l = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        image::Luma([l.round().clamp(0.0, 255.0) as u8])
    })
}
