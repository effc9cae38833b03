//! Synthetic street: two textured facades and a ground plane.
//!
//! The world frame is east-north-up at the street origin. The street runs
//! along compass azimuth `street_azimuth_deg`; "left" is to the left when
//! facing along it. Panoramas sit on the street axis, queries follow a path
//! parallel to it.

use std::fs;
use std::path::Path;

use image::RgbImage;
use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{
    load_dataset, save_manifest, write_depth_map, Dataset, DatasetManifest, GroundTruth,
    PanoramaEntry, QueryEntry, DATASET_FORMAT_VERSION,
};
use super::texture::{Side, StreetTexture, SKY};
use super::IngestError;
use crate::geo::{offset_to_geo, GeoPoint, LambertProjection};
use crate::geometry::{
    camera_rotation, DepthPlane, EquirectGrid, PanoramaImage, PinholeCamera, PlanarDepthMap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryTrajectory {
    pub count: usize,
    /// Along-street position of the first query, meters.
    pub start: f64,
    pub spacing: f64,
    /// Offset to the left of the panorama line, meters.
    pub lateral_offset: f64,
    pub height: f64,
    /// Viewing direction relative to the street direction, degrees
    /// clockwise.
    pub yaw_offset_deg: f64,
    /// Uniform per-frame yaw perturbation, ± degrees.
    pub yaw_jitter_deg: f64,
    pub pitch_deg: f64,
}

impl Default for QueryTrajectory {
    fn default() -> Self {
        Self {
            count: 100,
            start: 1.5,
            spacing: 3.0,
            lateral_offset: 3.0,
            height: 2.5,
            yaw_offset_deg: -45.0,
            yaw_jitter_deg: 3.0,
            pitch_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gaussian image noise on query frames, gray levels.
    pub pixel_sigma: f64,
    /// Gaussian perturbation of stored plane distances, meters.
    pub depth_plane_jitter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 1.0,
            depth_plane_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneConfig {
    pub street_length: f64,
    pub panorama_spacing: f64,
    pub street_azimuth_deg: f64,
    /// Distance from the street axis to each facade.
    pub half_width: f64,
    pub facade_height: f64,
    /// Facades extend this far past both ends of the street.
    pub facade_margin: f64,
    pub camera_height: f64,
    pub origin: GeoPoint,
    pub texture_seed: u64,
    /// Width of texture edges in pixel footprints; larger is smoother.
    pub texture_softness: f64,
    pub panorama_width: u32,
    pub depth_width: u32,
    pub query_camera: PinholeCamera,
    pub query: QueryTrajectory,
    pub noise: NoiseConfig,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            street_length: 300.0,
            panorama_spacing: 10.0,
            street_azimuth_deg: 90.0,
            half_width: 12.0,
            facade_height: 18.0,
            facade_margin: 80.0,
            camera_height: 2.5,
            origin: GeoPoint {
                lat: 48.801631,
                lon: 2.131509,
                alt: 0.0,
            },
            texture_seed: 1,
            texture_softness: 2.0,
            panorama_width: 3072,
            depth_width: 512,
            query_camera: PinholeCamera {
                fx: 490.0,
                fy: 490.0,
                cx: 255.5,
                cy: 191.5,
                width: 512,
                height: 384,
            },
            query: QueryTrajectory::default(),
            noise: NoiseConfig::default(),
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |reason: &str| Err(IngestError::invariant("synthetic config", reason));
        if !(self.panorama_spacing > 0.0) {
            return bad("panorama_spacing must be positive");
        }
        if !(self.street_length >= 0.0) {
            return bad("street_length must be non-negative");
        }
        if !(self.half_width > self.query.lateral_offset.abs()) {
            return bad("queries must stay between the facades");
        }
        if !(self.camera_height > 0.0 && self.query.height > 0.0 && self.facade_height > 0.0) {
            return bad("heights must be positive");
        }
        if self.panorama_width < 8
            || !self.panorama_width.is_multiple_of(2)
            || self.depth_width < 4
            || !self.depth_width.is_multiple_of(2)
        {
            return bad("panorama and depth widths must be even and at least 8 and 4");
        }
        if !(self.texture_softness > 0.0) {
            return bad("texture_softness must be positive");
        }
        if !(self.noise.pixel_sigma >= 0.0 && self.noise.depth_plane_jitter >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        self.origin
            .validate()
            .map_err(|e| IngestError::invariant("synthetic config", e.to_string()))?;
        self.query_camera
            .validate()
            .map_err(|e| IngestError::invariant("synthetic config", e.to_string()))
    }
}

/// Ground truth of one query frame in the street frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryPose {
    pub position: Vector3<f64>,
    pub world_from_camera: Rotation3<f64>,
    pub geotag: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Surface {
    Ground,
    Facade(Side),
}

impl Surface {
    fn plane_index(self) -> u16 {
        match self {
            Surface::Ground => 1,
            Surface::Facade(Side::Left) => 2,
            Surface::Facade(Side::Right) => 3,
        }
    }
}

struct Hit {
    t: f64,
    surface: Surface,
    /// `|cos|` of the incidence angle.
    cos: f64,
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The scene and its camera placements for one configuration and seed.
#[derive(Debug, Clone)]
pub struct SyntheticStreet {
    config: SyntheticSceneConfig,
    seed: u64,
    texture: StreetTexture,
    along: Vector3<f64>,
    left: Vector3<f64>,
    projection: LambertProjection,
}

impl SyntheticStreet {
    pub fn new(config: SyntheticSceneConfig, seed: u64) -> Result<Self, IngestError> {
        config.validate()?;
        let az = config.street_azimuth_deg.to_radians();
        let along = Vector3::new(az.sin(), az.cos(), 0.0);
        let left = Vector3::z().cross(&along);
        let texture = StreetTexture::new(
            config.texture_seed,
            -config.facade_margin,
            config.street_length + config.facade_margin,
            config.facade_height,
            config.texture_softness,
        );
        Ok(Self {
            config,
            seed,
            texture,
            along,
            left,
            projection: LambertProjection::default(),
        })
    }

    pub fn config(&self) -> &SyntheticSceneConfig {
        &self.config
    }

    pub fn panorama_count(&self) -> usize {
        (self.config.street_length / self.config.panorama_spacing + 1e-9).floor() as usize + 1
    }

    pub fn panorama_center(&self, i: usize) -> Vector3<f64> {
        self.along * (i as f64 * self.config.panorama_spacing)
            + Vector3::z() * self.config.camera_height
    }

    pub fn panorama_geotag(&self, i: usize) -> GeoPoint {
        offset_to_geo(
            &self.config.origin,
            &self.panorama_center(i),
            &self.projection,
        )
        .expect("origin validated")
    }

    /// Panoramas face along the street.
    pub fn panorama_heading(&self) -> f64 {
        self.config
            .street_azimuth_deg
            .to_radians()
            .rem_euclid(std::f64::consts::TAU)
    }

    fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let c = &self.config;
        let (ou, ow, oz) = (self.along.dot(origin), self.left.dot(origin), origin.z);
        let (du, dw, dz) = (self.along.dot(dir), self.left.dot(dir), dir.z);
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, surface: Surface, cos: f64| {
            if t > 0.0 && best.as_ref().is_none_or(|b| t < b.t) {
                best = Some(Hit { t, surface, cos });
            }
        };
        if dz < -1e-12 {
            consider(-oz / dz, Surface::Ground, -dz);
        }
        for (side, wall) in [(Side::Left, c.half_width), (Side::Right, -c.half_width)] {
            if dw * wall <= 0.0 || dw.abs() < 1e-12 {
                continue;
            }
            let t = (wall - ow) / dw;
            let (u, z) = (ou + t * du, oz + t * dz);
            let inside = (0.0..=c.facade_height).contains(&z)
                && (-c.facade_margin..=c.street_length + c.facade_margin).contains(&u);
            if inside {
                consider(t, Surface::Facade(side), dw.abs());
            }
        }
        best
    }

    /// Radiance seen along `dir` by a pixel subtending `pixel_angle`.
    fn shade(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, pixel_angle: f64) -> [f64; 3] {
        let Some(hit) = self.trace(origin, dir) else {
            return SKY;
        };
        let p = origin + dir * hit.t;
        let footprint = hit.t * pixel_angle / hit.cos.max(0.05);
        let u = self.along.dot(&p);
        match hit.surface {
            Surface::Ground => {
                self.texture
                    .ground(u, self.left.dot(&p), self.config.half_width, footprint)
            }
            Surface::Facade(side) => self.texture.facade(side, u, p.z, footprint),
        }
    }

    pub fn render_panorama(&self, i: usize) -> PanoramaImage {
        let w = self.config.panorama_width;
        let h = w / 2;
        let heading = self.panorama_heading();
        let grid = EquirectGrid::new(w, h, heading);
        let center = self.panorama_center(i);
        let pixel_angle = std::f64::consts::TAU / w as f64;
        let mut buf = vec![0u8; (w * h * 3) as usize];
        buf.par_chunks_mut((w * 3) as usize)
            .enumerate()
            .for_each(|(r, row)| {
                for c in 0..w as usize {
                    let dir = grid.pixel_to_direction(c as f64, r as f64);
                    let rgb = self.shade(&center, &dir, pixel_angle);
                    for k in 0..3 {
                        row[c * 3 + k] = rgb[k].round().clamp(0.0, 255.0) as u8;
                    }
                }
            });
        let img = RgbImage::from_raw(w, h, buf).expect("sized buffer");
        PanoramaImage::new(img, self.panorama_geotag(i), heading).expect("width is twice height")
    }

    /// Exact plane-encoded depth of panorama `i`: ground, left facade and
    /// right facade, in the panorama's east-north-up frame.
    pub fn depth_map(&self, i: usize) -> PlanarDepthMap {
        let c = &self.config;
        let w = c.depth_width;
        let h = w / 2;
        let center = self.panorama_center(i);
        let lateral = self.left.dot(&center);
        let mut distances = [
            c.camera_height,
            c.half_width - lateral,
            c.half_width + lateral,
        ];
        if c.noise.depth_plane_jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0x0de9_0000 + i as u64));
            let normal = Normal::new(0.0, c.noise.depth_plane_jitter).expect("finite sigma");
            for d in &mut distances {
                *d = (*d + normal.sample(&mut rng)).max(0.05);
            }
        }
        let planes = vec![
            DepthPlane {
                normal: Vector3::z(),
                distance: distances[0],
            },
            DepthPlane {
                normal: -self.left,
                distance: distances[1],
            },
            DepthPlane {
                normal: self.left,
                distance: distances[2],
            },
        ];
        let grid = EquirectGrid::new(w, h, self.panorama_heading());
        let mut index = Vec::with_capacity((w * h) as usize);
        for r in 0..h {
            for col in 0..w {
                let dir = grid.pixel_to_direction(col as f64, r as f64);
                index.push(
                    self.trace(&center, &dir)
                        .map_or(0, |hit| hit.surface.plane_index()),
                );
            }
        }
        PlanarDepthMap::new(w, h, index, planes).expect("planes are unit and in front")
    }

    pub fn query_count(&self) -> usize {
        self.config.query.count
    }

    fn query_rng(&self, j: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed, 0x0901_0000 + j as u64))
    }

    pub fn query_pose(&self, j: usize) -> QueryPose {
        let q = &self.config.query;
        let s = q.start + j as f64 * q.spacing;
        let position = self.along * s + self.left * q.lateral_offset + Vector3::z() * q.height;
        let jitter = if q.yaw_jitter_deg > 0.0 {
            self.query_rng(j)
                .random_range(-q.yaw_jitter_deg..=q.yaw_jitter_deg)
        } else {
            0.0
        };
        let azimuth = (self.config.street_azimuth_deg + q.yaw_offset_deg + jitter).to_radians();
        let world_from_camera = camera_rotation(azimuth, q.pitch_deg.to_radians());
        let geotag = offset_to_geo(&self.config.origin, &position, &self.projection)
            .expect("origin validated");
        QueryPose {
            position,
            world_from_camera,
            geotag,
        }
    }

    /// Pinhole rendering with per-channel Gaussian noise.
    pub fn render_query(&self, j: usize) -> RgbImage {
        let cam = self.config.query_camera;
        let pose = self.query_pose(j);
        let pixel_angle = 1.0 / cam.fx;
        let mut buf = vec![0f64; (cam.width * cam.height * 3) as usize];
        buf.par_chunks_mut((cam.width * 3) as usize)
            .enumerate()
            .for_each(|(y, row)| {
                for x in 0..cam.width as usize {
                    let ray = (pose.world_from_camera
                        * cam.unproject(&Vector2::new(x as f64, y as f64)))
                    .normalize();
                    row[x * 3..x * 3 + 3].copy_from_slice(&self.shade(
                        &pose.position,
                        &ray,
                        pixel_angle,
                    ));
                }
            });
        let sigma = self.config.noise.pixel_sigma;
        if sigma > 0.0 {
            let mut rng = self.query_rng(j);
            // Skip the draw used for the yaw jitter.
            let _: f64 = rng.random();
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            buf.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        let bytes = buf
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(cam.width, cam.height, bytes).expect("sized buffer")
    }

    /// Surface seen by each query pixel (0 sky, then plane indices).
    #[cfg(test)]
    fn query_surfaces(&self, j: usize) -> Vec<u16> {
        let cam = self.config.query_camera;
        let pose = self.query_pose(j);
        let mut out = Vec::with_capacity((cam.width * cam.height) as usize);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let ray = (pose.world_from_camera
                    * cam.unproject(&Vector2::new(x as f64, y as f64)))
                .normalize();
                out.push(
                    self.trace(&pose.position, &ray)
                        .map_or(0, |h| h.surface.plane_index()),
                );
            }
        }
        out
    }

    pub fn pano_id(i: usize) -> String {
        format!("pano_{i:04}")
    }

    pub fn frame_id(j: usize) -> String {
        format!("frame_{j:04}")
    }

    /// Renders everything into `out` and returns the written manifest.
    pub fn write(&self, out: &Path) -> Result<DatasetManifest, IngestError> {
        for sub in ["panoramas", "depth", "queries"] {
            let d = out.join(sub);
            fs::create_dir_all(&d).map_err(|e| IngestError::io(&d, e))?;
        }
        let panoramas = (0..self.panorama_count())
            .into_par_iter()
            .map(|i| {
                let id = Self::pano_id(i);
                let pano = self.render_panorama(i);
                let image = format!("panoramas/{id}.png");
                let path = out.join(&image);
                pano.pixels()
                    .save(&path)
                    .map_err(|e| IngestError::io(&path, e))?;
                write_depth_map(&out.join("depth"), &id, &self.depth_map(i))?;
                Ok(PanoramaEntry {
                    pano_id: id.clone(),
                    image,
                    depth: format!("depth/{id}.json"),
                    geotag: pano.geotag,
                    heading: pano.heading(),
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        let queries = (0..self.query_count())
            .into_par_iter()
            .map(|j| {
                let id = Self::frame_id(j);
                let image = format!("queries/{id}.png");
                let path = out.join(&image);
                self.render_query(j)
                    .save(&path)
                    .map_err(|e| IngestError::io(&path, e))?;
                let pose = self.query_pose(j);
                Ok(QueryEntry {
                    frame_id: id,
                    image,
                    ground_truth: Some(GroundTruth {
                        geotag: pose.geotag,
                        position: Some(pose.position),
                        rotation: Some(pose.world_from_camera),
                    }),
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            route_start_hint: panoramas.first().map(|p| p.pano_id.clone()),
            panoramas,
            queries,
            query_camera: Some(self.config.query_camera),
            enu_origin: Some(self.config.origin),
        };
        save_manifest(&out.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

/// Generates the synthetic street into `out` and loads it back.
pub fn generate_synthetic_street(
    config: &SyntheticSceneConfig,
    seed: u64,
    out: &Path,
) -> Result<Dataset, IngestError> {
    let street = SyntheticStreet::new(config.clone(), seed)?;
    street.write(out)?;
    load_dataset(&out.join("manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::wgs84_to_lambert;
    use crate::geometry::{render_view, VirtualRig};

    fn small() -> SyntheticSceneConfig {
        SyntheticSceneConfig {
            street_length: 100.0,
            panorama_width: 512,
            depth_width: 128,
            query: QueryTrajectory {
                count: 3,
                ..QueryTrajectory::default()
            },
            query_camera: PinholeCamera::new(80.0, 80.0, 31.5, 23.5, 64, 48).unwrap(),
            ..SyntheticSceneConfig::default()
        }
    }

    #[test]
    fn panorama_count_follows_spacing() {
        let s = SyntheticStreet::new(small(), 0).unwrap();
        assert_eq!(s.panorama_count(), 11);
        let mut c = small();
        c.panorama_spacing = 0.0;
        assert!(SyntheticStreet::new(c, 0).is_err());
    }

    #[test]
    fn geotags_recover_spacing() {
        let s = SyntheticStreet::new(SyntheticSceneConfig::default(), 0).unwrap();
        let proj = LambertProjection::default();
        let pts: Vec<_> = (0..s.panorama_count())
            .map(|i| wgs84_to_lambert(&s.panorama_geotag(i), &proj).unwrap())
            .collect();
        for w in pts.windows(2) {
            assert!((w[0].distance(&w[1]) - 10.0).abs() < 1e-3);
        }
    }

    #[test]
    fn depth_maps_match_scene_geometry() {
        let s = SyntheticStreet::new(small(), 0).unwrap();
        let d = s.depth_map(3);
        let grid = d.grid(s.panorama_heading());
        // Straight down hits the ground at camera height; straight left hits
        // the left facade at the half width.
        let down = Vector3::new(0.0, 0.0, -1.0);
        let (c, r) = grid.nearest(&down);
        assert_eq!(d.index_at(c, r), 1);
        let left = s.left;
        let (c, r) = grid.nearest(&left);
        assert_eq!(d.index_at(c, r), 2);
        let p = &d.planes()[1];
        let point = left * p.distance;
        assert!((p.normal.dot(&point) + p.distance).abs() < 1e-12);
        assert!((p.distance - 12.0).abs() < 1e-12);
        let (c, r) = grid.nearest(&Vector3::z());
        assert_eq!(d.index_at(c, r), 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut cfg = small();
        cfg.noise.depth_plane_jitter = 0.1;
        let a = SyntheticStreet::new(cfg.clone(), 9).unwrap();
        let b = SyntheticStreet::new(cfg, 9).unwrap();
        assert_eq!(a.render_panorama(2).pixels(), b.render_panorama(2).pixels());
        assert_eq!(a.depth_map(2), b.depth_map(2));
        assert_eq!(a.render_query(1), b.render_query(1));
        assert_eq!(a.query_pose(1), b.query_pose(1));
    }

    #[test]
    fn query_at_panorama_center_matches_rectilinear_view() {
        // Bilinear resampling error scales with the texture's curvature, so
        // the two-level bound is checked on content blurred over ten pixels.
        let mut cfg = SyntheticSceneConfig {
            street_length: 20.0,
            texture_softness: 10.0,
            ..SyntheticSceneConfig::default()
        };
        cfg.query = QueryTrajectory {
            count: 1,
            start: 10.0,
            lateral_offset: 0.0,
            height: cfg.camera_height,
            yaw_offset_deg: -45.0,
            yaw_jitter_deg: 0.0,
            ..QueryTrajectory::default()
        };
        cfg.noise.pixel_sigma = 0.0;
        let s = SyntheticStreet::new(cfg, 0).unwrap();
        let pano = s.render_panorama(1);
        let rig = VirtualRig::eight_way(s.config().query_camera);
        // Street azimuth 90° minus 45° is rig slot 1.
        let view = render_view(&pano, &s.depth_map(1), &rig, 1, 1);
        let query = crate::geometry::to_gray(&s.render_query(0));
        // Bilinear interpolation has no error bound across an occlusion or
        // horizon step, so pixels within two of a surface change are left out.
        let surf = s.query_surfaces(0);
        let (w, h) = (query.width() as i64, query.height() as i64);
        let near_edge = |x: i64, y: i64| {
            let me = surf[(y * w + x) as usize];
            (-2..=2).any(|dy| {
                (-2..=2).any(|dx| {
                    let (u, v) = (x + dx, y + dy);
                    u >= 0 && v >= 0 && u < w && v < h && surf[(v * w + u) as usize] != me
                })
            })
        };
        let mut max = 0;
        let mut checked = 0;
        for y in 0..h {
            for x in 0..w {
                if near_edge(x, y) {
                    continue;
                }
                checked += 1;
                let a = query.get_pixel(x as u32, y as u32).0[0] as i32;
                let b = view.image.get_pixel(x as u32, y as u32).0[0] as i32;
                max = max.max((a - b).abs());
            }
        }
        assert!(checked > (w * h) as usize * 9 / 10);
        assert!(max <= 2, "max difference {max}");
    }

    #[test]
    fn writes_loadable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.street_length = 10.0;
        let ds = generate_synthetic_street(&cfg, 1, dir.path()).unwrap();
        assert_eq!(ds.panoramas.len(), 2);
        assert_eq!(ds.queries.len(), 3);
        assert_eq!(
            ds.load_panorama(1).unwrap().pixels(),
            s_pano(&cfg, 1).pixels()
        );
        let gt = ds.queries[0].entry.ground_truth.as_ref().unwrap();
        assert!((gt.position.unwrap() - Vector3::new(1.5, 3.0, 2.5)).norm() < 1e-12);
        assert_eq!(
            ds.panoramas[0].depth,
            SyntheticStreet::new(cfg, 1).unwrap().depth_map(0)
        );
    }

    fn s_pano(cfg: &SyntheticSceneConfig, i: usize) -> PanoramaImage {
        SyntheticStreet::new(cfg.clone(), 1)
            .unwrap()
            .render_panorama(i)
    }
}
