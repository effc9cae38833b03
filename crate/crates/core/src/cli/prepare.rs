//! Rendering of the rectilinear view store.
//!
//! Layout under the store directory:
//! `views.jsonl` (one [`ViewRecord`] per view, database order) and
//! `views/<pano_id>_<slot>.{png,feat}` plus `_planes.png`, a 16-bit image
//! of the plane index seen by each view pixel. Depth is recovered at load
//! time by intersecting each pixel ray with the recorded plane, so the
//! store carries exact depth without storing floats.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use image::{ImageBuffer, Luma};
use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, read_jsonl, require, write_jsonl, CliError, PipelineConfig};
use crate::features::{equalize_histogram, extract_features, ImageFeatures};
use crate::geo::GeoPoint;
use crate::geometry::{
    depth_from_plane_index, render_plane_index, render_rectilinear, to_gray, DepthPlane,
    PinholeCamera, RectilinearView,
};
use crate::ingest::{load_dataset, load_features, save_features, Dataset};
use crate::retrieval::ViewInfo;

pub const VIEWS_FILE: &str = "views.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub pano_index: usize,
    pub pano_id: String,
    pub yaw_slot: usize,
    pub geotag: GeoPoint,
    pub heading: f64,
    pub camera: PinholeCamera,
    /// View camera to panorama east-north-up.
    pub rotation: Rotation3<f64>,
    /// Plane table of the source panorama.
    pub planes: Vec<DepthPlane>,
    pub image: String,
    pub plane_index: String,
    pub features: String,
    pub local_count: usize,
    pub region_count: usize,
    /// Hash of the inputs this view was rendered from.
    pub fingerprint: u32,
}

impl ViewRecord {
    pub fn info(&self) -> ViewInfo {
        ViewInfo {
            pano_index: self.pano_index,
            pano_id: self.pano_id.clone(),
            yaw_slot: self.yaw_slot,
            geotag: self.geotag,
            heading: self.heading,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub views: usize,
    pub rendered: usize,
    pub skipped: usize,
}

/// A prepared view store opened for reading.
#[derive(Debug, Clone)]
pub struct ViewStore {
    pub root: PathBuf,
    pub views: Vec<ViewRecord>,
}

impl ViewStore {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        let index = root.join(VIEWS_FILE);
        require(&index, "prepare")?;
        let views: Vec<ViewRecord> = read_jsonl(&index)?;
        Ok(Self {
            root: root.to_path_buf(),
            views,
        })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn features(&self, i: usize) -> Result<ImageFeatures, CliError> {
        Ok(load_features(&self.root.join(&self.views[i].features))?)
    }

    /// The view image and its per-pixel depth.
    pub fn view(&self, i: usize) -> Result<RectilinearView, CliError> {
        let rec = &self.views[i];
        let img_path = self.root.join(&rec.image);
        let image = image::open(&img_path)
            .map_err(|e| CliError::format(&img_path, e))?
            .into_luma8();
        let idx_path = self.root.join(&rec.plane_index);
        let index = image::open(&idx_path)
            .map_err(|e| CliError::format(&idx_path, e))?
            .into_luma16();
        let dims = (rec.camera.width, rec.camera.height);
        if image.dimensions() != dims || index.dimensions() != dims {
            return Err(CliError::format(
                &img_path,
                "view size differs from its camera",
            ));
        }
        let depth = depth_from_plane_index(&rec.planes, index.as_raw(), &rec.camera, &rec.rotation);
        Ok(RectilinearView {
            image,
            depth,
            camera: rec.camera,
            rotation: rec.rotation,
            panorama_id: rec.pano_index,
            yaw_slot: rec.yaw_slot,
            geotag: rec.geotag,
        })
    }
}

fn file_stamp(path: &Path) -> (u64, u128) {
    std::fs::metadata(path)
        .map(|m| {
            let t = m
                .modified()
                .ok()
                .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                .map_or(0, |d| d.as_nanos());
            (m.len(), t)
        })
        .unwrap_or((0, 0))
}

fn fingerprint(config: &PipelineConfig, dataset: &Dataset, i: usize) -> u32 {
    let rec = &dataset.panoramas[i];
    let depth_path = dataset.root.join(&rec.entry.depth);
    let mut h = crc32fast::Hasher::new();
    h.update(
        serde_json::to_string(&config.rig)
            .expect("serializable")
            .as_bytes(),
    );
    h.update(
        serde_json::to_string(&config.features)
            .expect("serializable")
            .as_bytes(),
    );
    h.update(
        serde_json::to_string(&rec.entry)
            .expect("serializable")
            .as_bytes(),
    );
    for p in [&rec.image_path, &depth_path] {
        let (len, t) = file_stamp(p);
        h.update(&len.to_le_bytes());
        h.update(&t.to_le_bytes());
    }
    h.finalize()
}

fn up_to_date(out: &Path, views: &[ViewRecord], fp: u32) -> bool {
    views.iter().all(|v| {
        v.fingerprint == fp
            && [&v.image, &v.plane_index, &v.features]
                .iter()
                .all(|f| out.join(f).is_file())
    })
}

fn render_panorama_views(
    config: &PipelineConfig,
    dataset: &Dataset,
    i: usize,
    fp: u32,
    out: &Path,
) -> Result<Vec<ViewRecord>, CliError> {
    let rig = config.rig.rig()?;
    let rec = &dataset.panoramas[i];
    let pano = dataset.load_panorama(i)?;
    let mut views = Vec::with_capacity(rig.len());
    for slot in 0..rig.len() {
        let rotation = rig.rotation(slot);
        let gray = to_gray(&render_rectilinear(&pano, &rig.camera, &rotation));
        let index = render_plane_index(&rec.depth, pano.heading(), &rig.camera, &rotation);
        let features = extract_features(&equalize_histogram(&gray), &config.features);

        let stem = format!("views/{}_{slot}", rec.entry.pano_id);
        let (image, plane_index, feat) = (
            format!("{stem}.png"),
            format!("{stem}_planes.png"),
            format!("{stem}.feat"),
        );
        let p = out.join(&image);
        gray.save(&p).map_err(|e| CliError::io(&p, e))?;
        let idx: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(rig.camera.width, rig.camera.height, index).expect("sized index");
        let p = out.join(&plane_index);
        idx.save(&p).map_err(|e| CliError::io(&p, e))?;
        save_features(&out.join(&feat), &features)?;

        views.push(ViewRecord {
            pano_index: i,
            pano_id: rec.entry.pano_id.clone(),
            yaw_slot: slot,
            geotag: rec.entry.geotag,
            heading: rec.entry.heading,
            camera: rig.camera,
            rotation,
            planes: rec.depth.planes().to_vec(),
            image,
            plane_index,
            features: feat,
            local_count: features.local.len(),
            region_count: features.region.len(),
            fingerprint: fp,
        });
    }
    Ok(views)
}

/// Renders every rig view of every panorama, with features, into `out`.
/// Panoramas whose inputs and settings are unchanged since the last run are
/// skipped.
pub fn cmd_prepare(
    dataset_path: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<PrepareReport, CliError> {
    config.validate()?;
    let dataset = load_dataset(dataset_path)?;
    let per_pano = config.rig.yaws_deg.len();
    create_dir(&out.join("views"))?;
    let index_path = out.join(VIEWS_FILE);
    let mut previous: HashMap<String, Vec<ViewRecord>> = HashMap::new();
    if index_path.is_file() {
        // An unreadable index just means everything is rebuilt.
        if let Ok(old) = read_jsonl::<ViewRecord>(&index_path) {
            for v in old {
                previous.entry(v.pano_id.clone()).or_default().push(v);
            }
        }
    }

    let results: Vec<Result<(Vec<ViewRecord>, bool), CliError>> = (0..dataset.panoramas.len())
        .into_par_iter()
        .map(|i| {
            let fp = fingerprint(config, &dataset, i);
            let id = &dataset.panoramas[i].entry.pano_id;
            if let Some(old) = previous.get(id) {
                if old.len() == per_pano
                    && old.iter().all(|v| v.pano_index == i)
                    && up_to_date(out, old, fp)
                {
                    let mut old = old.clone();
                    old.sort_by_key(|v| v.yaw_slot);
                    return Ok((old, true));
                }
            }
            Ok((render_panorama_views(config, &dataset, i, fp, out)?, false))
        })
        .collect();

    let mut report = PrepareReport {
        views: 0,
        rendered: 0,
        skipped: 0,
    };
    let mut views = Vec::new();
    for r in results {
        let (v, skipped) = r?;
        if skipped {
            report.skipped += v.len();
        } else {
            report.rendered += v.len();
        }
        views.extend(v);
    }
    report.views = views.len();
    write_jsonl(&index_path, &views)?;
    Ok(report)
}
