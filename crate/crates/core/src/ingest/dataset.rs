use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma};
use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::geo::GeoPoint;
use crate::geometry::{to_gray, DepthPlane, PanoramaImage, PinholeCamera, PlanarDepthMap};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanoramaEntry {
    pub pano_id: String,
    /// Equirectangular RGB image, relative to the manifest directory.
    pub image: String,
    /// Depth map description (JSON), relative to the manifest directory.
    pub depth: String,
    pub geotag: GeoPoint,
    /// Compass azimuth of the panorama's center column, radians.
    pub heading: f64,
}

/// Where a query camera really was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub geotag: GeoPoint,
    /// Camera center in the east-north-up frame at the manifest's
    /// `enu_origin`, when known.
    #[serde(default)]
    pub position: Option<Vector3<f64>>,
    /// World-from-camera rotation in the same frame.
    #[serde(default)]
    pub rotation: Option<Rotation3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryEntry {
    pub frame_id: String,
    pub image: String,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Panoramas in route order.
    pub panoramas: Vec<PanoramaEntry>,
    /// Query frames in capture order.
    #[serde(default)]
    pub queries: Vec<QueryEntry>,
    #[serde(default)]
    pub query_camera: Option<PinholeCamera>,
    #[serde(default)]
    pub route_start_hint: Option<String>,
    #[serde(default)]
    pub enu_origin: Option<GeoPoint>,
}

/// On-disk depth map: plane table plus a 16-bit PNG of plane indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthFile {
    pub width: u32,
    pub height: u32,
    pub planes: Vec<DepthPlane>,
    /// Index image, relative to the depth file's directory.
    pub index: String,
}

#[derive(Debug, Clone)]
pub struct PanoramaRecord {
    pub entry: PanoramaEntry,
    pub depth: PlanarDepthMap,
    pub image_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct QueryRecord {
    pub entry: QueryEntry,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
}

/// A validated dataset. Depth maps are held in memory; panorama and query
/// images are decoded on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub panoramas: Vec<PanoramaRecord>,
    pub queries: Vec<QueryRecord>,
}

impl Dataset {
    pub fn load_panorama(&self, i: usize) -> Result<PanoramaImage, IngestError> {
        let rec = &self.panoramas[i];
        let record = &rec.entry.pano_id;
        let img = image::open(&rec.image_path)
            .map_err(|e| IngestError::format(record, format!("{}: {e}", rec.image_path.display())))?
            .to_rgb8();
        PanoramaImage::new(img, rec.entry.geotag, rec.entry.heading)
            .map_err(|e| IngestError::invariant(record, e.to_string()))
    }

    /// Grayscale (Rec. 601) query frame.
    pub fn load_query(&self, j: usize) -> Result<GrayImage, IngestError> {
        let rec = &self.queries[j];
        let img = image::open(&rec.image_path).map_err(|e| {
            IngestError::format(
                &rec.entry.frame_id,
                format!("{}: {e}", rec.image_path.display()),
            )
        })?;
        Ok(match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => to_gray(&other.to_rgb8()),
        })
    }

    pub fn pano_index(&self, pano_id: &str) -> Option<usize> {
        self.panoramas
            .iter()
            .position(|p| p.entry.pano_id == pano_id)
    }
}

fn resolve(root: &Path, rel: &str, record: &str) -> Result<PathBuf, IngestError> {
    let p = root.join(rel);
    if !p.is_file() {
        return Err(IngestError::MissingFile {
            record: record.to_string(),
            path: p.display().to_string(),
        });
    }
    Ok(p)
}

/// Reads a depth file and its index image.
pub fn read_depth_map(path: &Path, record: &str) -> Result<PlanarDepthMap, IngestError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IngestError::format(record, format!("{}: {e}", path.display())))?;
    let file: DepthFile = serde_json::from_str(&text)
        .map_err(|e| IngestError::format(record, format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let index_path = resolve(dir, &file.index, record)?;
    let img = image::open(&index_path)
        .map_err(|e| IngestError::format(record, format!("{}: {e}", index_path.display())))?
        .into_luma16();
    if img.dimensions() != (file.width, file.height) {
        return Err(IngestError::invariant(
            record,
            format!(
                "index image is {}×{}, depth file says {}×{}",
                img.width(),
                img.height(),
                file.width,
                file.height
            ),
        ));
    }
    PlanarDepthMap::new(file.width, file.height, img.into_raw(), file.planes)
        .map_err(|e| IngestError::invariant(record, e.to_string()))
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>_index.png`; returns the
/// JSON path.
pub fn write_depth_map(
    dir: &Path,
    stem: &str,
    depth: &PlanarDepthMap,
) -> Result<PathBuf, IngestError> {
    let index_name = format!("{stem}_index.png");
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width(), depth.height(), depth.plane_index().to_vec())
            .expect("sized index grid");
    let index_path = dir.join(&index_name);
    img.save(&index_path)
        .map_err(|e| IngestError::io(&index_path, e))?;
    let file = DepthFile {
        width: depth.width(),
        height: depth.height(),
        planes: depth.planes().to_vec(),
        index: index_name,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &file)?;
    Ok(path)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| IngestError::io(path, e))
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), IngestError> {
    write_json(path, manifest)
}

/// Parses the manifest and validates every referenced file.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, IngestError> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join("manifest.json")
    } else {
        manifest_path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|_| IngestError::MissingFile {
        record: "manifest".into(),
        path: manifest_path.display().to_string(),
    })?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| IngestError::format("manifest", e.to_string()))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(IngestError::format(
            "manifest",
            format!(
                "format version {} is not supported (expected {DATASET_FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }
    let root = manifest_path
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();

    let mut ids = HashSet::new();
    let mut panoramas = Vec::with_capacity(manifest.panoramas.len());
    for entry in &manifest.panoramas {
        let id = entry.pano_id.as_str();
        if !ids.insert(id) {
            return Err(IngestError::invariant(id, "duplicate pano_id"));
        }
        entry
            .geotag
            .validate()
            .map_err(|e| IngestError::invariant(id, e.to_string()))?;
        if !entry.heading.is_finite() {
            return Err(IngestError::invariant(id, "non-finite heading"));
        }
        let image_path = resolve(&root, &entry.image, id)?;
        let (w, h) = image::image_dimensions(&image_path)
            .map_err(|e| IngestError::format(id, format!("{}: {e}", image_path.display())))?;
        if w == 0 || w != 2 * h {
            return Err(IngestError::invariant(
                id,
                format!("panorama is {w}×{h}, width must be twice height"),
            ));
        }
        let depth_path = resolve(&root, &entry.depth, id)?;
        let depth = read_depth_map(&depth_path, id)?;
        panoramas.push(PanoramaRecord {
            entry: entry.clone(),
            depth,
            image_path,
        });
    }
    if let Some(hint) = &manifest.route_start_hint {
        if !ids.contains(hint.as_str()) {
            return Err(IngestError::invariant(
                "manifest",
                format!("route_start_hint {hint} is not a panorama"),
            ));
        }
    }
    if let Some(cam) = &manifest.query_camera {
        cam.validate()
            .map_err(|e| IngestError::invariant("query_camera", e.to_string()))?;
    }

    let mut frames = HashSet::new();
    let mut queries = Vec::with_capacity(manifest.queries.len());
    for entry in &manifest.queries {
        let id = entry.frame_id.as_str();
        if !frames.insert(id) {
            return Err(IngestError::invariant(id, "duplicate frame_id"));
        }
        if let Some(gt) = &entry.ground_truth {
            gt.geotag
                .validate()
                .map_err(|e| IngestError::invariant(id, e.to_string()))?;
        }
        let image_path = resolve(&root, &entry.image, id)?;
        let (width, height) = image::image_dimensions(&image_path)
            .map_err(|e| IngestError::format(id, format!("{}: {e}", image_path.display())))?;
        if let Some(cam) = &manifest.query_camera {
            if (width, height) != (cam.width, cam.height) {
                return Err(IngestError::invariant(
                    id,
                    format!(
                        "image is {width}×{height}, query camera is {}×{}",
                        cam.width, cam.height
                    ),
                ));
            }
        }
        queries.push(QueryRecord {
            entry: entry.clone(),
            image_path,
            width,
            height,
        });
    }
    Ok(Dataset {
        root,
        manifest,
        panoramas,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn plane(n: [f64; 3], d: f64) -> DepthPlane {
        DepthPlane {
            normal: Vector3::from(n),
            distance: d,
        }
    }

    /// Two 16×8 panoramas, each with a ground plane under half the grid.
    fn fixture(dir: &Path) -> DatasetManifest {
        let mut panoramas = Vec::new();
        for i in 0..2 {
            let id = format!("p{i}");
            RgbImage::from_pixel(16, 8, image::Rgb([i as u8 * 50, 10, 10]))
                .save(dir.join(format!("{id}.png")))
                .unwrap();
            let idx: Vec<u16> = (0..16 * 8).map(|k| u16::from(k >= 64)).collect();
            let depth = PlanarDepthMap::new(16, 8, idx, vec![plane([0.0, 0.0, 1.0], 2.5)]).unwrap();
            write_depth_map(dir, &format!("{id}_depth"), &depth).unwrap();
            panoramas.push(PanoramaEntry {
                pano_id: id.clone(),
                image: format!("{id}.png"),
                depth: format!("{id}_depth.json"),
                geotag: GeoPoint::new(48.8, 2.13 + i as f64 * 1e-4, 2.5).unwrap(),
                heading: 0.5,
            });
        }
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            panoramas,
            queries: vec![],
            query_camera: None,
            route_start_hint: Some("p0".into()),
            enu_origin: None,
        };
        save_manifest(&dir.join("manifest.json"), &manifest).unwrap();
        manifest
    }

    #[test]
    fn loads_valid_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = fixture(dir.path());
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.panoramas.len(), 2);
        assert_eq!(ds.manifest, manifest);
        assert_eq!(ds.panoramas[1].depth.index_at(3, 6), 1);
        let pano = ds.load_panorama(1).unwrap();
        assert_eq!(pano.pixels().get_pixel(0, 0).0, [50, 10, 10]);
        assert_eq!(ds.pano_index("p1"), Some(1));
    }

    #[test]
    fn non_unit_normal_is_an_invariant_violation() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let path = dir.path().join("p1_depth.json");
        let mut file: DepthFile =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        file.planes[0].normal = Vector3::new(0.0, 0.0, 1.5);
        write_json(&path, &file).unwrap();
        match load_dataset(dir.path()) {
            Err(IngestError::InvariantViolation { record, reason }) => {
                assert_eq!(record, "p1");
                assert!(reason.contains("plane 1"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn absent_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        fs::remove_file(dir.path().join("p0.png")).unwrap();
        match load_dataset(dir.path()) {
            Err(IngestError::MissingFile { record, path }) => {
                assert_eq!(record, "p0");
                assert!(path.ends_with("p0.png"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_manifest_and_bad_hint() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = fixture(dir.path());
        manifest.route_start_hint = Some("nope".into());
        save_manifest(&dir.path().join("manifest.json"), &manifest).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(IngestError::InvariantViolation { .. })
        ));
        fs::write(
            dir.path().join("manifest.json"),
            "{\"format_version\": 1, \"extra\": 2}",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(IngestError::FormatError { .. })
        ));
    }
}
