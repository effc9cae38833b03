//! Python bindings: poses, cameras, the geodetic helpers, PnP, and the
//! pipeline commands. Pipeline results come back as plain dicts and lists
//! (the same JSON the command-line tool writes).

use std::path::PathBuf;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use streetloc_core::cli::{self, PipelineConfig};
use streetloc_core::geo::{self, GeoPoint, LambertProjection, PlanePoint};
use streetloc_core::geometry::PinholeCamera;
use streetloc_core::ingest;
use streetloc_core::pose::{self, Correspondence3D2D, PoseSE3, RobustConfig};

create_exception!(streetloc, StreetlocError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    StreetlocError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Rigid transform; maps source coordinates into target coordinates.
#[pyclass(name = "Pose", module = "streetloc", frozen)]
#[derive(Clone)]
struct PyPose(PoseSE3);

#[pymethods]
impl PyPose {
    /// `rotation` is a 3×3 row-major matrix.
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Self {
        let m = Matrix3::from_fn(|r, c| rotation[r][c]);
        Self(PoseSE3::from_matrix(&m, Vector3::from(translation)))
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(PoseSE3::identity())
    }

    /// Quaternion given as `(w, x, y, z)`.
    #[staticmethod]
    fn from_quaternion(quaternion: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        let [w, x, y, z] = quaternion;
        let q = Quaternion::new(w, x, y, z);
        if q.norm().is_nan() || q.norm() <= 0.0 {
            return Err(PyValueError::new_err("quaternion must be non-zero"));
        }
        Ok(Self(PoseSE3::from_quaternion(
            UnitQuaternion::from_quaternion(q),
            Vector3::from(translation),
        )))
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let m = self.0.rotation().into_inner();
        [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[(r, c)]))
    }

    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        (*self.0.translation()).into()
    }

    /// Camera center when the pose maps world to camera.
    fn center(&self) -> [f64; 3] {
        self.0.center().into()
    }

    fn transform(&self, point: [f64; 3]) -> [f64; 3] {
        self.0.transform(&Vector3::from(point)).into()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ other`: applies `other` first.
    fn compose(&self, other: &PyPose) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn rotation_distance(&self, other: &PyPose) -> f64 {
        self.0.rotation_distance(&other.0)
    }

    fn translation_distance(&self, other: &PyPose) -> f64 {
        self.0.translation_distance(&other.0)
    }

    fn __repr__(&self) -> String {
        let q = self.quaternion();
        let t = self.translation();
        format!("Pose(quaternion={q:?}, translation={t:?})")
    }
}

/// Pinhole intrinsics, right-down-forward camera frame.
#[pyclass(name = "Camera", module = "streetloc", frozen)]
#[derive(Clone)]
struct PyCamera(PinholeCamera);

#[pymethods]
impl PyCamera {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> PyResult<Self> {
        PinholeCamera::new(fx, fy, cx, cy, width, height)
            .map(Self)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        (self.0.width, self.0.height)
    }

    /// Pixel of a camera-frame point, or `None` behind the camera.
    fn project(&self, point: [f64; 3]) -> Option<(f64, f64)> {
        self.0.project(&Vector3::from(point)).map(|p| (p.x, p.y))
    }

    /// Camera-frame ray through a pixel, with unit forward component.
    fn unproject(&self, pixel: (f64, f64)) -> [f64; 3] {
        self.0.unproject(&Vector2::new(pixel.0, pixel.1)).into()
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!(
            "Camera(fx={}, fy={}, cx={}, cy={}, width={}, height={})",
            c.fx, c.fy, c.cx, c.cy, c.width, c.height
        )
    }
}

/// Pipeline configuration. Built from JSON text; missing keys take their
/// defaults, unknown keys are rejected.
#[pyclass(name = "Config", module = "streetloc")]
#[derive(Clone)]
struct PyConfig(PipelineConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json=None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let config: PipelineConfig = match json {
            Some(text) => {
                serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            None => PipelineConfig::default(),
        };
        config
            .validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self(config))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PipelineConfig::load(Some(&path)).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("serializable")
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }
}

fn config_or_default(config: Option<&PyConfig>) -> PipelineConfig {
    config.map(|c| c.0.clone()).unwrap_or_default()
}

fn geo_point(lat: f64, lon: f64, alt: f64) -> PyResult<GeoPoint> {
    GeoPoint::new(lat, lon, alt).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// WGS84 latitude/longitude (degrees) to Lambert-93 easting/northing (m).
#[pyfunction]
fn wgs84_to_lambert(lat: f64, lon: f64) -> PyResult<(f64, f64)> {
    let p = geo::wgs84_to_lambert(&geo_point(lat, lon, 0.0)?, &LambertProjection::default())
        .map_err(err)?;
    Ok((p.x, p.y))
}

/// Lambert-93 easting/northing (m) to WGS84 latitude/longitude (degrees).
#[pyfunction]
fn lambert_to_wgs84(x: f64, y: f64) -> PyResult<(f64, f64)> {
    let g =
        geo::lambert_to_wgs84(&PlanePoint { x, y }, &LambertProjection::default()).map_err(err)?;
    Ok((g.lat, g.lon))
}

/// Moves a geotag by an east-north-up offset in meters.
#[pyfunction]
fn offset_to_geo(origin: (f64, f64, f64), enu: [f64; 3]) -> PyResult<(f64, f64, f64)> {
    let o = geo_point(origin.0, origin.1, origin.2)?;
    let g =
        geo::offset_to_geo(&o, &Vector3::from(enu), &LambertProjection::default()).map_err(err)?;
    Ok((g.lat, g.lon, g.alt))
}

#[pyfunction]
fn tukey_rho(x: f64, t: f64) -> f64 {
    pose::tukey_rho(x, t)
}

/// Pose of the camera (camera from point frame) from 3D points and their
/// pixels, by P3P inside RANSAC. Returns the pose and the inlier indices.
#[pyfunction]
#[pyo3(signature = (points, pixels, camera, threshold=3.0, seed=0))]
fn solve_pnp(
    py: Python<'_>,
    points: Vec<[f64; 3]>,
    pixels: Vec<(f64, f64)>,
    camera: &PyCamera,
    threshold: f64,
    seed: u64,
) -> PyResult<(PyPose, Vec<usize>)> {
    if points.len() != pixels.len() {
        return Err(PyValueError::new_err("points and pixels differ in length"));
    }
    let corrs: Vec<Correspondence3D2D> = points
        .iter()
        .zip(&pixels)
        .map(|(p, px)| Correspondence3D2D {
            point: Vector3::from(*p),
            pixel: Vector2::new(px.0, px.1),
            source_view: 0,
        })
        .collect();
    let config = RobustConfig {
        ransac_threshold: threshold,
        seed,
        ..RobustConfig::default()
    };
    let cam = camera.0;
    let sol = py
        .detach(|| pose::solve_pnp_ransac(&corrs, &cam, &config))
        .map_err(err)?;
    Ok((PyPose(sol.pose), sol.inliers))
}

/// Writes a synthetic street dataset; returns the panorama and frame counts.
#[pyfunction]
#[pyo3(signature = (out, config=None, seed=None))]
fn synth(
    py: Python<'_>,
    out: PathBuf,
    config: Option<&PyConfig>,
    seed: Option<u64>,
) -> PyResult<(usize, usize)> {
    let c = config_or_default(config);
    let seed = seed.unwrap_or(c.seed);
    let ds = py
        .detach(|| ingest::generate_synthetic_street(&c.synthetic, seed, &out))
        .map_err(err)?;
    Ok((ds.panoramas.len(), ds.queries.len()))
}

#[pyfunction]
#[pyo3(signature = (dataset, out, config=None))]
fn prepare(
    py: Python<'_>,
    dataset: PathBuf,
    out: PathBuf,
    config: Option<&PyConfig>,
) -> PyResult<Py<PyAny>> {
    let c = config_or_default(config);
    let r = py
        .detach(|| cli::cmd_prepare(&dataset, &c, &out))
        .map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (store, out, config=None))]
fn build(
    py: Python<'_>,
    store: PathBuf,
    out: PathBuf,
    config: Option<&PyConfig>,
) -> PyResult<Py<PyAny>> {
    let c = config_or_default(config);
    let r = py
        .detach(|| cli::cmd_build(&store, &c, &out))
        .map_err(err)?;
    to_py(py, &r)
}

/// Localizes every query frame; returns one record dict per frame.
#[pyfunction]
#[pyo3(signature = (dataset, store, db, out, config=None, oracle_full_search=false))]
fn localize(
    py: Python<'_>,
    dataset: PathBuf,
    store: PathBuf,
    db: PathBuf,
    out: PathBuf,
    config: Option<&PyConfig>,
    oracle_full_search: bool,
) -> PyResult<Py<PyAny>> {
    let c = config_or_default(config);
    let r = py
        .detach(|| cli::cmd_localize(&dataset, &store, &db, &c, oracle_full_search, &out))
        .map_err(err)?;
    to_py(py, &r)
}

/// Scores a records file against the dataset's ground truth.
#[pyfunction]
#[pyo3(signature = (records, dataset, out, config=None))]
fn evaluate(
    py: Python<'_>,
    records: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
    config: Option<&PyConfig>,
) -> PyResult<Py<PyAny>> {
    let c = config_or_default(config);
    let r = py
        .detach(|| cli::cmd_eval(&records, &dataset, &c, &out))
        .map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
#[pyo3(name = "streetloc")]
fn streetloc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StreetlocError", m.py().get_type::<StreetlocError>())?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(wgs84_to_lambert, m)?)?;
    m.add_function(wrap_pyfunction!(lambert_to_wgs84, m)?)?;
    m.add_function(wrap_pyfunction!(offset_to_geo, m)?)?;
    m.add_function(wrap_pyfunction!(tukey_rho, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pnp, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(build, m)?)?;
    m.add_function(wrap_pyfunction!(localize, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_round_trips_through_python_types() {
        let p = PyPose::from_quaternion([0.9, 0.1, -0.2, 0.3], [1.0, 2.0, 3.0]).unwrap();
        let back = PyPose::new(p.rotation(), p.translation());
        assert!(back.rotation_distance(&p) < 1e-12);
        let x = p.transform([0.5, -1.0, 4.0]);
        let y = p.inverse().transform(x);
        assert!((y[0] - 0.5).abs() + (y[1] + 1.0).abs() + (y[2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(PyConfig::new(Some(r#"{"seed": 3}"#)).unwrap().seed() == 3);
        assert!(PyConfig::new(Some(r#"{"sede": 3}"#)).is_err());
    }

    #[test]
    fn lambert_helpers_invert() {
        let (x, y) = wgs84_to_lambert(48.801631, 2.131509).unwrap();
        let (lat, lon) = lambert_to_wgs84(x, y).unwrap();
        assert!((lat - 48.801631).abs() < 1e-9 && (lon - 2.131509).abs() < 1e-9);
    }
}
