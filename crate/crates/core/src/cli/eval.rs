//! Scoring of localization records against ground-truth positions.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, read_records, write_json, CliError, LocalizationRecord, PipelineConfig};
use crate::geo::{wgs84_to_lambert, GeoPoint, LambertProjection};
use crate::ingest::load_dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame: String,
    pub lat: f64,
    pub lon: f64,
    /// Lambert easting and northing of the estimate.
    pub x: f64,
    pub y: f64,
    pub error_m: f64,
    pub inliers: usize,
    /// Panorama index steps between the retrieved panorama and the one
    /// nearest the true position.
    pub topological_distance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub bucket: String,
    pub frames: usize,
    pub median_error_m: Option<f64>,
    pub mean_error_m: Option<f64>,
    pub within_2m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub localized: usize,
    pub localization_rate: f64,
    pub median_error_m: Option<f64>,
    pub p95_error_m: Option<f64>,
    pub mean_error_m: Option<f64>,
    /// Share of localized frames within 2 m of ground truth.
    pub within_2m: Option<f64>,
    pub rejections: HashMap<String, usize>,
    pub by_inliers: Vec<TableRow>,
    pub by_topological_distance: Vec<TableRow>,
    pub per_frame: Vec<FrameError>,
}

/// Linear interpolation between order statistics; `None` when empty.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

fn summarize(bucket: String, errors: &[f64]) -> TableRow {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    TableRow {
        bucket,
        frames: n,
        median_error_m: percentile(&sorted, 0.5),
        mean_error_m: (n > 0).then(|| sorted.iter().sum::<f64>() / n as f64),
        within_2m: (n > 0).then(|| sorted.iter().filter(|&&e| e <= 2.0).count() as f64 / n as f64),
    }
}

const INLIER_BUCKETS: [(usize, usize); 4] = [(0, 20), (20, 50), (50, 100), (100, usize::MAX)];
const MAX_TOPO_BUCKET: usize = 3;

/// Scores `records` against ground-truth geotags keyed by frame id.
/// `panoramas` (route order) is used for the topological-distance table.
pub fn evaluate(
    records: &[LocalizationRecord],
    ground_truth: &HashMap<String, GeoPoint>,
    panoramas: &[GeoPoint],
    proj: &LambertProjection,
) -> Result<EvalReport, CliError> {
    let pano_xy = panoramas
        .iter()
        .map(|p| wgs84_to_lambert(p, proj))
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_frame = Vec::new();
    let mut rejections: HashMap<String, usize> = HashMap::new();
    for r in records {
        let Some(est) = r.geo else {
            let reason = r.rejection.clone().unwrap_or_else(|| "unspecified".into());
            *rejections.entry(reason).or_default() += 1;
            continue;
        };
        let truth = ground_truth
            .get(&r.frame_id)
            .ok_or_else(|| CliError::MissingGroundTruth {
                frame_id: r.frame_id.clone(),
            })?;
        let e = wgs84_to_lambert(&est, proj)?;
        let t = wgs84_to_lambert(truth, proj)?;
        let nearest = pano_xy
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.distance(&t).total_cmp(&b.1.distance(&t)))
            .map(|(i, _)| i);
        let topological_distance = match (nearest, &r.hit) {
            (Some(n), Some(h)) => Some(n.abs_diff(h.pano_index)),
            _ => None,
        };
        per_frame.push(FrameError {
            frame: r.frame_id.clone(),
            lat: est.lat,
            lon: est.lon,
            x: e.x,
            y: e.y,
            error_m: e.distance(&t),
            inliers: r.inliers.unwrap_or(0),
            topological_distance,
        });
    }

    let errors: Vec<f64> = per_frame.iter().map(|f| f.error_m).collect();
    let overall = summarize(String::new(), &errors);
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);

    let by_inliers = INLIER_BUCKETS
        .iter()
        .map(|&(lo, hi)| {
            let errs: Vec<f64> = per_frame
                .iter()
                .filter(|f| f.inliers >= lo && f.inliers < hi)
                .map(|f| f.error_m)
                .collect();
            let label = if hi == usize::MAX {
                format!("{lo}+")
            } else {
                format!("{lo}-{}", hi - 1)
            };
            summarize(label, &errs)
        })
        .collect();
    let by_topological_distance = (0..=MAX_TOPO_BUCKET)
        .map(|d| {
            let errs: Vec<f64> = per_frame
                .iter()
                .filter(|f| f.topological_distance.map(|t| t.min(MAX_TOPO_BUCKET)) == Some(d))
                .map(|f| f.error_m)
                .collect();
            let label = if d == MAX_TOPO_BUCKET {
                format!("{d}+")
            } else {
                d.to_string()
            };
            summarize(label, &errs)
        })
        .collect();

    let frames = records.len();
    Ok(EvalReport {
        frames,
        localized: per_frame.len(),
        localization_rate: if frames == 0 {
            0.0
        } else {
            per_frame.len() as f64 / frames as f64
        },
        median_error_m: overall.median_error_m,
        p95_error_m: percentile(&sorted, 0.95),
        mean_error_m: overall.mean_error_m,
        within_2m: overall.within_2m,
        rejections,
        by_inliers,
        by_topological_distance,
        per_frame,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| CliError::io(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    frame: &'a str,
    lat: f64,
    lon: f64,
    x: f64,
    y: f64,
    error_m: f64,
}

/// Evaluates a records file against the dataset's ground truth and writes
/// `eval.json`, `trajectory.csv`, `by_inliers.csv` and
/// `by_topological_distance.csv` under `out`.
pub fn cmd_eval(
    records_path: &Path,
    dataset_path: &Path,
    config: &PipelineConfig,
    out: &Path,
) -> Result<EvalReport, CliError> {
    let records = read_records(records_path)?;
    let dataset = load_dataset(dataset_path)?;
    let truth: HashMap<String, GeoPoint> = dataset
        .queries
        .iter()
        .filter_map(|q| {
            q.entry
                .ground_truth
                .as_ref()
                .map(|g| (q.entry.frame_id.clone(), g.geotag))
        })
        .collect();
    let panos: Vec<GeoPoint> = dataset.panoramas.iter().map(|p| p.entry.geotag).collect();
    let report = evaluate(&records, &truth, &panos, &config.projection)?;

    create_dir(out)?;
    write_json(&out.join("eval.json"), &report)?;
    let traj: Vec<TrajectoryRow> = report
        .per_frame
        .iter()
        .map(|f| TrajectoryRow {
            frame: &f.frame,
            lat: f.lat,
            lon: f.lon,
            x: f.x,
            y: f.y,
            error_m: f.error_m,
        })
        .collect();
    write_csv(
        &out.join("trajectory.csv"),
        &traj,
        &["frame", "lat", "lon", "x", "y", "error_m"],
    )?;
    let table_header = [
        "bucket",
        "frames",
        "median_error_m",
        "mean_error_m",
        "within_2m",
    ];
    write_csv(
        &out.join("by_inliers.csv"),
        &report.by_inliers,
        &table_header,
    )?;
    write_csv(
        &out.join("by_topological_distance.csv"),
        &report.by_topological_distance,
        &table_header,
    )?;
    Ok(report)
}
