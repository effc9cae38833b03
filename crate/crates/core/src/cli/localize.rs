//! The online loop: one [`LocalizationRecord`] per query frame.
//!
//! Frames are processed in order because the windowed search is centered
//! on the previous hit. Within a frame the candidate pairs are independent
//! and run in parallel.

use std::path::Path;

use image::GrayImage;
use nalgebra::{Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, read_jsonl, require, write_jsonl, CliError, PipelineConfig, ViewStore};
use super::{load_vocabulary, DATABASE_FILE};
use crate::features::{
    equalize_histogram, extract_features, match_and_verify, DescriptorKind, ImageFeatures,
};
use crate::geo::{grid_from_enu, offset_to_geo, wgs84_to_lambert, GeoPoint};
use crate::geometry::PinholeCamera;
use crate::ingest::{load_database, load_dataset};
use crate::pose::{
    assemble_correspondences, local_bundle_adjust, solve_pnp_ransac, PairEstimate, PoseSE3,
};
use crate::retrieval::{
    query_full, query_windowed, top_k_candidates, ImageDatabase, RetrievalError, SearchState,
    SpeedupIndex,
};
use crate::vocab::Vocabulary;

pub const RECORDS_FILE: &str = "records.jsonl";

pub const LOW_SIMILARITY: &str = "low similarity";
pub const FEW_MATCHES: &str = "too few verified matches";
pub const FEW_INLIERS: &str = "too few inliers";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    /// `"full"` on cold start, `"windowed"` otherwise.
    pub mode: String,
    pub comparisons: usize,
    /// With oracle instrumentation: whether the full search ranks the same
    /// view first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_top1_agrees: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_comparisons: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologicalHit {
    pub view: usize,
    pub pano_index: usize,
    pub pano_id: String,
    pub yaw_slot: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub view: usize,
    pub verified_matches: usize,
    pub correspondences: usize,
    pub inliers: usize,
    /// Robust cost at the final pose; present for pairs used in the
    /// adjustment.
    pub cost: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Panorama whose east-north-up frame the pose is expressed in.
    pub anchor_pano: String,
    pub position_enu: Vector3<f64>,
    /// Camera to anchor east-north-up.
    pub rotation: Rotation3<f64>,
    pub iterations: usize,
    pub final_cost: f64,
}

/// Outcome of one query frame. Metric fields are present only when the
/// frame was localized; otherwise `rejection` says why not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub frame_id: String,
    pub search: Option<SearchRecord>,
    pub hit: Option<TopologicalHit>,
    pub rejection: Option<String>,
    pub pose: Option<PoseRecord>,
    pub geo: Option<GeoPoint>,
    /// Total RANSAC inliers over the pairs used.
    pub inliers: Option<usize>,
    pub pairs: Vec<PairRecord>,
}

impl LocalizationRecord {
    fn rejected(frame_id: &str, reason: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.to_string(),
            search: None,
            hit: None,
            rejection: Some(reason.into()),
            pose: None,
            geo: None,
            inliers: None,
            pairs: Vec::new(),
        }
    }

    pub fn is_localized(&self) -> bool {
        self.geo.is_some()
    }
}

/// Everything the online loop needs, loaded once.
pub struct Localizer {
    config: PipelineConfig,
    vocab: Vocabulary,
    db: ImageDatabase,
    speedup: SpeedupIndex,
    store: ViewStore,
    camera: PinholeCamera,
    state: SearchState,
    oracle: bool,
}

impl Localizer {
    pub fn open(
        store_dir: &Path,
        db_dir: &Path,
        config: &PipelineConfig,
        camera: PinholeCamera,
        start_pano: Option<&str>,
        oracle: bool,
    ) -> Result<Self, CliError> {
        config.validate()?;
        let db_path = db_dir.join(DATABASE_FILE);
        require(&db_path, "build")?;
        let vocab = load_vocabulary(db_dir, config)?;
        let (db, _, speedup) = load_database(&db_path)?;
        let store = ViewStore::open(store_dir)?;
        let aligned = store.len() == db.len()
            && store
                .views
                .iter()
                .zip(db.views())
                .all(|(s, d)| s.pano_id == d.pano_id && s.yaw_slot == d.yaw_slot);
        if !aligned {
            return Err(CliError::format(
                &db_path,
                "database does not match the view store; rerun `build`",
            ));
        }
        let start = start_pano.and_then(|id| {
            db.views()
                .iter()
                .find(|v| v.pano_id == id)
                .map(|v| v.pano_index)
        });
        Ok(Self {
            config: config.clone(),
            vocab,
            db,
            speedup,
            store,
            camera,
            state: SearchState {
                last_hit: None,
                start_pano: start,
            },
            oracle,
        })
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    /// Localizes one frame. Failures become rejection reasons.
    pub fn process(&mut self, frame_id: &str, image: &GrayImage) -> LocalizationRecord {
        if image.dimensions() != (self.camera.width, self.camera.height) {
            return LocalizationRecord::rejected(
                frame_id,
                format!(
                    "input error: image is {}×{}, camera expects {}×{}",
                    image.width(),
                    image.height(),
                    self.camera.width,
                    self.camera.height
                ),
            );
        }
        let features = extract_features(&equalize_histogram(image), &self.config.features);
        let bow = match self.vocab.quantize(&features) {
            Ok(b) => b,
            Err(e) => {
                return LocalizationRecord::rejected(frame_id, format!("quantization failed: {e}"))
            }
        };

        let dist_max = self.config.retrieval.dist_max;
        let (ranked, mut search, next_state) =
            match query_windowed(&self.db, &bow, &self.state, &self.speedup, dist_max) {
                Ok(r) => {
                    let search = SearchRecord {
                        mode: "windowed".into(),
                        comparisons: r.comparisons,
                        oracle_top1_agrees: None,
                        oracle_comparisons: None,
                    };
                    (r.ranked, search, r.state)
                }
                Err(RetrievalError::ColdStart) => {
                    let ranked = query_full(&self.db, &bow);
                    let search = SearchRecord {
                        mode: "full".into(),
                        comparisons: self.db.len(),
                        oracle_top1_agrees: None,
                        oracle_comparisons: None,
                    };
                    let state = SearchState {
                        last_hit: ranked.first().map(|r| r.0),
                        start_pano: self.state.start_pano,
                    };
                    (ranked, search, state)
                }
                Err(e) => {
                    return LocalizationRecord::rejected(frame_id, format!("retrieval failed: {e}"))
                }
            };
        if self.oracle {
            let full = query_full(&self.db, &bow);
            search.oracle_top1_agrees =
                Some(full.first().map(|r| r.0) == ranked.first().map(|r| r.0));
            search.oracle_comparisons = Some(self.db.len());
        }

        let mut record = LocalizationRecord::rejected(frame_id, LOW_SIMILARITY);
        record.search = Some(search);
        let Some(&(best, similarity)) = ranked.first() else {
            return record;
        };
        if similarity < self.config.retrieval.min_similarity {
            return record;
        }
        let info = self.db.view(best);
        record.hit = Some(TopologicalHit {
            view: best,
            pano_index: info.pano_index,
            pano_id: info.pano_id.clone(),
            yaw_slot: info.yaw_slot,
            similarity,
        });
        record.rejection = None;
        let anchor = info.geotag;
        if let Err(reason) = self.metric(&features, best, &anchor, &mut record) {
            record.rejection = Some(reason);
        }
        // Only an accepted hit moves the search window.
        if record.rejection.as_deref() != Some(LOW_SIMILARITY) {
            self.state = next_state;
        }
        record
    }

    fn metric(
        &self,
        features: &ImageFeatures,
        best: usize,
        anchor: &GeoPoint,
        record: &mut LocalizationRecord,
    ) -> Result<(), String> {
        let candidates = top_k_candidates(&self.speedup, best, self.config.retrieval.top_k);
        let results: Vec<(PairRecord, Option<PairEstimate>)> = candidates
            .par_iter()
            .map(|&v| self.estimate_pair(features, v, anchor))
            .collect();
        let (pair_records, estimates): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        record.pairs = pair_records;
        let used: Vec<(usize, PairEstimate)> = estimates
            .into_iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i, e)))
            .collect();
        if used.is_empty() {
            // Without a pair passing both gates there is no geometric evidence
            // of visual overlap, so the retrieval hit itself is not trusted.
            // Other failures (unreadable views, solver errors) are reported
            // as they are.
            let gated = |f: &&str| *f == FEW_MATCHES || *f == FEW_INLIERS;
            let other = record
                .pairs
                .iter()
                .filter_map(|p| p.failure.as_deref())
                .find(|f| !gated(f));
            return Err(other.unwrap_or(LOW_SIMILARITY).to_string());
        }
        let pairs: Vec<PairEstimate> = used.iter().map(|(_, e)| e.clone()).collect();
        let lba = local_bundle_adjust(&pairs, &self.camera, &self.config.robust)
            .map_err(|e| format!("adjustment failed: {e}"))?;
        for ((i, _), cost) in used.iter().zip(&lba.pair_costs) {
            record.pairs[*i].cost = Some(*cost);
        }
        let world_from_camera = lba.world_from_camera();
        let position = *world_from_camera.translation();
        let geo = offset_to_geo(anchor, &position, &self.config.projection)
            .map_err(|e| format!("geo conversion failed: {e}"))?;
        record.inliers = Some(pairs.iter().map(|p| p.inliers.len()).sum());
        record.pose = Some(PoseRecord {
            anchor_pano: self.db.view(best).pano_id.clone(),
            position_enu: position,
            rotation: world_from_camera.rotation(),
            iterations: lba.report.iterations,
            final_cost: lba.report.final_cost,
        });
        record.geo = Some(geo);
        Ok(())
    }

    /// Reference camera to the anchor's east-north-up frame.
    fn ref_to_world(&self, view: usize, anchor: &GeoPoint) -> Result<PoseSE3, String> {
        let proj = &self.config.projection;
        let rec = &self.store.views[view];
        let err = |e: crate::geo::GeoError| format!("geo conversion failed: {e}");
        let a = wgs84_to_lambert(anchor, proj).map_err(err)?;
        let p = wgs84_to_lambert(&rec.geotag, proj).map_err(err)?;
        let anchor_grid = grid_from_enu(anchor, proj);
        let offset =
            anchor_grid.inverse() * Vector3::new(p.x - a.x, p.y - a.y, rec.geotag.alt - anchor.alt);
        let rotation = anchor_grid.inverse() * grid_from_enu(&rec.geotag, proj) * rec.rotation;
        Ok(PoseSE3::new(rotation, offset))
    }

    fn estimate_pair(
        &self,
        query: &ImageFeatures,
        view: usize,
        anchor: &GeoPoint,
    ) -> (PairRecord, Option<PairEstimate>) {
        let mut rec = PairRecord {
            view,
            verified_matches: 0,
            correspondences: 0,
            inliers: 0,
            cost: None,
            failure: None,
        };
        let fail = |mut rec: PairRecord, reason: String| {
            rec.failure = Some(reason);
            (rec, None)
        };
        let (reference, ref_view) = match (self.store.features(view), self.store.view(view)) {
            (Ok(f), Ok(v)) => (f, v),
            (Err(e), _) | (_, Err(e)) => {
                return fail(rec, format!("reference view unreadable: {e}"))
            }
        };
        let mut corrs = Vec::new();
        for kind in [DescriptorKind::Local, DescriptorKind::Region] {
            let (q, r) = (query.get(kind), reference.get(kind));
            let verified = match_and_verify(q, r, &self.config.features);
            if verified.too_few_matches {
                continue;
            }
            rec.verified_matches += verified.matches.len();
            corrs.extend(assemble_correspondences(
                &verified.matches,
                &q.keypoints,
                &r.keypoints,
                &ref_view,
                view,
            ));
        }
        rec.correspondences = corrs.len();
        if rec.verified_matches < self.config.gate.min_verified_matches {
            return fail(rec, FEW_MATCHES.into());
        }
        let solution = match solve_pnp_ransac(&corrs, &self.camera, &self.config.robust) {
            Ok(s) => s,
            Err(
                crate::pose::PoseError::NoConsensus { .. }
                | crate::pose::PoseError::DegenerateInput(_),
            ) => return fail(rec, FEW_INLIERS.into()),
            Err(e) => return fail(rec, format!("pose estimation failed: {e}")),
        };
        rec.inliers = solution.inliers.len();
        if rec.inliers < self.config.gate.min_inliers {
            return fail(rec, FEW_INLIERS.into());
        }
        let ref_to_world = match self.ref_to_world(view, anchor) {
            Ok(p) => p,
            Err(e) => return fail(rec, e),
        };
        let estimate = PairEstimate {
            ref_to_world,
            correspondences: corrs,
            relative: Some(solution.pose),
            inliers: solution.inliers,
        };
        (rec, Some(estimate))
    }
}

/// Localizes every query frame of a dataset, in order, and writes
/// `records.jsonl` under `out`.
pub fn cmd_localize(
    dataset_path: &Path,
    store_dir: &Path,
    db_dir: &Path,
    config: &PipelineConfig,
    oracle_full_search: bool,
    out: &Path,
) -> Result<Vec<LocalizationRecord>, CliError> {
    let dataset = load_dataset(dataset_path)?;
    let camera = match dataset.manifest.query_camera {
        Some(c) => c,
        None => config.rig.camera()?,
    };
    let hint = dataset.manifest.route_start_hint.as_deref();
    let mut localizer =
        Localizer::open(store_dir, db_dir, config, camera, hint, oracle_full_search)?;
    let records: Vec<LocalizationRecord> = dataset
        .queries
        .iter()
        .enumerate()
        .map(|(j, q)| match dataset.load_query(j) {
            Ok(img) => localizer.process(&q.entry.frame_id, &img),
            Err(e) => LocalizationRecord::rejected(&q.entry.frame_id, format!("input error: {e}")),
        })
        .collect();
    create_dir(out)?;
    write_jsonl(&out.join(RECORDS_FILE), &records)?;
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<LocalizationRecord>, CliError> {
    require(path, "localize")?;
    read_jsonl(path)
}
