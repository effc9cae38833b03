use serde::{Deserialize, Serialize};

use super::refine::{optimize, Loss, OptimizationReport};
use super::{Correspondence3D2D, PoseError, PoseSE3, RobustConfig};
use crate::geometry::PinholeCamera;

/// Result of matching the query against one reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    /// Maps reference camera coordinates into the world frame. Held fixed.
    pub ref_to_world: PoseSE3,
    /// Points in the reference camera frame.
    pub correspondences: Vec<Correspondence3D2D>,
    /// Query-camera-from-reference pose, `None` if the pair failed.
    pub relative: Option<PoseSE3>,
    /// Indices into `correspondences`; empty means "use all".
    pub inliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbaResult {
    /// Maps world coordinates into the query camera frame.
    pub camera_from_world: PoseSE3,
    pub report: OptimizationReport,
    /// Index of the pair used for initialization.
    pub seed_pair: usize,
    /// Robust cost of each pair's correspondences at the solution.
    pub pair_costs: Vec<f64>,
}

impl LbaResult {
    pub fn world_from_camera(&self) -> PoseSE3 {
        self.camera_from_world.inverse()
    }
}

/// Jointly refines one query pose against the correspondences of every
/// successful pair, with reference structure held fixed.
pub fn local_bundle_adjust(
    pairs: &[PairEstimate],
    camera: &PinholeCamera,
    config: &RobustConfig,
) -> Result<LbaResult, PoseError> {
    config.validate()?;
    let inlier_count = |p: &PairEstimate| {
        if p.inliers.is_empty() {
            p.correspondences.len()
        } else {
            p.inliers.len()
        }
    };
    let seed_pair = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.relative.is_some())
        .max_by(|(ia, a), (ib, b)| inlier_count(a).cmp(&inlier_count(b)).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .ok_or(PoseError::NoValidPairs)?;
    let seed = &pairs[seed_pair];
    let initial = seed.relative.unwrap().compose(&seed.ref_to_world.inverse());

    let world_sets: Vec<Vec<Correspondence3D2D>> = pairs
        .iter()
        .map(|p| {
            if p.relative.is_none() {
                return Vec::new();
            }
            let lift = |c: &Correspondence3D2D| Correspondence3D2D {
                point: p.ref_to_world.transform(&c.point),
                ..*c
            };
            if p.inliers.is_empty() {
                p.correspondences.iter().map(lift).collect()
            } else {
                p.inliers
                    .iter()
                    .filter_map(|&i| p.correspondences.get(i))
                    .map(lift)
                    .collect()
            }
        })
        .collect();
    let all: Vec<Correspondence3D2D> = world_sets.iter().flatten().copied().collect();
    let loss = Loss::Tukey(config.tukey_t);
    let (pose, report) = optimize(&initial, &all, camera, loss, config.max_iterations)?;
    let pair_costs = world_sets
        .iter()
        .map(|s| super::refine::robust_cost(&pose, s, camera, loss))
        .collect();
    Ok(LbaResult {
        camera_from_world: pose,
        report,
        seed_pair,
        pair_costs,
    })
}
