use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::features::{Keypoint, MatchPair};
use crate::geometry::{backproject_pixel, RectilinearView};

/// A scene point (reference camera frame unless stated otherwise) and the
/// query pixel it is observed at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence3D2D {
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
    pub source_view: usize,
}

/// Lifts each matched reference keypoint to 3D using the depth of the
/// reference pixel nearest to it. Matches on unknown depth are dropped.
pub fn assemble_correspondences(
    matches: &[MatchPair],
    query_kps: &[Keypoint],
    ref_kps: &[Keypoint],
    ref_view: &RectilinearView,
    source_view: usize,
) -> Vec<Correspondence3D2D> {
    matches
        .iter()
        .filter_map(|m| {
            let r = ref_kps.get(m.ref_idx)?;
            let q = query_kps.get(m.query_idx)?;
            let depth = ref_view.depth.nearest(&r.position)?;
            let point = backproject_pixel(&ref_view.camera, &r.position, depth).ok()?;
            Some(Correspondence3D2D {
                point,
                pixel: q.position,
                source_view,
            })
        })
        .collect()
}
