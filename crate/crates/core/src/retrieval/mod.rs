//! Topological localization: a route-ordered database of rectilinear views,
//! its intra-database similarity matrix, and the windowed online query.
//!
//! Views are stored panorama by panorama in route order, and within a
//! panorama by yaw slot, so view `i` is panorama `i / Y`, slot `i % Y`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::vocab::{cosine_similarity, BowVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("database is empty")]
    Empty,
    #[error("panorama {pano_id} has {found} views, expected {expected}")]
    InconsistentYawCount {
        pano_id: String,
        expected: usize,
        found: usize,
    },
    #[error("views out of route/yaw order at position {0}")]
    Misordered(usize),
    #[error("no previous hit and no start hint; run a full search first")]
    ColdStart,
    #[error("index {index} out of range for {len} views")]
    InvalidIndex { index: usize, len: usize },
}

/// Provenance of one database view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewInfo {
    pub pano_index: usize,
    pub pano_id: String,
    pub yaw_slot: usize,
    /// Geotag of the source panorama.
    pub geotag: GeoPoint,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDatabase {
    views: Vec<ViewInfo>,
    bows: Vec<BowVector>,
    yaws_per_pano: usize,
}

/// Assembles the database from views already in route/yaw order.
pub fn build_database(
    entries: Vec<(ViewInfo, BowVector)>,
) -> Result<ImageDatabase, RetrievalError> {
    if entries.is_empty() {
        return Err(RetrievalError::Empty);
    }
    // Group consecutive views by panorama.
    let mut counts: Vec<(String, usize)> = Vec::new();
    for (i, (v, _)) in entries.iter().enumerate() {
        let current = counts.len().checked_sub(1);
        match counts.last_mut() {
            Some((_, n)) if Some(v.pano_index) == current => {
                if v.yaw_slot != *n {
                    return Err(RetrievalError::Misordered(i));
                }
                *n += 1;
            }
            _ => {
                if v.pano_index != counts.len() || v.yaw_slot != 0 {
                    return Err(RetrievalError::Misordered(i));
                }
                counts.push((v.pano_id.clone(), 1));
            }
        }
    }
    let yaws = counts[0].1;
    for (id, n) in &counts {
        if *n != yaws {
            return Err(RetrievalError::InconsistentYawCount {
                pano_id: id.clone(),
                expected: yaws,
                found: *n,
            });
        }
    }
    let (views, bows) = entries.into_iter().unzip();
    Ok(ImageDatabase {
        views,
        bows,
        yaws_per_pano: yaws,
    })
}

impl ImageDatabase {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn pano_count(&self) -> usize {
        self.views.len() / self.yaws_per_pano
    }

    pub fn yaws_per_pano(&self) -> usize {
        self.yaws_per_pano
    }

    pub fn views(&self) -> &[ViewInfo] {
        &self.views
    }

    pub fn view(&self, i: usize) -> &ViewInfo {
        &self.views[i]
    }

    pub fn bows(&self) -> &[BowVector] {
        &self.bows
    }

    pub fn bow(&self, i: usize) -> &BowVector {
        &self.bows[i]
    }

    /// (panorama, yaw slot) of view `i`.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        (i / self.yaws_per_pano, i % self.yaws_per_pano)
    }

    pub fn index_of(&self, pano: usize, yaw: usize) -> usize {
        pano * self.yaws_per_pano + yaw
    }
}

/// Dense symmetric matrix of view-to-view cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraMatrix {
    n: usize,
    sim: Vec<f64>,
}

impl IntraMatrix {
    pub fn from_raw(n: usize, sim: Vec<f64>) -> Option<Self> {
        (sim.len() == n * n).then_some(Self { n, sim })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sim[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.sim[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sim
    }
}

pub fn compute_intra_matrix(db: &ImageDatabase) -> IntraMatrix {
    let n = db.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| cosine_similarity(&db.bows[i], &db.bows[j]))
                .collect()
        })
        .collect();
    let mut sim = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        sim[i * n + i] = 1.0;
        for (off, &s) in row.iter().enumerate() {
            let j = i + 1 + off;
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    IntraMatrix { n, sim }
}

/// For every view, its `k` most similar other views.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupIndex {
    k: usize,
    rows: Vec<Vec<usize>>,
}

impl SpeedupIndex {
    pub fn from_rows(k: usize, rows: Vec<Vec<usize>>) -> Self {
        Self { k, rows }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }
}

/// Descending similarity, then ascending index.
fn rank(scores: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = scores.collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

pub fn compute_speedup_index(matrix: &IntraMatrix, k: usize) -> SpeedupIndex {
    let k = k.max(1);
    let rows = (0..matrix.n)
        .into_par_iter()
        .map(|r| {
            rank(
                matrix
                    .row(r)
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|&(j, _)| j != r),
            )
            .into_iter()
            .take(k)
            .map(|(j, _)| j)
            .collect()
        })
        .collect();
    SpeedupIndex { k, rows }
}

/// Every view scored against the query.
pub fn query_full(db: &ImageDatabase, query: &BowVector) -> Vec<(usize, f64)> {
    rank(
        db.bows
            .iter()
            .enumerate()
            .map(|(i, b)| (i, cosine_similarity(query, b))),
    )
}

/// Where the windowed search is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SearchState {
    pub last_hit: Option<usize>,
    /// Route-start hint as a panorama index, used until the first hit.
    pub start_pano: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedResult {
    pub ranked: Vec<(usize, f64)>,
    pub comparisons: usize,
    pub state: SearchState,
}

/// Candidate views for a windowed query.
///
/// With a previous hit `a`, the candidates are the views within `dist_max`
/// index steps of `a` that share its yaw slot, plus `a`'s speedup row and
/// the rows of those entries (two hops through the index), all restricted to
/// the window. With only a start hint, every view of the panoramas within
/// `dist_max / Y` panoramas of the hint is a candidate. A window that spans
/// the whole database disables the restriction.
pub fn windowed_candidates(
    db: &ImageDatabase,
    state: &SearchState,
    speedup: &SpeedupIndex,
    dist_max: usize,
) -> Result<Vec<usize>, RetrievalError> {
    let n = db.len();
    if state.last_hit.is_none() && state.start_pano.is_none() {
        return Err(RetrievalError::ColdStart);
    }
    if dist_max >= n {
        return Ok((0..n).collect());
    }
    let y = db.yaws_per_pano;
    let mut set = BTreeSet::new();
    if let Some(a) = state.last_hit {
        if a >= n {
            return Err(RetrievalError::InvalidIndex { index: a, len: n });
        }
        let lo = a.saturating_sub(dist_max);
        let hi = (a + dist_max).min(n - 1);
        let slot = a % y;
        set.extend((lo..=hi).filter(|v| v % y == slot));
        let in_window = |v: usize| v >= lo && v <= hi;
        set.insert(a);
        for &u in speedup.row(a) {
            if in_window(u) {
                set.insert(u);
            }
            for &w in speedup.row(u) {
                if in_window(w) {
                    set.insert(w);
                }
            }
        }
    } else if let Some(p) = state.start_pano {
        let panos = db.pano_count();
        if p >= panos {
            return Err(RetrievalError::InvalidIndex {
                index: p,
                len: panos,
            });
        }
        let reach = dist_max / y;
        let (lo, hi) = (p.saturating_sub(reach), (p + reach).min(panos - 1));
        set.extend(lo * y..(hi + 1) * y);
    }
    Ok(set.into_iter().collect())
}

/// Scores only the windowed candidates and advances the state to the top hit.
pub fn query_windowed(
    db: &ImageDatabase,
    query: &BowVector,
    state: &SearchState,
    speedup: &SpeedupIndex,
    dist_max: usize,
) -> Result<WindowedResult, RetrievalError> {
    let cands = windowed_candidates(db, state, speedup, dist_max)?;
    let ranked = rank(
        cands
            .iter()
            .map(|&i| (i, cosine_similarity(query, &db.bows[i]))),
    );
    let state = SearchState {
        last_hit: ranked.first().map(|r| r.0).or(state.last_hit),
        start_pano: state.start_pano,
    };
    Ok(WindowedResult {
        comparisons: cands.len(),
        ranked,
        state,
    })
}

/// The best view followed by its first `k − 1` speedup neighbors.
pub fn top_k_candidates(speedup: &SpeedupIndex, best: usize, k: usize) -> Vec<usize> {
    let mut out = vec![best];
    out.extend(speedup.row(best).iter().take(k.saturating_sub(1)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Window half-width in database index steps.
    pub dist_max: usize,
    /// Entries per speedup row.
    pub speedup_k: usize,
    /// Reference views used for metric localization.
    pub top_k: usize,
    /// Frames whose best similarity is below this are rejected.
    pub min_similarity: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            dist_max: 48,
            speedup_k: 4,
            top_k: 4,
            min_similarity: 0.05,
        }
    }
}
