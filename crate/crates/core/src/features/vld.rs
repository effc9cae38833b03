//! Virtual-line verification of tentative matches.
//!
//! Every match is joined to its nearest neighboring matches (nearest in the
//! query image) by virtual line segments. A line is consistent when its
//! length ratio and rotation between the two images agree with the local
//! consensus of all lines at that match; a match survives when at least `k`
//! of its lines are consistent. Only geometry is compared: no photometric
//! sampling along the lines.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::{Keypoint, MatchPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VldConfig {
    pub k: usize,
    /// Allowed factor between a line's length ratio and the local consensus.
    pub length_ratio: f64,
    /// Allowed rotation difference from the local consensus, degrees.
    pub angle_deg: f64,
    /// Lines shorter than this (pixels, in either image) are not judged.
    pub min_length: f64,
}

impl Default for VldConfig {
    fn default() -> Self {
        Self {
            k: 4,
            length_ratio: 1.5,
            angle_deg: 20.0,
            min_length: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifiedMatches {
    pub matches: Vec<MatchPair>,
    /// Set when there were too few matches to verify; `matches` is then the
    /// unfiltered input.
    pub too_few_matches: bool,
}

fn wrap_angle(a: f64) -> f64 {
    let a = a.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Angle minimizing the summed absolute circular deviation; ties to the
/// smaller angle.
fn circular_median(angles: &[f64]) -> f64 {
    let cost = |c: f64| angles.iter().map(|a| wrap_angle(a - c).abs()).sum::<f64>();
    let mut best = angles[0];
    let mut best_cost = cost(best);
    for &a in &angles[1..] {
        let c = cost(a);
        if c < best_cost || (c == best_cost && a < best) {
            best = a;
            best_cost = c;
        }
    }
    best
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Returns the subset of `matches` (in input order) supported by at least
/// `k` consistent virtual lines.
pub fn verify_virtual_lines(
    matches: &[MatchPair],
    query_kps: &[Keypoint],
    ref_kps: &[Keypoint],
    cfg: &VldConfig,
) -> VerifiedMatches {
    let k = cfg.k.max(2);
    if matches.len() <= k {
        return VerifiedMatches {
            matches: matches.to_vec(),
            too_few_matches: true,
        };
    }
    let q: Vec<_> = matches
        .iter()
        .map(|m| query_kps[m.query_idx].position)
        .collect();
    let r: Vec<_> = matches
        .iter()
        .map(|m| ref_kps[m.ref_idx].position)
        .collect();
    // Total order on matches independent of their position in the input.
    let key = |i: usize| [q[i].x, q[i].y, r[i].x, r[i].y];
    let cmp_key = |a: usize, b: usize| -> Ordering {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    };
    let neighbors = (2 * k).min(matches.len() - 1);
    let max_angle = cfg.angle_deg.to_radians();
    let keep: Vec<bool> = (0..matches.len())
        .map(|i| {
            let mut others: Vec<usize> = (0..matches.len()).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                let da = (q[a] - q[i]).norm_squared();
                let db = (q[b] - q[i]).norm_squared();
                da.total_cmp(&db).then_with(|| cmp_key(a, b))
            });
            let mut ratios = Vec::new();
            let mut angles = Vec::new();
            for &j in others.iter().take(neighbors) {
                let vq = q[j] - q[i];
                let vr = r[j] - r[i];
                let (lq, lr) = (vq.norm(), vr.norm());
                if lq < cfg.min_length || lr < cfg.min_length {
                    continue;
                }
                ratios.push(lr / lq);
                angles.push(wrap_angle(vr.y.atan2(vr.x) - vq.y.atan2(vq.x)));
            }
            if ratios.len() < k {
                return false;
            }
            let ref_ratio = median(ratios.clone());
            let ref_angle = circular_median(&angles);
            let consistent = ratios
                .iter()
                .zip(&angles)
                .filter(|(&s, &a)| {
                    let f = s / ref_ratio;
                    f <= cfg.length_ratio
                        && f >= 1.0 / cfg.length_ratio
                        && wrap_angle(a - ref_angle).abs() <= max_angle
                })
                .count();
            consistent >= k
        })
        .collect();
    VerifiedMatches {
        matches: matches
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(m, _)| *m)
            .collect(),
        too_few_matches: false,
    }
}
