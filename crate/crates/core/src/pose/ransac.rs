use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::refine::{optimize, Loss};
use super::{p3p::solve_p3p, project, Correspondence3D2D, PoseError, PoseSE3, RobustConfig};
use crate::geometry::PinholeCamera;

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: PoseSE3,
    /// Indices into the caller's correspondence list, ascending.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

/// Hypothesize-and-verify PnP: three points solve a P3P hypothesis, a fourth
/// picks among its roots, and hypotheses are scored by the number of
/// correspondences reprojecting within `config.ransac_threshold`. The best
/// hypothesis is refit on its inliers by least squares.
///
/// Correspondences are put in a canonical order before sampling, so the
/// result does not depend on input order.
pub fn solve_pnp_ransac(
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    config: &RobustConfig,
) -> Result<PnpSolution, PoseError> {
    config.validate()?;
    let n = corrs.len();
    if n < 4 {
        return Err(PoseError::DegenerateInput(format!(
            "{n} correspondences, need at least 4"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        canonical_key(&corrs[a])
            .partial_cmp(&canonical_key(&corrs[b]))
            .unwrap()
    });
    let sorted: Vec<Correspondence3D2D> = order.iter().map(|&i| corrs[i]).collect();
    let bearings: Vec<_> = sorted
        .iter()
        .map(|c| camera.unproject(&c.pixel).normalize())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let thr2 = config.ransac_threshold * config.ransac_threshold;
    let mut best: Option<(usize, f64, PoseSE3)> = None;
    let mut needed = config.ransac_iters;
    let mut iterations = 0;
    let mut any_valid_sample = false;
    while iterations < needed.min(config.ransac_iters) {
        iterations += 1;
        let idx = sample(&mut rng, n, 4).into_vec();
        let pts = [
            sorted[idx[0]].point,
            sorted[idx[1]].point,
            sorted[idx[2]].point,
        ];
        if triangle_degenerate(&pts) {
            continue;
        }
        any_valid_sample = true;
        let bear = [bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]];
        let check = &sorted[idx[3]];
        let hypothesis = solve_p3p(&pts, &bear)
            .into_iter()
            .filter_map(|pose| {
                let px = project(&check.point, &pose, camera).ok()?;
                Some(((px - check.pixel).norm_squared(), pose))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((check_err, pose)) = hypothesis else {
            continue;
        };
        if check_err > thr2 {
            continue;
        }
        let (count, err) = score(&pose, &sorted, camera, thr2);
        let better = match &best {
            None => true,
            Some((bc, be, _)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((count, err, pose));
            let w = count as f64 / n as f64;
            let denom = (1.0 - w.powi(4)).ln();
            needed = if denom < 0.0 {
                let k = (1.0 - config.ransac_confidence).ln() / denom;
                (k.ceil() as usize).max(1)
            } else {
                1
            };
        }
    }
    if !any_valid_sample {
        return Err(PoseError::DegenerateInput(
            "every sample was collinear".into(),
        ));
    }
    let Some((count, _, mut pose)) = best else {
        return Err(PoseError::NoConsensus { inliers: 0 });
    };
    if count < 4 {
        return Err(PoseError::NoConsensus { inliers: count });
    }

    // Least-squares refit on the consensus set, repeated while it grows.
    let mut inliers = inlier_set(&pose, &sorted, camera, thr2);
    for _ in 0..3 {
        let subset: Vec<_> = inliers.iter().map(|&i| sorted[i]).collect();
        let (refit, _) = optimize(&pose, &subset, camera, Loss::Squared, config.max_iterations)?;
        let next = inlier_set(&refit, &sorted, camera, thr2);
        if next.len() < inliers.len() {
            break;
        }
        pose = refit;
        let same = next == inliers;
        inliers = next;
        if same {
            break;
        }
    }
    if inliers.len() < 4 {
        return Err(PoseError::NoConsensus {
            inliers: inliers.len(),
        });
    }
    let mut original: Vec<usize> = inliers.iter().map(|&i| order[i]).collect();
    original.sort_unstable();
    Ok(PnpSolution {
        pose,
        inliers: original,
        iterations,
    })
}

fn canonical_key(c: &Correspondence3D2D) -> [f64; 5] {
    [c.pixel.x, c.pixel.y, c.point.x, c.point.y, c.point.z]
}

fn triangle_degenerate(p: &[nalgebra::Vector3<f64>; 3]) -> bool {
    let a = p[1] - p[0];
    let b = p[2] - p[0];
    let scale = a.norm_squared().max(b.norm_squared());
    a.cross(&b).norm_squared() <= 1e-12 * scale * scale
}

fn score(
    pose: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    thr2: f64,
) -> (usize, f64) {
    let mut count = 0;
    let mut err = 0.0;
    for c in corrs {
        let e = match project(&c.point, pose, camera) {
            Ok(px) => (px - c.pixel).norm_squared(),
            Err(_) => f64::INFINITY,
        };
        if e <= thr2 {
            count += 1;
            err += e;
        } else {
            err += thr2;
        }
    }
    (count, err)
}

fn inlier_set(
    pose: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    thr2: f64,
) -> Vec<usize> {
    corrs
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(project(&c.point, pose, camera), Ok(px) if (px - c.pixel).norm_squared() <= thr2))
        .map(|(i, _)| i)
        .collect()
}
