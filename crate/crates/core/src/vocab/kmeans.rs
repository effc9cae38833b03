use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) const MAX_LLOYD_ITERS: usize = 50;
pub(crate) const SHIFT_TOL: f64 = 1e-6;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lower index.
pub(crate) fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub(crate) struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd update.
    #[cfg_attr(not(test), allow(dead_code))]
    pub wcss: Vec<f64>,
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance to the nearest chosen center.
fn seed_centers(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = data.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        let c = data[pick].clone();
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd iterations from k-means++ seeds until no center moves by more than
/// `SHIFT_TOL` or `MAX_LLOYD_ITERS` is reached. Clusters that end up empty are
/// dropped, so fewer than `k` centers may be returned.
pub(crate) fn kmeans(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let dim = data[0].len();
    let mut centers = seed_centers(data, k, rng);
    let mut assignment = vec![0usize; data.len()];
    let mut wcss = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        for (a, x) in assignment.iter_mut().zip(data) {
            *a = nearest(&centers, x).0;
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (&a, x) in assignment.iter().zip(data) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for (c, (s, &n)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if n == 0 {
                continue;
            }
            let new: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
            shift = shift.max(sq_dist(c, &new).sqrt());
            *c = new;
        }
        wcss.push(
            assignment
                .iter()
                .zip(data)
                .map(|(&a, x)| sq_dist(&centers[a], x))
                .sum(),
        );
        if shift < SHIFT_TOL {
            break;
        }
    }
    // Final assignment against the final centers, then drop empty clusters.
    for (a, x) in assignment.iter_mut().zip(data) {
        *a = nearest(&centers, x).0;
    }
    let mut counts = vec![0usize; centers.len()];
    for &a in &assignment {
        counts[a] += 1;
    }
    if counts.contains(&0) {
        let mut remap = vec![usize::MAX; centers.len()];
        let mut kept = Vec::new();
        for (i, c) in centers.into_iter().enumerate() {
            if counts[i] > 0 {
                remap[i] = kept.len();
                kept.push(c);
            }
        }
        centers = kept;
        for a in assignment.iter_mut() {
            *a = remap[*a];
        }
    }
    KMeans {
        centers,
        assignment,
        wcss,
    }
}
