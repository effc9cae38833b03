use rayon::prelude::*;

use super::{DescriptorSet, MatchPair};

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best and second-best neighbor of every row of `a` within `b`, as
/// `(index, distance, second distance)`. Ties go to the lower index.
fn nearest_two(a: &DescriptorSet, b: &DescriptorSet) -> Vec<Option<(usize, f32, f32)>> {
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let q = a.get(i);
            let mut best = (usize::MAX, f32::INFINITY);
            let mut second = f32::INFINITY;
            for j in 0..b.len() {
                let d = sq_dist(q, b.get(j));
                if d < best.1 {
                    second = best.1;
                    best = (j, d);
                } else if d < second {
                    second = d;
                }
            }
            (best.0 != usize::MAX).then(|| (best.0, best.1.sqrt(), second.sqrt()))
        })
        .collect()
}

/// Nearest-neighbor matches passing the ratio test. With `mutual`, a pair is
/// kept only if each side is the other's nearest neighbor and the ratio test
/// passes in both directions, which makes the result symmetric.
pub fn match_descriptors(
    query: &DescriptorSet,
    reference: &DescriptorSet,
    ratio: f64,
    mutual: bool,
) -> Vec<MatchPair> {
    if query.is_empty() || reference.is_empty() {
        return Vec::new();
    }
    let ratio = ratio as f32;
    let passes = |d1: f32, d2: f32| d1 < ratio * d2;
    let fwd = nearest_two(query, reference);
    let bwd = if mutual {
        Some(nearest_two(reference, query))
    } else {
        None
    };
    let mut out = Vec::new();
    for (qi, f) in fwd.iter().enumerate() {
        let Some((ri, d1, d2)) = *f else { continue };
        if !passes(d1, d2) {
            continue;
        }
        if let Some(bwd) = &bwd {
            match bwd[ri] {
                Some((back, e1, e2)) if back == qi && passes(e1, e2) => {}
                _ => continue,
            }
        }
        out.push(MatchPair::new(qi, ri, d1 as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DescriptorKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> DescriptorSet {
        let mut set = DescriptorSet::new(DescriptorKind::Local);
        for _ in 0..n {
            let mut v: Vec<f32> = (0..128).map(|_| rng.random_range(0.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            set.push(&v);
        }
        set
    }

    #[test]
    fn identical_sets_match_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = random_set(&mut rng, 30);
        let m = match_descriptors(&s, &s, 0.8, true);
        assert_eq!(m.len(), 30);
        assert!(m
            .iter()
            .all(|p| p.query_idx == p.ref_idx && p.distance == 0.0));
    }

    #[test]
    fn equidistant_query_is_rejected() {
        let mut r = DescriptorSet::new(DescriptorKind::Local);
        let mut a = vec![0.0f32; 128];
        a[0] = 1.0;
        let mut b = vec![0.0f32; 128];
        b[1] = 1.0;
        r.push(&a);
        r.push(&b);
        let mut q = DescriptorSet::new(DescriptorKind::Local);
        let mut c = vec![0.0f32; 128];
        c[0] = std::f32::consts::FRAC_1_SQRT_2;
        c[1] = std::f32::consts::FRAC_1_SQRT_2;
        q.push(&c);
        assert!(match_descriptors(&q, &r, 0.8, true).is_empty());
        assert!(match_descriptors(&q, &r, 0.8, false).is_empty());
    }

    #[test]
    fn planted_pairs_recovered_and_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reference = random_set(&mut rng, 60);
        let mut query = DescriptorSet::new(DescriptorKind::Local);
        // Planted: query i is a slightly perturbed reference 2i.
        for i in 0..20 {
            let v: Vec<f32> = reference
                .get(2 * i)
                .iter()
                .map(|x| x + rng.random_range(-0.005..0.005))
                .collect();
            query.push(&v);
        }
        let distractors = random_set(&mut rng, 15);
        for i in 0..distractors.len() {
            query.push(distractors.get(i));
        }
        let m = match_descriptors(&query, &reference, 0.8, true);
        for i in 0..20 {
            assert!(m.iter().any(|p| p.query_idx == i && p.ref_idx == 2 * i));
        }
        // Exhaustive oracle.
        let dist = |a: &[f32], b: &[f32]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let nn = |x: &[f32], set: &DescriptorSet| {
            let mut d: Vec<(f64, usize)> =
                (0..set.len()).map(|j| (dist(x, set.get(j)), j)).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (d[0].1, d[0].0, d[1].0)
        };
        let mut oracle = Vec::new();
        for qi in 0..query.len() {
            let (ri, d1, d2) = nn(query.get(qi), &reference);
            let (back, e1, e2) = nn(reference.get(ri), &query);
            if d1 < 0.8 * d2 && back == qi && e1 < 0.8 * e2 {
                oracle.push((qi, ri));
            }
        }
        let got: Vec<_> = m.iter().map(|p| (p.query_idx, p.ref_idx)).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn symmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng, 40);
        let mut b = DescriptorSet::new(DescriptorKind::Local);
        for i in (0..40).step_by(3) {
            let v: Vec<f32> = a
                .get(i)
                .iter()
                .map(|x| x + rng.random_range(-0.02..0.02))
                .collect();
            b.push(&v);
        }
        let extra = random_set(&mut rng, 10);
        for i in 0..extra.len() {
            b.push(extra.get(i));
        }
        let mut ab: Vec<_> = match_descriptors(&a, &b, 0.8, true)
            .iter()
            .map(|p| (p.query_idx, p.ref_idx))
            .collect();
        let mut ba: Vec<_> = match_descriptors(&b, &a, 0.8, true)
            .iter()
            .map(|p| (p.ref_idx, p.query_idx))
            .collect();
        ab.sort_unstable();
        ba.sort_unstable();
        assert!(!ab.is_empty());
        assert_eq!(ab, ba);
    }
}
