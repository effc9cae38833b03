use serde::{Deserialize, Serialize};

/// Sparse, L2-normalized word histogram. Entries are sorted by word id and
/// every stored weight is strictly positive.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BowVector {
    entries: Vec<(u32, f64)>,
}

impl BowVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Sums duplicate ids, drops non-positive weights and normalizes.
    pub fn from_weights(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (id, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == id => last.1 += w,
                _ => merged.push((id, w)),
            }
        }
        merged.retain(|e| e.1 > 0.0);
        let norm = merged.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if norm > 0.0 {
            merged.iter_mut().for_each(|e| e.1 /= norm);
        }
        Self { entries: merged }
    }

    /// Entries assumed already normalized, sorted and positive (as read back
    /// from storage).
    pub fn from_normalized(entries: Vec<(u32, f64)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    pub fn weight(&self, word: u32) -> f64 {
        self.entries
            .binary_search_by_key(&word, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    /// The same vector with every word id shifted by `offset`.
    pub fn offset(&self, offset: u32) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|&(id, w)| (id + offset, w))
                .collect(),
        }
    }
}

/// `weight · local ⊕ (1 − weight) · region`, renormalized. The two inputs
/// are expected to use disjoint word ranges (region ids already offset).
pub fn merge_bow(local: &BowVector, region: &BowVector, weight: f64) -> BowVector {
    let w = weight.clamp(0.0, 1.0);
    let entries = local
        .entries
        .iter()
        .map(|&(id, v)| (id, w * v))
        .chain(region.entries.iter().map(|&(id, v)| (id, (1.0 - w) * v)))
        .collect();
    BowVector::from_weights(entries)
}

/// Sparse dot product of two unit vectors, clamped to [0, 1].
pub fn cosine_similarity(u: &BowVector, v: &BowVector) -> f64 {
    let (a, b) = (&u.entries, &v.entries);
    let (mut i, mut j) = (0, 0);
    let mut dot = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot.clamp(0.0, 1.0)
}
