use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bow::BowVector;
use super::kmeans::{kmeans, sq_dist};
use super::VocabError;
use crate::codec::{read_file, PersistError, Reader, Writer};
use crate::features::{DescriptorKind, DescriptorSet, DESCRIPTOR_LEN};

const MAGIC: &[u8; 4] = b"SLVT";
pub const VOCAB_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Empty for the root.
    pub center: Vec<f64>,
    pub children: Vec<u32>,
    pub word: Option<u32>,
}

/// Hierarchical k-means tree; its leaves are the visual words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyTree {
    pub branching: usize,
    pub depth: usize,
    pub kind: DescriptorKind,
    /// Pre-order layout, root first.
    pub nodes: Vec<TreeNode>,
    /// Per-word weight, indexed by word id. All ones until `compute_idf`.
    pub idf: Vec<f64>,
}

struct Subtree {
    center: Vec<f64>,
    children: Vec<Subtree>,
}

/// Seed for the clustering at one tree position, independent of the order in
/// which sibling subtrees are trained.
fn node_seed(seed: u64, path: &[usize]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        h = (h ^ (p as u64 + 1)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

fn has_distinct(data: &[Vec<f64>], at_least: usize) -> bool {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for x in data {
        if !seen.contains(&x) {
            seen.push(x);
            if seen.len() >= at_least {
                return true;
            }
        }
    }
    false
}

fn grow(
    data: Vec<Vec<f64>>,
    center: Vec<f64>,
    level: usize,
    cfg: (usize, usize, u64),
    path: Vec<usize>,
) -> Subtree {
    let (branching, depth, seed) = cfg;
    if level == depth || data.len() < branching || !has_distinct(&data, 2) {
        return Subtree {
            center,
            children: Vec::new(),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(node_seed(seed, &path));
    let km = kmeans(&data, branching, &mut rng);
    if km.centers.len() < 2 {
        return Subtree {
            center,
            children: Vec::new(),
        };
    }
    let mut groups: Vec<Vec<Vec<f64>>> = vec![Vec::new(); km.centers.len()];
    for (x, &a) in data.into_iter().zip(&km.assignment) {
        groups[a].push(x);
    }
    let children = km
        .centers
        .into_par_iter()
        .zip(groups)
        .enumerate()
        .map(|(i, (c, g))| {
            let mut p = path.clone();
            p.push(i);
            grow(g, c, level + 1, cfg, p)
        })
        .collect();
    Subtree { center, children }
}

fn flatten(t: Subtree, nodes: &mut Vec<TreeNode>, words: &mut u32) -> u32 {
    let id = nodes.len() as u32;
    nodes.push(TreeNode {
        center: t.center,
        children: Vec::new(),
        word: None,
    });
    if t.children.is_empty() {
        nodes[id as usize].word = Some(*words);
        *words += 1;
    } else {
        let kids: Vec<u32> = t
            .children
            .into_iter()
            .map(|c| flatten(c, nodes, words))
            .collect();
        nodes[id as usize].children = kids;
    }
    id
}

fn widen(d: &[f32]) -> Vec<f64> {
    d.iter().map(|&v| v as f64).collect()
}

fn check_kind(sets: &[&DescriptorSet]) -> Result<Option<DescriptorKind>, VocabError> {
    let mut kind = None;
    for s in sets {
        match kind {
            None => kind = Some(s.kind),
            Some(k) if k != s.kind => {
                return Err(VocabError::KindMismatch {
                    expected: k,
                    found: s.kind,
                })
            }
            _ => {}
        }
    }
    Ok(kind)
}

/// Trains a vocabulary tree on all descriptors of all images.
pub fn train_vocabulary(
    descriptor_sets: &[&DescriptorSet],
    branching: usize,
    depth: usize,
    seed: u64,
) -> Result<VocabularyTree, VocabError> {
    if branching < 2 || depth < 1 {
        return Err(VocabError::InvalidParameters(format!(
            "branching {branching} and depth {depth} must be at least 2 and 1"
        )));
    }
    let kind = check_kind(descriptor_sets)?;
    let data: Vec<Vec<f64>> = descriptor_sets
        .iter()
        .flat_map(|s| s.iter().map(widen))
        .collect();
    if data.len() < branching {
        return Err(VocabError::InsufficientData {
            available: data.len(),
            required: branching,
        });
    }
    let root = grow(data, Vec::new(), 0, (branching, depth, seed), Vec::new());
    let mut nodes = Vec::new();
    let mut words = 0;
    flatten(root, &mut nodes, &mut words);
    Ok(VocabularyTree {
        branching,
        depth,
        kind: kind.expect("non-empty data has a kind"),
        nodes,
        idf: vec![1.0; words as usize],
    })
}

impl VocabularyTree {
    pub fn word_count(&self) -> usize {
        self.idf.len()
    }

    /// Greedy root-to-leaf descent; ties go to the earlier child.
    pub fn word(&self, descriptor: &[f32]) -> u32 {
        let x = widen(descriptor);
        let mut n = &self.nodes[0];
        while n.word.is_none() {
            let mut best = (n.children[0], f64::INFINITY);
            for &c in &n.children {
                let d = sq_dist(&self.nodes[c as usize].center, &x);
                if d < best.1 {
                    best = (c, d);
                }
            }
            n = &self.nodes[best.0 as usize];
        }
        n.word.expect("leaf")
    }

    /// Centers of the leaves, indexed by word id.
    pub fn leaf_centers(&self) -> Vec<&[f64]> {
        let mut out = vec![&[][..]; self.word_count()];
        for n in &self.nodes {
            if let Some(w) = n.word {
                out[w as usize] = &n.center;
            }
        }
        out
    }

    fn expect_kind(&self, kind: DescriptorKind) -> Result<(), VocabError> {
        if kind != self.kind {
            return Err(VocabError::KindMismatch {
                expected: self.kind,
                found: kind,
            });
        }
        Ok(())
    }

    /// `idf(w) = ln(N / N_w)` over the database images; unseen words get 0.
    pub fn compute_idf(&mut self, images: &[&DescriptorSet]) -> Result<(), VocabError> {
        for s in images {
            self.expect_kind(s.kind)?;
        }
        let n = images.len() as f64;
        let mut df = vec![0usize; self.word_count()];
        let per_image: Vec<Vec<u32>> = images
            .par_iter()
            .map(|s| {
                let mut w: Vec<u32> = s.iter().map(|d| self.word(d)).collect();
                w.sort_unstable();
                w.dedup();
                w
            })
            .collect();
        for words in per_image {
            for w in words {
                df[w as usize] += 1;
            }
        }
        self.idf = df
            .into_iter()
            .map(|c| if c == 0 { 0.0 } else { (n / c as f64).ln() })
            .collect();
        Ok(())
    }

    /// TF-IDF vector with `tf = count / total descriptors`.
    pub fn quantize(&self, descriptors: &DescriptorSet) -> Result<BowVector, VocabError> {
        self.expect_kind(descriptors.kind)?;
        if descriptors.is_empty() {
            return Ok(BowVector::empty());
        }
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for d in descriptors.iter() {
            *counts.entry(self.word(d)).or_default() += 1;
        }
        let total = descriptors.len() as f64;
        Ok(BowVector::from_weights(
            counts
                .into_iter()
                .map(|(w, c)| (w, c as f64 / total * self.idf[w as usize]))
                .collect(),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        let mut w = Writer::new(MAGIC, VOCAB_FORMAT_VERSION);
        w.u8(self.kind.tag());
        w.u32(self.branching as u32);
        w.u32(self.depth as u32);
        w.u32(self.word_count() as u32);
        w.u64(self.nodes.len() as u64);
        for n in &self.nodes {
            w.u32(n.word.unwrap_or(u32::MAX));
            w.u32(n.children.len() as u32);
            for &c in &n.children {
                w.u32(c);
            }
            w.u32(n.center.len() as u32);
            for &v in &n.center {
                w.f64(v);
            }
        }
        for &v in &self.idf {
            w.f64(v);
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let data = read_file(path)?;
        let mut r = Reader::open(
            &data,
            MAGIC,
            VOCAB_FORMAT_VERSION,
            &path.display().to_string(),
        )?;
        let kind = DescriptorKind::from_tag(r.u8()?)
            .ok_or_else(|| r.corrupt("unknown descriptor kind"))?;
        let branching = r.u32()? as usize;
        let depth = r.u32()? as usize;
        let words = r.u32()? as usize;
        let count = r.count(12)?;
        let mut nodes = Vec::with_capacity(count);
        for _ in 0..count {
            let word = match r.u32()? {
                u32::MAX => None,
                w if (w as usize) < words => Some(w),
                _ => return Err(r.corrupt("word id out of range")),
            };
            let nc = r.u32()? as usize;
            let mut children = Vec::with_capacity(nc.min(1 << 16));
            for _ in 0..nc {
                let c = r.u32()?;
                if c as usize >= count {
                    return Err(r.corrupt("child index out of range"));
                }
                children.push(c);
            }
            let dim = r.u32()? as usize;
            if dim != 0 && dim != DESCRIPTOR_LEN {
                return Err(r.corrupt("bad center dimension"));
            }
            let center = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            if word.is_none() && children.is_empty() {
                return Err(r.corrupt("internal node without children"));
            }
            nodes.push(TreeNode {
                center,
                children,
                word,
            });
        }
        let idf = (0..words).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        if nodes.is_empty() {
            return Err(PersistError::CorruptFile {
                path: path.display().to_string(),
                reason: "empty tree".into(),
            });
        }
        Ok(Self {
            branching,
            depth,
            kind,
            nodes,
            idf,
        })
    }

    /// Human-readable dump for inspection.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "branching": self.branching,
            "depth": self.depth,
            "word_count": self.word_count(),
            "nodes": self.nodes,
            "idf": self.idf,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn set_from(rows: &[Vec<f32>], kind: DescriptorKind) -> DescriptorSet {
        let mut s = DescriptorSet::new(kind);
        for r in rows {
            s.push(r);
        }
        s
    }

    fn clustered(k: usize, per: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for c in 0..k {
            for _ in 0..per {
                let mut v = vec![0.0f32; DESCRIPTOR_LEN];
                v[c * 7] = 1.0;
                for x in v.iter_mut().take(40) {
                    *x += rng.random_range(-0.01..0.01);
                }
                rows.push(v);
            }
        }
        rows
    }

    #[test]
    fn depth_one_centers_are_cluster_means() {
        let rows = clustered(4, 25, 1);
        let set = set_from(&rows, DescriptorKind::Local);
        let tree = train_vocabulary(&[&set], 4, 1, 7).unwrap();
        assert_eq!(tree.word_count(), 4);
        for c in 0..4 {
            let members = &rows[c * 25..(c + 1) * 25];
            let mean: Vec<f64> = (0..DESCRIPTOR_LEN)
                .map(|j| members.iter().map(|m| m[j] as f64).sum::<f64>() / 25.0)
                .collect();
            let best = tree
                .leaf_centers()
                .iter()
                .map(|ctr| sq_dist(ctr, &mean).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "cluster {c}: {best}");
        }
    }

    #[test]
    fn identical_descriptors_give_one_leaf() {
        let rows = vec![vec![0.1f32; DESCRIPTOR_LEN]; 30];
        let tree = train_vocabulary(&[&set_from(&rows, DescriptorKind::Local)], 5, 3, 0).unwrap();
        assert_eq!(tree.word_count(), 1);
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn deterministic_and_bounded() {
        let rows = clustered(9, 20, 2);
        let set = set_from(&rows, DescriptorKind::Region);
        let a = train_vocabulary(&[&set], 3, 2, 42).unwrap();
        let b = train_vocabulary(&[&set], 3, 2, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.word_count() <= 9);
        assert!(a
            .nodes
            .iter()
            .all(|n| n.word.is_some() || !n.children.is_empty()));
    }

    #[test]
    fn too_few_descriptors() {
        let set = set_from(&clustered(1, 3, 0), DescriptorKind::Local);
        assert!(matches!(
            train_vocabulary(&[&set], 4, 2, 0),
            Err(VocabError::InsufficientData {
                available: 3,
                required: 4
            })
        ));
    }

    fn trained() -> (VocabularyTree, Vec<Vec<f32>>) {
        let rows = clustered(6, 10, 3);
        let set = set_from(&rows, DescriptorKind::Local);
        (train_vocabulary(&[&set], 3, 2, 1).unwrap(), rows)
    }

    #[test]
    fn idf_cases() {
        let (mut tree, rows) = trained();
        let w0 = tree.word(&rows[0]);
        let all: Vec<DescriptorSet> = (0..6)
            .map(|_| set_from(&rows[0..1], DescriptorKind::Local))
            .collect();
        let refs: Vec<&DescriptorSet> = all.iter().collect();
        tree.compute_idf(&refs).unwrap();
        assert_eq!(tree.idf[w0 as usize], 0.0);
        assert!(tree
            .idf
            .iter()
            .enumerate()
            .all(|(w, &v)| w == w0 as usize || v == 0.0));

        // N = 10 images, word present in 2 of them: ln 5.
        let w1 = tree.word(&rows[10]);
        let mut imgs: Vec<DescriptorSet> = (0..10)
            .map(|_| set_from(&rows[20..21], DescriptorKind::Local))
            .collect();
        imgs[3] = set_from(&rows[10..11], DescriptorKind::Local);
        imgs[7] = set_from(&rows[10..11], DescriptorKind::Local);
        let refs: Vec<&DescriptorSet> = imgs.iter().collect();
        tree.compute_idf(&refs).unwrap();
        assert!((tree.idf[w1 as usize] - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn quantize_matches_brute_force_tf_idf() {
        let (mut tree, rows) = trained();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let imgs: Vec<DescriptorSet> = (0..5)
            .map(|_| {
                let pick: Vec<Vec<f32>> = (0..8)
                    .map(|_| rows[rng.random_range(0..rows.len())].clone())
                    .collect();
                set_from(&pick, DescriptorKind::Local)
            })
            .collect();
        let refs: Vec<&DescriptorSet> = imgs.iter().collect();
        tree.compute_idf(&refs).unwrap();
        let q = &imgs[2];
        let bow = tree.quantize(q).unwrap();
        // Oracle: exhaustive nearest leaf (the clusters are well separated,
        // so greedy descent agrees with it), then TF-IDF by hand.
        let leaves = tree.leaf_centers();
        let mut weights = vec![0.0; tree.word_count()];
        for d in q.iter() {
            let x = widen(d);
            let (w, _) = leaves
                .iter()
                .enumerate()
                .map(|(i, c)| (i, sq_dist(c, &x)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            weights[w] += tree.idf[w] / q.len() as f64;
        }
        let norm = weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (w, v) in weights.iter().enumerate() {
            assert!((bow.weight(w as u32) - v / norm).abs() < 1e-12);
        }
        // Order invariance.
        let mut rev: Vec<Vec<f32>> = q.iter().map(|d| d.to_vec()).collect();
        rev.reverse();
        assert_eq!(
            tree.quantize(&set_from(&rev, DescriptorKind::Local))
                .unwrap(),
            bow
        );
    }

    #[test]
    fn quantize_edge_cases() {
        let (tree, _) = trained();
        assert!(tree
            .quantize(&DescriptorSet::new(DescriptorKind::Local))
            .unwrap()
            .is_empty());
        assert!(matches!(
            tree.quantize(&DescriptorSet::new(DescriptorKind::Region)),
            Err(VocabError::KindMismatch { .. })
        ));
        let leaf = tree.nodes.iter().find(|n| n.word == Some(2)).unwrap();
        let d: Vec<f32> = leaf.center.iter().map(|&v| v as f32).collect();
        let bow = tree
            .quantize(&set_from(&[d], DescriptorKind::Local))
            .unwrap();
        assert_eq!(bow.entries(), &[(2, 1.0)]);
    }

    #[test]
    fn save_load_round_trip() {
        let (tree, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        tree.save(&p).unwrap();
        assert_eq!(VocabularyTree::load(&p).unwrap(), tree);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            VocabularyTree::load(&p),
            Err(PersistError::CorruptFile { .. })
        ));
        assert!(tree.to_json()["word_count"].as_u64().unwrap() > 0);
    }
}
