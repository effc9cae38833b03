//! Maximally stable extremal regions from an intensity component tree.

use image::GrayImage;
use nalgebra::Vector2;

use super::{Keypoint, RegionDetectorConfig};

const NONE: u32 = u32::MAX;

struct Node {
    level: u8,
    area: u32,
    sx: f64,
    sy: f64,
    parent: u32,
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    sx: Vec<f64>,
    sy: Vec<f64>,
}

impl UnionFind {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }
}

/// Component tree of the lower level sets `{I ≤ g}` under 4-connectivity.
fn component_tree(values: &[u8], width: usize, height: usize) -> Vec<Node> {
    let n = width * height;
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); 256];
    for (i, &v) in values.iter().enumerate() {
        buckets[v as usize].push(i as u32);
    }
    let mut uf = UnionFind {
        parent: (0..n as u32).collect(),
        size: vec![1; n],
        sx: (0..n).map(|i| (i % width) as f64).collect(),
        sy: (0..n).map(|i| (i / width) as f64).collect(),
    };
    let mut processed = vec![false; n];
    let mut last_node = vec![NONE; n];
    let mut pending: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut nodes: Vec<Node> = Vec::new();

    for (level, pixels) in buckets.iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        for &p in pixels {
            processed[p as usize] = true;
            let (x, y) = (p as usize % width, p as usize / width);
            let mut neighbors = [NONE; 4];
            if x > 0 {
                neighbors[0] = p - 1;
            }
            if x + 1 < width {
                neighbors[1] = p + 1;
            }
            if y > 0 {
                neighbors[2] = p - width as u32;
            }
            if y + 1 < height {
                neighbors[3] = p + width as u32;
            }
            for q in neighbors {
                if q == NONE || !processed[q as usize] {
                    continue;
                }
                let a = uf.find(p);
                let b = uf.find(q);
                if a == b {
                    continue;
                }
                let (r, c) = if uf.size[a as usize] >= uf.size[b as usize] {
                    (a, b)
                } else {
                    (b, a)
                };
                let (ri, ci) = (r as usize, c as usize);
                uf.parent[ci] = r;
                uf.size[ri] += uf.size[ci];
                uf.sx[ri] += uf.sx[ci];
                uf.sy[ri] += uf.sy[ci];
                let mut moved = std::mem::take(&mut pending[ci]);
                if last_node[ci] != NONE {
                    moved.push(last_node[ci]);
                    last_node[ci] = NONE;
                }
                pending[ri].extend(moved);
            }
        }
        let mut roots: Vec<u32> = pixels.iter().map(|&p| uf.find(p)).collect();
        roots.sort_unstable();
        roots.dedup();
        for r in roots {
            let ri = r as usize;
            let id = nodes.len() as u32;
            nodes.push(Node {
                level: level as u8,
                area: uf.size[ri],
                sx: uf.sx[ri],
                sy: uf.sy[ri],
                parent: NONE,
            });
            let mut children = std::mem::take(&mut pending[ri]);
            if last_node[ri] != NONE {
                children.push(last_node[ri]);
            }
            for c in children {
                nodes[c as usize].parent = id;
            }
            last_node[ri] = id;
        }
    }
    nodes
}

fn detect_polarity(
    values: &[u8],
    width: usize,
    height: usize,
    cfg: &RegionDetectorConfig,
    out: &mut Vec<Keypoint>,
) {
    let nodes = component_tree(values, width, height);
    let total = (width * height) as f64;
    let delta = cfg.delta as u32;
    let variation: Vec<f64> = (0..nodes.len())
        .map(|i| {
            let n = &nodes[i];
            if n.parent == NONE {
                // The whole image is never a region.
                return f64::INFINITY;
            }
            let limit = n.level as u32 + delta;
            let mut a = i as u32;
            loop {
                let p = nodes[a as usize].parent;
                if p == NONE || nodes[p as usize].level as u32 > limit {
                    break;
                }
                a = p;
            }
            (nodes[a as usize].area - n.area) as f64 / n.area as f64
        })
        .collect();
    let mut min_child_var = vec![f64::INFINITY; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if n.parent != NONE {
            let p = n.parent as usize;
            min_child_var[p] = min_child_var[p].min(variation[i]);
        }
    }
    let max_area = cfg.max_area_fraction * total;
    let mut selected = vec![false; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        let v = variation[i];
        let parent_ok = n.parent == NONE || v < variation[n.parent as usize];
        let area = n.area as f64;
        if parent_ok
            && v <= min_child_var[i]
            && v <= cfg.max_variation
            && area >= cfg.min_area as f64
            && area <= max_area
        {
            selected[i] = true;
        }
    }
    // Drop a region when its nearest selected ancestor is nearly the same size.
    let mut keep = selected.clone();
    for i in 0..nodes.len() {
        if !selected[i] {
            continue;
        }
        let mut a = nodes[i].parent;
        while a != NONE && !selected[a as usize] {
            a = nodes[a as usize].parent;
        }
        if a != NONE {
            let aa = nodes[a as usize].area as f64;
            if (aa - nodes[i].area as f64) / aa < cfg.min_diversity {
                keep[i] = false;
            }
        }
    }
    for (i, n) in nodes.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let area = n.area as f64;
        out.push(Keypoint {
            position: Vector2::new(n.sx / area, n.sy / area),
            scale: (area / std::f64::consts::PI).sqrt() / 3.0,
            orientation: 0.0,
            response: 1.0 - variation[i],
        });
    }
}

/// Dark-on-bright and bright-on-dark stable regions, reported by centroid.
pub fn detect_mser(img: &GrayImage, cfg: &RegionDetectorConfig) -> Vec<Keypoint> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::new();
    if w == 0 || h == 0 {
        return out;
    }
    detect_polarity(img.as_raw(), w, h, cfg, &mut out);
    let inverted: Vec<u8> = img.as_raw().iter().map(|v| 255 - v).collect();
    detect_polarity(&inverted, w, h, cfg, &mut out);
    out
}
