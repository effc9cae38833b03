//! Gradient-orientation histogram descriptor (4×4 cells × 8 bins).

use std::f64::consts::TAU;

use super::pyramid::{FloatImage, ScaleSpace};
use super::Keypoint;

pub const DESCRIPTOR_LEN: usize = 128;
const CELLS: usize = 4;
const BINS: usize = 8;
/// Cell width in units of the keypoint scale.
const MAGNIFICATION: f64 = 3.0;
const CLIP: f32 = 0.2;
const MAX_RADIUS: f64 = 40.0;

#[inline]
fn gradient(img: &FloatImage, x: isize, y: isize) -> (f64, f64) {
    let gx = 0.5 * (img.at_clamped(x + 1, y) - img.at_clamped(x - 1, y)) as f64;
    let gy = 0.5 * (img.at_clamped(x, y + 1) - img.at_clamped(x, y - 1)) as f64;
    (gx, gy)
}

/// Dominant gradient direction around the keypoint (36-bin histogram with
/// parabolic peak interpolation).
pub fn dominant_orientation(space: &ScaleSpace, kp: &Keypoint) -> f64 {
    let (o, s) = space.nearest_level(kp.scale);
    let oct = &space.octaves[o];
    let img = &oct.levels[s];
    let x0 = kp.position.x / oct.step;
    let y0 = kp.position.y / oct.step;
    let sigma = 1.5 * kp.scale / oct.step;
    let radius = (3.0 * sigma).round().min(MAX_RADIUS) as isize;
    let mut hist = [0.0f64; 36];
    let (cx, cy) = (x0.round() as isize, y0.round() as isize);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (gx, gy) = gradient(img, cx + dx, cy + dy);
            let m = (gx * gx + gy * gy).sqrt();
            if m == 0.0 {
                continue;
            }
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            let a = gy.atan2(gx).rem_euclid(TAU);
            let b = ((a / TAU * 36.0) as usize).min(35);
            hist[b] += w * m;
        }
    }
    let (peak, _) = hist
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    let l = hist[(peak + 35) % 36];
    let r = hist[(peak + 1) % 36];
    let c = hist[peak];
    let denom = l - 2.0 * c + r;
    let off = if denom.abs() > 1e-20 {
        0.5 * (l - r) / denom
    } else {
        0.0
    };
    ((peak as f64 + 0.5 + off) / 36.0 * TAU).rem_euclid(TAU)
}

/// Descriptor at the keypoint's scale and orientation; `None` on a flat
/// patch.
pub fn describe(space: &ScaleSpace, kp: &Keypoint) -> Option<[f32; DESCRIPTOR_LEN]> {
    let (o, s) = space.nearest_level(kp.scale);
    let oct = &space.octaves[o];
    let img = &oct.levels[s];
    let x0 = kp.position.x / oct.step;
    let y0 = kp.position.y / oct.step;
    let cell = MAGNIFICATION * kp.scale / oct.step;
    let half = cell * CELLS as f64 / 2.0;
    let radius = (half * std::f64::consts::SQRT_2 + 1.0)
        .ceil()
        .min(MAX_RADIUS) as isize;
    let (sin_o, cos_o) = kp.orientation.sin_cos();
    let weight_sigma = half;
    let mut hist = [0.0f64; DESCRIPTOR_LEN];
    let (cx, cy) = (x0.round() as isize, y0.round() as isize);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = (cx + dx) as f64 - x0;
            let py = (cy + dy) as f64 - y0;
            // Rotate into the keypoint frame.
            let rx = cos_o * px + sin_o * py;
            let ry = -sin_o * px + cos_o * py;
            let bx = rx / cell + CELLS as f64 / 2.0 - 0.5;
            let by = ry / cell + CELLS as f64 / 2.0 - 0.5;
            if bx <= -1.0 || by <= -1.0 || bx >= CELLS as f64 || by >= CELLS as f64 {
                continue;
            }
            let (gx, gy) = gradient(img, cx + dx, cy + dy);
            let m = (gx * gx + gy * gy).sqrt();
            if m == 0.0 {
                continue;
            }
            let w = (-(rx * rx + ry * ry) / (2.0 * weight_sigma * weight_sigma)).exp() * m;
            let angle = (gy.atan2(gx) - kp.orientation).rem_euclid(TAU);
            let bo = angle / TAU * BINS as f64;
            let (x_i, y_i, o_i) = (bx.floor(), by.floor(), bo.floor());
            let (fx, fy, fo) = (bx - x_i, by - y_i, bo - o_i);
            for (iy, wy) in [(y_i as isize, 1.0 - fy), (y_i as isize + 1, fy)] {
                if iy < 0 || iy >= CELLS as isize {
                    continue;
                }
                for (ix, wx) in [(x_i as isize, 1.0 - fx), (x_i as isize + 1, fx)] {
                    if ix < 0 || ix >= CELLS as isize {
                        continue;
                    }
                    for (io, wo) in [
                        (o_i as usize % BINS, 1.0 - fo),
                        ((o_i as usize + 1) % BINS, fo),
                    ] {
                        let idx = (iy as usize * CELLS + ix as usize) * BINS + io;
                        hist[idx] += w * wx * wy * wo;
                    }
                }
            }
        }
    }
    normalize_clip(&hist)
}

fn normalize_clip(hist: &[f64; DESCRIPTOR_LEN]) -> Option<[f32; DESCRIPTOR_LEN]> {
    let n = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return None;
    }
    let mut out = [0.0f32; DESCRIPTOR_LEN];
    for (o, h) in out.iter_mut().zip(hist) {
        *o = ((h / n) as f32).min(CLIP);
    }
    let n2 = out.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    if !(n2 > 1e-12) {
        return None;
    }
    for o in out.iter_mut() {
        *o = (*o as f64 / n2) as f32;
    }
    Some(out)
}
