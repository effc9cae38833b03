//! Multi-scale Harris corners on a Gaussian scale space.

use nalgebra::Vector2;

use super::pyramid::{gaussian_blur, FloatImage, ScaleSpace};
use super::{Keypoint, LocalDetectorConfig};

/// Scale-normalized Harris response `σ⁴ (det M − κ tr² M)` of one level.
pub fn harris_response(img: &FloatImage, sigma_d: f64, kappa: f64, integration: f64) -> FloatImage {
    let (w, h) = (img.width, img.height);
    let mut xx = FloatImage::new(w, h);
    let mut yy = FloatImage::new(w, h);
    let mut xy = FloatImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = 0.5 * (img.at_clamped(xi + 1, yi) - img.at_clamped(xi - 1, yi));
            let gy = 0.5 * (img.at_clamped(xi, yi + 1) - img.at_clamped(xi, yi - 1));
            let i = y * w + x;
            xx.data[i] = gx * gx;
            yy.data[i] = gy * gy;
            xy.data[i] = gx * gy;
        }
    }
    let si = integration * sigma_d;
    let xx = gaussian_blur(&xx, si);
    let yy = gaussian_blur(&yy, si);
    let xy = gaussian_blur(&xy, si);
    let norm = (sigma_d * sigma_d * sigma_d * sigma_d) as f32;
    let k = kappa as f32;
    let mut out = FloatImage::new(w, h);
    for i in 0..w * h {
        let det = xx.data[i] * yy.data[i] - xy.data[i] * xy.data[i];
        let tr = xx.data[i] + yy.data[i];
        out.data[i] = norm * (det - k * tr * tr);
    }
    out
}

/// Offset of the vertex of the parabola through `(−1, a)`, `(0, b)`, `(1, c)`.
fn parabola_peak(a: f32, b: f32, c: f32) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-20 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5) as f64
}

/// Spatial maxima of the response at each scale that are also not exceeded
/// by the same pixel one level up or down. Corners have no characteristic
/// scale of their own, so a full 3×3×3 extremum test would reject ideal ones.
/// Every detection scale appears once: octave 0 contributes levels
/// `0..=L` and later octaves `1..=L` (their level 0 repeats the previous
/// octave's level `L`).
pub fn detect_harris(space: &ScaleSpace, cfg: &LocalDetectorConfig) -> Vec<Keypoint> {
    let levels = space.levels_per_octave;
    let mut out = Vec::new();
    for (o, oct) in space.octaves.iter().enumerate() {
        let responses: Vec<FloatImage> = oct
            .levels
            .iter()
            .zip(&oct.sigmas)
            .map(|(img, &s)| harris_response(img, s, cfg.kappa, cfg.integration_scale))
            .collect();
        let (w, h) = (responses[0].width, responses[0].height);
        let margin = cfg.border.max(1);
        if w <= 2 * margin || h <= 2 * margin {
            continue;
        }
        let thr = cfg.threshold as f32;
        let first = if o == 0 { 0 } else { 1 };
        for s in first..=levels {
            let cur = &responses[s];
            let below = s.checked_sub(1).map(|b| &responses[b]);
            let above = &responses[s + 1];
            for y in margin..h - margin {
                for x in margin..w - margin {
                    let v = cur.at(x, y);
                    if v <= thr || above.at(x, y) > v || below.is_some_and(|b| b.at(x, y) >= v) {
                        continue;
                    }
                    let mut is_max = true;
                    'outer: for dy in 0..3 {
                        for dx in 0..3 {
                            let order = (dy * 3 + dx).cmp(&4);
                            if order.is_eq() {
                                continue;
                            }
                            // Plateaus go to the first sample in scan order.
                            let n = cur.at(x + dx - 1, y + dy - 1);
                            if n > v || (n == v && order.is_lt()) {
                                is_max = false;
                                break 'outer;
                            }
                        }
                    }
                    if !is_max {
                        continue;
                    }
                    let ox = parabola_peak(cur.at(x - 1, y), v, cur.at(x + 1, y));
                    let oy = parabola_peak(cur.at(x, y - 1), v, cur.at(x, y + 1));
                    let os = below.map_or(0.0, |b| parabola_peak(b.at(x, y), v, above.at(x, y)));
                    let sigma =
                        space.sigma0 * 2f64.powf((s as f64 + os) / levels as f64) * oct.step;
                    let pos = Vector2::new((x as f64 + ox) * oct.step, (y as f64 + oy) * oct.step);
                    if pos.x < 0.0
                        || pos.y < 0.0
                        || pos.x > (space.width - 1) as f64
                        || pos.y > (space.height - 1) as f64
                    {
                        continue;
                    }
                    out.push(Keypoint {
                        position: pos,
                        scale: sigma,
                        orientation: 0.0,
                        response: v as f64,
                    });
                }
            }
        }
    }
    out
}
