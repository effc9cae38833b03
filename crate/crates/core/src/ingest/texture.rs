//! Procedural street textures.
//!
//! All patterns are evaluated analytically at a world point together with
//! the footprint of the pixel that sees it, so detail finer than about two
//! pixels fades out instead of aliasing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SKY: [f64; 3] = [196.0, 214.0, 236.0];

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash(seed: u64, a: i64, b: i64, c: u64) -> u64 {
    let h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let h = mix64(h ^ a as u64);
    let h = mix64(h ^ (b as u64).rotate_left(21));
    mix64(h ^ c.rotate_left(42))
}

/// Uniform in [0, 1).
fn unit(seed: u64, a: i64, b: i64, c: u64) -> f64 {
    (hash(seed, a, b, c) >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn quintic(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Lattice value noise in [-1, 1] with unit cell size.
fn value_noise(seed: u64, octave: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (quintic(x - fx), quintic(y - fy));
    let v = |i, j| 2.0 * unit(seed, i, j, octave) - 1.0;
    let a = v(ix, iy) + tx * (v(ix + 1, iy) - v(ix, iy));
    let b = v(ix, iy + 1) + tx * (v(ix + 1, iy + 1) - v(ix, iy + 1));
    a + ty * (b - a)
}

/// Sum of noise octaves `(wavelength, amplitude)`. An octave is dropped
/// below `cutoff` and fully present above twice that.
fn band_limited(seed: u64, octaves: &[(f64, f64)], x: f64, y: f64, cutoff: f64) -> f64 {
    octaves
        .iter()
        .enumerate()
        .map(|(k, &(lambda, amp))| {
            let keep = smoothstep(lambda / cutoff - 1.0);
            if keep == 0.0 {
                0.0
            } else {
                keep * amp * value_noise(seed, k as u64, x / lambda, y / lambda)
            }
        })
        .sum()
}

/// Indicator of `[lo, hi]` with edges blurred over `soft`.
fn soft_box(x: f64, lo: f64, hi: f64, soft: f64) -> f64 {
    smoothstep((x - lo) / soft + 0.5) * smoothstep((hi - x) / soft + 0.5)
}

/// Left or right side of the street as seen when facing along it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone)]
struct Building {
    start: f64,
    end: f64,
    base: f64,
    tint: [f64; 3],
    storey: f64,
    bay: f64,
    window_w: f64,
    window_h: f64,
    sill: f64,
    id: u64,
}

#[derive(Debug, Clone)]
pub struct StreetTexture {
    seed: u64,
    height: f64,
    softness: f64,
    left: Vec<Building>,
    right: Vec<Building>,
}

impl StreetTexture {
    /// Buildings of random width cover `[u_min, u_max]` on both sides;
    /// `height` is the facade height. Edges are blurred over `softness`
    /// pixel footprints.
    pub fn new(seed: u64, u_min: f64, u_max: f64, height: f64, softness: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = |rng: &mut ChaCha8Rng, tag: u64| {
            let mut out = Vec::new();
            let mut u = u_min - rng.random_range(0.0..10.0);
            while u < u_max {
                let width = rng.random_range(8.0..22.0);
                let tint_shift = rng.random_range(-0.12..0.12);
                out.push(Building {
                    start: u,
                    end: u + width,
                    base: rng.random_range(95.0..175.0),
                    tint: [1.0 + tint_shift, 1.0, 1.0 - tint_shift],
                    storey: rng.random_range(2.8..3.6),
                    bay: rng.random_range(2.2..3.6),
                    window_w: rng.random_range(0.9..1.5),
                    window_h: rng.random_range(1.3..1.9),
                    sill: rng.random_range(0.6..0.9),
                    id: tag << 32 | out.len() as u64,
                });
                u += width;
            }
            out
        };
        let left = side(&mut rng, 1);
        let right = side(&mut rng, 2);
        Self {
            seed,
            height,
            softness,
            left,
            right,
        }
    }

    /// RGB radiance of a facade point; `u` runs along the street, `v` is
    /// height above ground.
    ///
    /// The pattern is continuous in `(u, v)`: building boundaries sit under
    /// a pilaster of fixed color, and windows and shop fronts keep clear of
    /// their cell borders even when blurred.
    pub fn facade(&self, side: Side, u: f64, v: f64, footprint: f64) -> [f64; 3] {
        let list = match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        };
        let i = list
            .partition_point(|b| b.end <= u)
            .min(list.len().saturating_sub(1));
        let b = &list[i];
        let soft = footprint.max(0.005) * self.softness;
        let s = self.seed ^ b.id.wrapping_mul(0x2545_f491_4f6c_dd1d);

        let mut g = b.base;
        g += band_limited(
            s,
            &[(2.5, 16.0), (0.9, 12.0), (0.35, 9.0), (0.12, 6.0)],
            u,
            v,
            soft,
        );

        let lu = u - b.start;
        let floor_pos = v / b.storey;
        let to_cornice = (floor_pos - floor_pos.round()) * b.storey;
        g -= 35.0 * soft_box(to_cornice, -0.08, 0.08, soft);

        let storey = floor_pos.floor();
        let width = b.end - b.start;
        let inset = 0.5 * (width - b.bay * (width / b.bay).floor());
        let bay_pos = (lu - inset) / b.bay;
        let bay = bay_pos.floor();
        let local_u = (bay_pos - bay - 0.5) * b.bay;
        let local_v = v - storey * b.storey;
        let (bi, si) = (bay as i64, storey as i64);
        // Keeps blurred boxes inside their bay and storey.
        let envelope = smoothstep((0.5 * b.bay - local_u) / soft)
            * smoothstep((0.5 * b.bay + local_u) / soft)
            * smoothstep(local_v / soft)
            * smoothstep((b.storey - local_v) / soft);
        if storey < 1.0 {
            // Ground floor: shop fronts and posters of random size and shade.
            if unit(s, bi, si, 7) < 0.55 {
                let w = b.bay * (0.3 + 0.4 * unit(s, bi, si, 8));
                let top = 1.4 + 1.0 * unit(s, bi, si, 9);
                let shade = 30.0 + 170.0 * unit(s, bi, si, 10);
                let m =
                    soft_box(local_u, -0.5 * w, 0.5 * w, soft) * soft_box(local_v, 0.3, top, soft);
                g += envelope * m * (shade - g);
            }
        } else if (storey + 1.0) * b.storey <= self.height {
            let top = (b.sill + b.window_h).min(b.storey - 0.4);
            let m = soft_box(local_u, -0.5 * b.window_w, 0.5 * b.window_w, soft)
                * soft_box(local_v, b.sill, top, soft);
            if m > 0.0 {
                let shade = 25.0 + 110.0 * unit(s, bi, si, 11);
                // Some windows are split by a mullion.
                let mullion = if unit(s, bi, si, 12) < 0.5 {
                    1.0 - soft_box(local_u, -0.04, 0.04, soft) * 0.7
                } else {
                    1.0
                };
                g += envelope * m * (shade * mullion - g);
            }
        }
        let g = g.clamp(0.0, 255.0);
        let own = [g * b.tint[0], g * b.tint[1], g * b.tint[2]];
        // Party-wall pilaster, wide enough to cover the seam at any blur.
        let half = 0.25f64.max(soft);
        let m = 1.0
            - smoothstep((lu - half) / soft + 0.5) * smoothstep((b.end - u - half) / soft + 0.5);
        let pilaster = 182.0 + band_limited(self.seed ^ 0x0b1a, &[(0.8, 8.0)], u, v, soft);
        own.map(|c| (c + m * (pilaster - c)).clamp(0.0, 255.0))
    }

    /// RGB radiance of the ground at along-street `u` and lateral `w`
    /// (positive to the left); `half_width` is the facade distance.
    pub fn ground(&self, u: f64, w: f64, half_width: f64, footprint: f64) -> [f64; 3] {
        let s = self.seed ^ 0x00c0_ffee;
        let soft = footprint.max(0.005) * self.softness;
        let sidewalk = half_width - 3.0;
        let mut g;
        if w.abs() > sidewalk {
            // Paving slabs with joints.
            g = 150.0 + band_limited(s ^ 1, &[(1.5, 10.0), (0.4, 8.0), (0.15, 5.0)], u, w, soft);
            let slab = 0.75;
            let du = (u / slab - (u / slab).round()) * slab;
            let dw = (w / slab - (w / slab).round()) * slab;
            let joint = 1.0
                - (1.0 - soft_box(du, -0.03, 0.03, soft)) * (1.0 - soft_box(dw, -0.03, 0.03, soft));
            g -= 40.0 * joint * smoothstep(0.24 / soft - 1.0);
        } else {
            g = 85.0
                + band_limited(
                    s ^ 2,
                    &[(2.0, 12.0), (0.7, 10.0), (0.25, 8.0), (0.1, 5.0)],
                    u,
                    w,
                    soft,
                );
            // Dashed centre line with random dash lengths.
            let cell = (u / 6.0).floor();
            let dash = 1.5 + 2.5 * unit(s, cell as i64, 0, 3);
            let cu = u - cell * 6.0;
            let envelope = smoothstep(cu / soft) * smoothstep((6.0 - cu) / soft);
            g += envelope
                * soft_box(cu, 0.5, 0.5 + dash, soft)
                * soft_box(w, -0.08, 0.08, soft)
                * (215.0 - g);
            // Sparse patches and manhole covers on a jittered lattice.
            let (cx, cy) = ((u / 3.0).floor(), (w / 3.0).floor());
            let (i, j) = (cx as i64, cy as i64);
            if unit(s, i, j, 4) < 0.45 {
                let pu = (cx + 0.25 + 0.5 * unit(s, i, j, 5)) * 3.0;
                let pw = (cy + 0.25 + 0.5 * unit(s, i, j, 6)) * 3.0;
                let size = 0.2 + 0.35 * unit(s, i, j, 7);
                let shade = 40.0 + 150.0 * unit(s, i, j, 8);
                let m = soft_box(u - pu, -size, size, soft)
                    * soft_box(w - pw, -0.7 * size, 0.7 * size, soft);
                let (lu, lw) = (u - cx * 3.0, w - cy * 3.0);
                let envelope = smoothstep(lu / soft)
                    * smoothstep((3.0 - lu) / soft)
                    * smoothstep(lw / soft)
                    * smoothstep((3.0 - lw) / soft);
                g += envelope * m * (shade - g);
            }
        }
        // Kerb stone over the road/sidewalk seam.
        let half = 0.15f64.max(soft);
        let m = soft_box(w.abs() - sidewalk, -half, half, soft);
        g += m * (200.0 - g);
        let g = g.clamp(0.0, 255.0);
        [g, g, (g * 1.03).min(255.0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_bounded_and_continuous() {
        for k in 0..200 {
            let x = k as f64 * 0.173 - 17.0;
            let y = k as f64 * 0.071 + 3.0;
            let v = value_noise(5, 0, x, y);
            assert!((-1.0..=1.0).contains(&v));
            let dv = (value_noise(5, 0, x + 1e-7, y) - v).abs();
            assert!(dv < 1e-5);
        }
    }

    #[test]
    fn coarse_footprint_removes_fine_octaves() {
        let oct = [(0.1, 10.0)];
        assert_eq!(band_limited(1, &oct, 0.37, 0.91, 0.1), 0.0);
        assert!(band_limited(1, &oct, 0.37, 0.91, 0.001).abs() > 0.0);
    }

    #[test]
    fn texture_is_deterministic_and_in_range() {
        let a = StreetTexture::new(3, -50.0, 150.0, 18.0, 2.0);
        let b = StreetTexture::new(3, -50.0, 150.0, 18.0, 2.0);
        let c = StreetTexture::new(4, -50.0, 150.0, 18.0, 2.0);
        let mut differs = false;
        for k in 0..500 {
            let u = k as f64 * 0.31 - 40.0;
            let v = (k % 60) as f64 * 0.3;
            let p = a.facade(Side::Left, u, v, 0.02);
            assert_eq!(p, b.facade(Side::Left, u, v, 0.02));
            assert!(p.iter().all(|x| (0.0..=255.0).contains(x)));
            differs |= p != c.facade(Side::Left, u, v, 0.02);
            let q = a.ground(u, v - 9.0, 12.0, 0.02);
            assert!(q.iter().all(|x| (0.0..=255.0).contains(x)));
        }
        assert!(differs);
    }
}
