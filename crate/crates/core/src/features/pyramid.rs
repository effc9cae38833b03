use image::GrayImage;

/// Single-channel float image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Value with coordinates clamped to the image.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }

    /// Every second pixel in both directions.
    pub fn downsample(&self) -> Self {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.at(2 * x, 2 * y);
            }
        }
        out
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &FloatImage, sigma: f64) -> FloatImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = FloatImage::new(w, h);
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = FloatImage::new(w, h);
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &tmp.data[yy * w..(yy + 1) * w];
            let dst = &mut out.data[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += kv * src[x];
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Octave {
    /// Size of one octave pixel in base-image pixels.
    pub step: f64,
    pub levels: Vec<FloatImage>,
    /// Blur of each level in octave pixels.
    pub sigmas: Vec<f64>,
}

/// Gaussian scale space with `levels + 2` images per octave, so every one of
/// the `levels` detection scales has a neighbor on both sides.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub octaves: Vec<Octave>,
    pub levels_per_octave: usize,
    pub sigma0: f64,
    pub width: usize,
    pub height: usize,
}

/// Blur assumed already present in the input image.
const INPUT_BLUR: f64 = 0.5;
const MIN_OCTAVE_SIZE: usize = 16;

impl ScaleSpace {
    pub fn build(img: &GrayImage, octaves: usize, levels: usize, sigma0: f64) -> Self {
        let base = FloatImage::from_gray(img);
        let (width, height) = (base.width, base.height);
        let mut current = gaussian_blur(
            &base,
            (sigma0 * sigma0 - INPUT_BLUR * INPUT_BLUR).max(0.0).sqrt(),
        );
        let sigmas: Vec<f64> = (0..levels + 2)
            .map(|s| sigma0 * 2f64.powf(s as f64 / levels as f64))
            .collect();
        let mut out = Vec::new();
        for o in 0..octaves {
            if current.width.min(current.height) < MIN_OCTAVE_SIZE {
                break;
            }
            let mut imgs = vec![current.clone()];
            for s in 1..levels + 2 {
                let inc = (sigmas[s] * sigmas[s] - sigmas[s - 1] * sigmas[s - 1]).sqrt();
                let next = gaussian_blur(&imgs[s - 1], inc);
                imgs.push(next);
            }
            let next_base = imgs[levels].downsample();
            out.push(Octave {
                step: 2f64.powi(o as i32),
                levels: imgs,
                sigmas: sigmas.clone(),
            });
            current = next_base;
        }
        Self {
            octaves: out,
            levels_per_octave: levels,
            sigma0,
            width,
            height,
        }
    }

    /// Octave and level whose absolute blur is closest to `scale` (base
    /// pixels), on a log scale.
    pub fn nearest_level(&self, scale: f64) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_d = f64::INFINITY;
        for (o, oct) in self.octaves.iter().enumerate() {
            for s in 0..=self.levels_per_octave {
                let d = (oct.sigmas[s] * oct.step / scale).ln().abs();
                if d < best_d {
                    best_d = d;
                    best = (o, s);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constant_and_mass() {
        let mut img = FloatImage::new(31, 17);
        img.data.iter_mut().for_each(|v| *v = 0.25);
        let b = gaussian_blur(&img, 2.0);
        assert!(b.data.iter().all(|v| (v - 0.25).abs() < 1e-6));
        let mut d = FloatImage::new(41, 41);
        d.data[20 * 41 + 20] = 1.0;
        let b = gaussian_blur(&d, 1.5);
        let s: f32 = b.data.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
        // Second moment matches σ².
        let var: f64 = (0..41)
            .map(|x| b.at(x, 20) as f64 * ((x as f64 - 20.0).powi(2)))
            .sum::<f64>()
            / (0..41).map(|x| b.at(x, 20) as f64).sum::<f64>();
        assert!((var - 2.25).abs() < 0.05);
    }

    #[test]
    fn pyramid_shape() {
        let img = GrayImage::new(128, 96);
        let ss = ScaleSpace::build(&img, 4, 3, 1.6);
        assert_eq!(ss.octaves.len(), 3);
        assert_eq!(ss.octaves[1].levels[0].width, 64);
        assert_eq!(ss.octaves[0].levels.len(), 5);
        assert_eq!(ss.nearest_level(3.2), (0, 3));
        assert_eq!(ss.nearest_level(5.0), (1, 2));
    }
}
