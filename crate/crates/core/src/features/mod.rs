//! Image normalization, keypoints, descriptors and match verification.
//!
//! Two detectors share one Gaussian scale space: a multi-scale Harris
//! corner detector (`Local`) and a maximally-stable-region detector
//! (`Region`). Both are described by the same 128-d gradient histogram
//! descriptor, and both sit behind [`FeatureDetector`] so other detectors can
//! be swapped in.

mod descriptor;
mod harris;
mod matching;
mod mser;
pub mod pyramid;
mod vld;

pub use descriptor::{describe, dominant_orientation, DESCRIPTOR_LEN};
pub use harris::{detect_harris, harris_response};
pub use matching::match_descriptors;
pub use mser::detect_mser;
pub use pyramid::ScaleSpace;
pub use vld::{verify_virtual_lines, VerifiedMatches, VldConfig};

use image::GrayImage;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub position: Vector2<f64>,
    /// Blur scale in pixels.
    pub scale: f64,
    pub orientation: f64,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Local,
    Region,
}

impl DescriptorKind {
    pub fn tag(self) -> u8 {
        match self {
            DescriptorKind::Local => 0,
            DescriptorKind::Region => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DescriptorKind::Local),
            1 => Some(DescriptorKind::Region),
            _ => None,
        }
    }
}

/// Contiguous `DESCRIPTOR_LEN`-float descriptors of one kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub kind: DescriptorKind,
    data: Vec<f32>,
}

impl DescriptorSet {
    pub fn new(kind: DescriptorKind) -> Self {
        Self {
            kind,
            data: Vec::new(),
        }
    }

    pub fn from_flat(kind: DescriptorKind, data: Vec<f32>) -> Option<Self> {
        data.len()
            .is_multiple_of(DESCRIPTOR_LEN)
            .then_some(Self { kind, data })
    }

    pub fn push(&mut self, d: &[f32]) {
        assert_eq!(d.len(), DESCRIPTOR_LEN, "descriptor length");
        self.data.extend_from_slice(d);
    }

    pub fn get(&self, i: usize) -> &[f32] {
        &self.data[i * DESCRIPTOR_LEN..(i + 1) * DESCRIPTOR_LEN]
    }

    pub fn len(&self) -> usize {
        self.data.len() / DESCRIPTOR_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(DESCRIPTOR_LEN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub query_idx: usize,
    pub ref_idx: usize,
    pub distance: f64,
}

impl MatchPair {
    pub fn new(query_idx: usize, ref_idx: usize, distance: f64) -> Self {
        Self {
            query_idx,
            ref_idx,
            distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalDetectorConfig {
    pub max_features: usize,
    pub octaves: usize,
    pub levels: usize,
    pub sigma0: f64,
    pub kappa: f64,
    /// Integration blur as a multiple of the differentiation blur.
    pub integration_scale: f64,
    /// Minimum scale-normalized Harris response (intensities in [0, 1]).
    pub threshold: f64,
    /// Octave pixels excluded along the border.
    pub border: usize,
}

impl Default for LocalDetectorConfig {
    fn default() -> Self {
        Self {
            max_features: 1000,
            octaves: 4,
            levels: 3,
            sigma0: 1.6,
            kappa: 0.04,
            integration_scale: 1.4,
            threshold: 1e-6,
            border: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionDetectorConfig {
    pub max_features: usize,
    /// Intensity step over which area change is measured.
    pub delta: u8,
    pub min_area: usize,
    pub max_area_fraction: f64,
    pub max_variation: f64,
    pub min_diversity: f64,
}

impl Default for RegionDetectorConfig {
    fn default() -> Self {
        Self {
            max_features: 400,
            delta: 5,
            min_area: 30,
            max_area_fraction: 0.1,
            max_variation: 0.25,
            min_diversity: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub local: LocalDetectorConfig,
    pub region: RegionDetectorConfig,
    /// Skip orientation assignment (descriptors in image axes).
    pub upright: bool,
    pub ratio: f64,
    pub mutual: bool,
    pub vld: VldConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            local: LocalDetectorConfig::default(),
            region: RegionDetectorConfig::default(),
            upright: true,
            ratio: 0.8,
            mutual: true,
            vld: VldConfig::default(),
        }
    }
}

/// Keypoints with their descriptors, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: DescriptorSet,
}

impl FeatureSet {
    pub fn empty(kind: DescriptorKind) -> Self {
        Self {
            keypoints: Vec::new(),
            descriptors: DescriptorSet::new(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub local: FeatureSet,
    pub region: FeatureSet,
}

impl ImageFeatures {
    pub fn get(&self, kind: DescriptorKind) -> &FeatureSet {
        match kind {
            DescriptorKind::Local => &self.local,
            DescriptorKind::Region => &self.region,
        }
    }
}

pub trait FeatureDetector {
    fn kind(&self) -> DescriptorKind;
    fn max_features(&self) -> usize;
    fn detect(&self, image: &GrayImage, space: &ScaleSpace) -> Vec<Keypoint>;
}

pub struct HarrisDetector(pub LocalDetectorConfig);

impl FeatureDetector for HarrisDetector {
    fn kind(&self) -> DescriptorKind {
        DescriptorKind::Local
    }

    fn max_features(&self) -> usize {
        self.0.max_features
    }

    fn detect(&self, _image: &GrayImage, space: &ScaleSpace) -> Vec<Keypoint> {
        detect_harris(space, &self.0)
    }
}

pub struct MserDetector(pub RegionDetectorConfig);

impl FeatureDetector for MserDetector {
    fn kind(&self) -> DescriptorKind {
        DescriptorKind::Region
    }

    fn max_features(&self) -> usize {
        self.0.max_features
    }

    fn detect(&self, image: &GrayImage, _space: &ScaleSpace) -> Vec<Keypoint> {
        detect_mser(image, &self.0)
    }
}

/// Histogram equalization with the usual cumulative-histogram remap: the
/// lowest occupied level goes to 0 and the highest to 255.
pub fn equalize_histogram(image: &GrayImage) -> GrayImage {
    let mut hist = [0u64; 256];
    for &v in image.as_raw() {
        hist[v as usize] += 1;
    }
    let total = image.as_raw().len() as u64;
    let Some(first) = hist.iter().position(|&c| c > 0) else {
        return image.clone();
    };
    if hist[first] == total {
        return image.clone();
    }
    let scale = 255.0 / (total - hist[first]) as f64;
    let mut lut = [0u8; 256];
    let mut sum = 0u64;
    for i in first + 1..256 {
        sum += hist[i];
        lut[i] = (sum as f64 * scale).round_ties_even().clamp(0.0, 255.0) as u8;
    }
    let data = image.as_raw().iter().map(|&v| lut[v as usize]).collect();
    GrayImage::from_raw(image.width(), image.height(), data).expect("same dimensions")
}

fn finish(
    mut kps: Vec<Keypoint>,
    max: usize,
    space: &ScaleSpace,
    upright: bool,
    kind: DescriptorKind,
) -> FeatureSet {
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.position.y.total_cmp(&b.position.y))
            .then(a.position.x.total_cmp(&b.position.x))
            .then(a.scale.total_cmp(&b.scale))
    });
    kps.truncate(max);
    let mut out = FeatureSet::empty(kind);
    for mut kp in kps {
        if !upright {
            kp.orientation = dominant_orientation(space, &kp);
        }
        if let Some(d) = describe(space, &kp) {
            out.keypoints.push(kp);
            out.descriptors.push(&d);
        }
    }
    out
}

/// Runs one detector and describes its strongest keypoints.
pub fn detect_and_describe(
    image: &GrayImage,
    detector: &dyn FeatureDetector,
    config: &FeatureConfig,
) -> FeatureSet {
    let l = &config.local;
    let space = ScaleSpace::build(image, l.octaves, l.levels, l.sigma0);
    let kps = detector.detect(image, &space);
    finish(
        kps,
        detector.max_features(),
        &space,
        config.upright,
        detector.kind(),
    )
}

/// Both detectors on one shared scale space.
pub fn extract_features(image: &GrayImage, config: &FeatureConfig) -> ImageFeatures {
    let l = &config.local;
    let space = ScaleSpace::build(image, l.octaves, l.levels, l.sigma0);
    let local = detect_harris(&space, l);
    let region = detect_mser(image, &config.region);
    ImageFeatures {
        local: finish(
            local,
            l.max_features,
            &space,
            config.upright,
            DescriptorKind::Local,
        ),
        region: finish(
            region,
            config.region.max_features,
            &space,
            config.upright,
            DescriptorKind::Region,
        ),
    }
}

/// Ratio-test matching followed by virtual-line verification.
pub fn match_and_verify(
    query: &FeatureSet,
    reference: &FeatureSet,
    config: &FeatureConfig,
) -> VerifiedMatches {
    let tentative = match_descriptors(
        &query.descriptors,
        &reference.descriptors,
        config.ratio,
        config.mutual,
    );
    verify_virtual_lines(
        &tentative,
        &query.keypoints,
        &reference.keypoints,
        &config.vld,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equalize_fixed_points_and_hand_example() {
        let ramp = GrayImage::from_fn(16, 16, |x, y| image::Luma([(y * 16 + x) as u8]));
        assert_eq!(equalize_histogram(&ramp), ramp);
        let flat = GrayImage::from_pixel(5, 3, image::Luma([77]));
        assert_eq!(equalize_histogram(&flat), flat);
        // Counts {0:2, 128:1, 255:1}: scale 255/2, so 128 → round(127.5) and
        // 255 → 255.
        let small = GrayImage::from_raw(4, 1, vec![0, 0, 128, 255]).unwrap();
        assert_eq!(equalize_histogram(&small).into_raw(), vec![0, 0, 128, 255]);
        let skew = GrayImage::from_raw(4, 1, vec![10, 20, 20, 30]).unwrap();
        // scale 255/3: 20 → 2·85 = 170, 30 → 255.
        assert_eq!(equalize_histogram(&skew).into_raw(), vec![0, 170, 170, 255]);
    }

    #[test]
    fn equalize_is_monotone() {
        let img = GrayImage::from_fn(40, 30, |x, y| {
            image::Luma([((x * 7 + y * 13) % 97 + 50) as u8])
        });
        let eq = equalize_histogram(&img);
        let a = img.as_raw();
        let b = eq.as_raw();
        for i in 0..a.len() {
            for j in 0..a.len() {
                if a[i] < a[j] {
                    assert!(b[i] <= b[j]);
                }
            }
        }
    }

    fn checkerboard(square: u32, offset: (u32, u32)) -> GrayImage {
        GrayImage::from_fn(256, 192, |x, y| {
            let cx = (x + square * 8 - offset.0) / square;
            let cy = (y + square * 8 - offset.1) / square;
            image::Luma([if (cx + cy).is_multiple_of(2) { 40 } else { 210 }])
        })
    }

    #[test]
    fn constant_image_has_no_features() {
        let f = extract_features(
            &GrayImage::from_pixel(128, 96, image::Luma([128])),
            &FeatureConfig::default(),
        );
        assert!(f.local.is_empty());
        assert!(f.region.is_empty());
    }

    #[test]
    fn checkerboard_corners() {
        let sq = 16;
        let img = checkerboard(sq, (0, 0));
        let fs = detect_and_describe(
            &img,
            &HarrisDetector(LocalDetectorConfig::default()),
            &FeatureConfig::default(),
        );
        assert!(!fs.is_empty());
        // Corners sit between pixels (sq·i − 0.5) with integer pixel centers.
        let mut hit = 0;
        for kp in &fs.keypoints {
            // The analytic oracle assumes the pattern continues past the
            // image edge; skip keypoints whose support reaches it.
            let r = 4.0 * kp.scale;
            if kp.position.x < r
                || kp.position.y < r
                || kp.position.x > 255.0 - r
                || kp.position.y > 191.0 - r
            {
                continue;
            }
            let gx = ((kp.position.x + 0.5) / sq as f64).round() * sq as f64 - 0.5;
            let gy = ((kp.position.y + 0.5) / sq as f64).round() * sq as f64 - 0.5;
            let d = (kp.position - Vector2::new(gx, gy)).norm();
            assert!(
                d <= 1.0,
                "keypoint {:?} is {d} px from the nearest corner",
                kp.position
            );
            hit += 1;
        }
        // Interior corners: 15 × 11.
        assert!(hit >= 100, "only {hit} corners");
    }

    #[test]
    fn detection_is_deterministic_and_translation_covariant() {
        let pattern = |dx: i64, dy: i64| {
            GrayImage::from_fn(256, 192, move |x, y| {
                // Random gray blocks of 7 px.
                let u = (x as i64 - dx).div_euclid(7) as u64;
                let v = (y as i64 - dy).div_euclid(7) as u64;
                let h = (u.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    ^ v.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
                .wrapping_mul(0x1656_67B1_9E37_79F9);
                image::Luma([(40 + (h >> 56) % 180) as u8])
            })
        };
        let cfg = FeatureConfig::default();
        let det = HarrisDetector(cfg.local.clone());
        let a = detect_and_describe(&pattern(0, 0), &det, &cfg);
        let b = detect_and_describe(&pattern(0, 0), &det, &cfg);
        assert_eq!(a, b);
        // Shift by a multiple of the coarsest octave step.
        let (dx, dy) = (8.0, 16.0);
        let c = detect_and_describe(&pattern(8, 16), &det, &cfg);
        let mut matched = 0;
        let mut considered = 0;
        for kp in &a.keypoints {
            let p = kp.position + Vector2::new(dx, dy);
            let margin = 16.0 + 6.0 * kp.scale;
            if p.x < margin || p.y < margin || p.x > 255.0 - margin || p.y > 191.0 - margin {
                continue;
            }
            considered += 1;
            if c.keypoints.iter().any(|q| (q.position - p).norm() <= 0.5) {
                matched += 1;
            }
        }
        assert!(considered > 20);
        assert!(
            matched as f64 >= 0.9 * considered as f64,
            "{matched}/{considered}"
        );
    }
}
