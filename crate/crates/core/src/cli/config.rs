use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::features::FeatureConfig;
use crate::geo::LambertProjection;
use crate::geometry::{PinholeCamera, VirtualRig};
use crate::ingest::SyntheticSceneConfig;
use crate::pose::RobustConfig;
use crate::retrieval::RetrievalConfig;
use crate::vocab::VocabConfig;

/// Virtual cameras placed inside each panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub pitch_deg: f64,
    /// View azimuths in the panorama east-north-up frame, degrees.
    pub yaws_deg: Vec<f64>,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 384,
            focal: 490.0,
            pitch_deg: 0.0,
            yaws_deg: (0..8).map(|i| i as f64 * 45.0).collect(),
        }
    }
}

impl RigConfig {
    pub fn camera(&self) -> Result<PinholeCamera, CliError> {
        let (w, h) = (self.width, self.height);
        PinholeCamera::new(
            self.focal,
            self.focal,
            (w as f64 - 1.0) / 2.0,
            (h as f64 - 1.0) / 2.0,
            w,
            h,
        )
        .map_err(|e| CliError::InvalidConfig(format!("rig camera: {e}")))
    }

    pub fn rig(&self) -> Result<VirtualRig, CliError> {
        VirtualRig::new(
            self.camera()?,
            self.pitch_deg.to_radians(),
            self.yaws_deg.iter().map(|y| y.to_radians()).collect(),
        )
        .map_err(|e| CliError::InvalidConfig(format!("rig: {e}")))
    }
}

/// Per-frame acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub min_verified_matches: usize,
    pub min_inliers: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            min_verified_matches: 12,
            min_inliers: 12,
        }
    }
}

/// Every tunable of the pipeline in one JSON document. Missing sections
/// take their defaults; unknown keys are an error.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rig: RigConfig,
    pub features: FeatureConfig,
    pub vocab: VocabConfig,
    pub retrieval: RetrievalConfig,
    pub robust: RobustConfig,
    pub gate: GateConfig,
    pub projection: LambertProjection,
    pub synthetic: SyntheticSceneConfig,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::InvalidConfig(m));
        self.rig.rig()?;
        let f = &self.features;
        if !(f.ratio > 0.0 && f.ratio <= 1.0) {
            return bad(format!("features.ratio {} outside (0, 1]", f.ratio));
        }
        let v = &self.vocab;
        if v.local_branching < 2
            || v.region_branching < 2
            || v.local_depth < 1
            || v.region_depth < 1
        {
            return bad("vocab trees need branching >= 2 and depth >= 1".into());
        }
        if !(0.0..=1.0).contains(&v.merge_weight) {
            return bad(format!(
                "vocab.merge_weight {} outside [0, 1]",
                v.merge_weight
            ));
        }
        if v.max_training_descriptors == 0 {
            return bad("vocab.max_training_descriptors must be positive".into());
        }
        let r = &self.retrieval;
        if r.top_k == 0 || r.speedup_k == 0 {
            return bad("retrieval.top_k and retrieval.speedup_k must be positive".into());
        }
        if !(r.min_similarity.is_finite() && (0.0..=1.0).contains(&r.min_similarity)) {
            return bad(format!(
                "retrieval.min_similarity {} outside [0, 1]",
                r.min_similarity
            ));
        }
        self.robust
            .validate()
            .map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        if self.gate.min_inliers < 4 {
            return bad("gate.min_inliers must be at least 4".into());
        }
        self.projection
            .validate()
            .map_err(|e| CliError::InvalidConfig(format!("projection: {e}")))?;
        self.synthetic.validate()?;
        Ok(())
    }

    /// Reads and validates a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let config: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::InvalidConfig(format!("{}: {e}", p.display())))?
            }
        };
        config.validate()?;
        Ok(config)
    }
}
