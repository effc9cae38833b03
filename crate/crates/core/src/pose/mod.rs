//! Metric pose recovery.
//!
//! A pose maps points from a source frame (a reference view's camera frame,
//! or the world frame during local bundle adjustment) into the query
//! camera's right-down-forward frame. Residuals are `m − P(M, Θ)` in pixels
//! and are robustified with the Tukey biweight.

mod correspondences;
mod lba;
mod p3p;
mod ransac;
mod refine;
mod se3;

pub use correspondences::{assemble_correspondences, Correspondence3D2D};
pub use lba::{local_bundle_adjust, LbaResult, PairEstimate};
pub use p3p::{kabsch, solve_p3p};
pub use ransac::{solve_pnp_ransac, PnpSolution};
pub use refine::{
    optimize, refine_pose, residual_jacobian, robust_cost, robust_cost_gradient, Loss,
    OptimizationReport,
};
pub use se3::PoseSE3;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PinholeCamera;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("point is behind the camera (forward coordinate {0})")]
    BehindCamera(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no consensus: best hypothesis has {inliers} inliers")]
    NoConsensus { inliers: usize },
    #[error("optimization diverged: cost became non-finite")]
    DivergedOptimization,
    #[error("no valid pair estimates")]
    NoValidPairs,
    #[error("invalid robust configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    /// Tukey threshold in pixels.
    pub tukey_t: f64,
    pub ransac_threshold: f64,
    pub ransac_iters: usize,
    pub ransac_confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            tukey_t: 3.0,
            ransac_threshold: 3.0,
            ransac_iters: 1000,
            ransac_confidence: 0.999,
            max_iterations: 100,
            seed: 0,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        let ok = self.tukey_t > 0.0
            && self.ransac_threshold > 0.0
            && self.ransac_iters > 0
            && self.max_iterations > 0
            && self.ransac_confidence > 0.0
            && self.ransac_confidence < 1.0;
        if ok {
            Ok(())
        } else {
            Err(PoseError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Pinhole projection of `pose · point`.
pub fn project(
    point: &Vector3<f64>,
    pose: &PoseSE3,
    camera: &PinholeCamera,
) -> Result<Vector2<f64>, PoseError> {
    let p = pose.transform(point);
    if p.z <= 1e-9 {
        return Err(PoseError::BehindCamera(p.z));
    }
    Ok(Vector2::new(
        camera.fx * p.x / p.z + camera.cx,
        camera.fy * p.y / p.z + camera.cy,
    ))
}

/// Tukey biweight: `t²/6 · (1 − (1 − (x/t)²)³)` inside the threshold and
/// `t²/6` beyond it.
pub fn tukey_rho(x: f64, t: f64) -> f64 {
    let c = t * t / 6.0;
    if x.abs() <= t {
        let u = 1.0 - (x / t) * (x / t);
        c * (1.0 - u * u * u)
    } else {
        c
    }
}

/// IRLS weight `ρ'(x)/x = (1 − (x/t)²)²`, zero beyond `t`.
pub fn tukey_weight(x: f64, t: f64) -> f64 {
    if x.abs() < t {
        let u = 1.0 - (x / t) * (x / t);
        u * u
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn camera() -> PinholeCamera {
        PinholeCamera::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn project_cases() {
        let cam = camera();
        let px = project(&Vector3::new(0.0, 0.0, 5.0), &PoseSE3::identity(), &cam).unwrap();
        assert_eq!(px, Vector2::new(320.0, 240.0));
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &PoseSE3::identity(), &cam),
            Err(PoseError::BehindCamera(_))
        ));
    }

    #[test]
    fn project_matches_scalar_oracle() {
        let cam = camera();
        let (r, p, y) = (0.3, -0.2, 1.1);
        let rot = Rotation3::from_euler_angles(r, p, y);
        let pose = PoseSE3::new(rot, Vector3::new(0.4, -0.3, 2.0));
        let m = Vector3::new(1.0, 0.5, 6.0);
        // Element-wise evaluation of R·M + t and the pinhole division.
        let rm = rot.matrix();
        let t = [0.4, -0.3, 2.0];
        let mut q = [0.0; 3];
        for i in 0..3 {
            q[i] = rm[(i, 0)] * m.x + rm[(i, 1)] * m.y + rm[(i, 2)] * m.z + t[i];
        }
        let u = 500.0 * q[0] / q[2] + 320.0;
        let v = 480.0 * q[1] / q[2] + 240.0;
        let got = project(&m, &pose, &cam).unwrap();
        assert!((got.x - u).abs() < 1e-12 && (got.y - v).abs() < 1e-12);
    }

    #[test]
    fn tukey_cases() {
        let t = 3.0;
        assert_eq!(tukey_rho(0.0, t), 0.0);
        assert!((tukey_rho(t, t) - t * t / 6.0).abs() < 1e-15);
        assert_eq!(tukey_rho(10.0 * t, t), t * t / 6.0);
        assert_eq!(tukey_weight(t, t), 0.0);
        assert_eq!(tukey_weight(0.0, t), 1.0);
    }

    proptest! {
        #[test]
        fn tukey_even_monotone_bounded(x in 0.0..20.0f64, dx in 0.0..1.0f64, t in 0.1..10.0f64) {
            prop_assert_eq!(tukey_rho(x, t), tukey_rho(-x, t));
            prop_assert!(tukey_rho(x + dx, t) >= tukey_rho(x, t));
            prop_assert!(tukey_rho(x, t) <= t * t / 6.0 + 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        assert!(RobustConfig::default().validate().is_ok());
        let bad = RobustConfig {
            tukey_t: 0.0,
            ..RobustConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"tukey_t": 2.0, "bogus": 1}"#;
        assert!(serde_json::from_str::<RobustConfig>(json).is_err());
    }
}
