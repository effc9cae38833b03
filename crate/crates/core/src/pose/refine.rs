//! Levenberg-Marquardt minimization of the robust reprojection cost.
//!
//! The Tukey cost has zero gradient on saturated residuals, so a poor
//! starting pose (a few degrees off is enough to push every residual past a
//! 3 px threshold) would never move. The solver therefore runs a short
//! annealing schedule: it starts with a threshold wide enough to cover the
//! initial residuals and halves it down to the configured value. A step is
//! accepted only if it lowers the current stage's cost without raising the
//! cost at the final threshold, so the reported cost trace never increases.

use nalgebra::{Matrix2x6, Matrix6, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use super::{tukey_rho, tukey_weight, Correspondence3D2D, PoseError, PoseSE3, RobustConfig};
use crate::geometry::PinholeCamera;

const INITIAL_LAMBDA: f64 = 1e-3;
const MAX_LAMBDA: f64 = 1e12;
const REL_DECREASE_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-10;
/// Residual used for points behind the camera under the squared loss.
const BEHIND_RESIDUAL: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// `½ r²`.
    Squared,
    /// Tukey biweight with threshold `t` pixels.
    Tukey(f64),
}

impl Loss {
    fn rho(&self, e: f64) -> f64 {
        match *self {
            Loss::Squared => 0.5 * e * e,
            Loss::Tukey(t) => tukey_rho(e, t),
        }
    }

    fn weight(&self, e: f64) -> f64 {
        match *self {
            Loss::Squared => 1.0,
            Loss::Tukey(t) => tukey_weight(e, t),
        }
    }

    fn behind_cost(&self) -> f64 {
        match *self {
            Loss::Squared => 0.5 * BEHIND_RESIDUAL * BEHIND_RESIDUAL,
            Loss::Tukey(t) => t * t / 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost at the final threshold after each accepted step, starting with
    /// the initial cost.
    pub cost_trace: Vec<f64>,
    pub stages: usize,
    pub converged: bool,
}

/// Projected pixel and `∂π(exp(ξ)·T·X)/∂ξ` at `ξ = 0`.
pub fn residual_jacobian(
    pose: &PoseSE3,
    point: &nalgebra::Vector3<f64>,
    camera: &PinholeCamera,
) -> Result<(Vector2<f64>, Matrix2x6<f64>), PoseError> {
    let p = pose.transform(point);
    if p.z <= 1e-9 {
        return Err(PoseError::BehindCamera(p.z));
    }
    let iz = 1.0 / p.z;
    let (x, y) = (p.x * iz, p.y * iz);
    let proj = Vector2::new(camera.fx * x + camera.cx, camera.fy * y + camera.cy);
    // dπ/dp
    let a = nalgebra::Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * x * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * y * iz,
    );
    // dp/dξ = [−[p]× | I]
    let skew = nalgebra::Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(a * (-skew)));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&a);
    Ok((proj, j))
}

/// `Σ ρ(‖m_i − P(M_i, Θ)‖)`.
pub fn robust_cost(
    pose: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    loss: Loss,
) -> f64 {
    corrs
        .iter()
        .map(|c| match super::project(&c.point, pose, camera) {
            Ok(px) => loss.rho((c.pixel - px).norm()),
            Err(_) => loss.behind_cost(),
        })
        .sum()
}

/// Analytic gradient of [`robust_cost`] with respect to a left update.
pub fn robust_cost_gradient(
    pose: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    loss: Loss,
) -> Vector6<f64> {
    normal_equations(pose, corrs, camera, loss).1
}

/// `(H, g)` with `H = Σ w JᵀJ` and `g = Σ w (∂r/∂ξ)ᵀ r`.
fn normal_equations(
    pose: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    loss: Loss,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for c in corrs {
        let Ok((px, j)) = residual_jacobian(pose, &c.point, camera) else {
            continue;
        };
        let r = c.pixel - px;
        let w = loss.weight(r.norm());
        if w == 0.0 {
            continue;
        }
        // ∂r/∂ξ = −J
        h += w * j.transpose() * j;
        g -= w * j.transpose() * r;
    }
    (h, g)
}

/// Minimizes the reprojection cost under `loss`, annealing the threshold for
/// Tukey losses.
pub fn optimize(
    initial: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    loss: Loss,
    max_iterations: usize,
) -> Result<(PoseSE3, OptimizationReport), PoseError> {
    let initial_cost = robust_cost(initial, corrs, camera, loss);
    if !initial_cost.is_finite() {
        return Err(PoseError::DivergedOptimization);
    }
    let mut report = OptimizationReport {
        initial_cost,
        final_cost: initial_cost,
        cost_trace: vec![initial_cost],
        ..Default::default()
    };
    if initial_cost == 0.0 {
        report.converged = true;
        return Ok((*initial, report));
    }

    let stages = match loss {
        Loss::Squared => vec![Loss::Squared],
        Loss::Tukey(t) => annealing_schedule(initial, corrs, camera, t),
    };
    let mut pose = *initial;
    let mut final_cost = initial_cost;
    for stage in &stages {
        report.stages += 1;
        let converged = lm_stage(
            &mut pose,
            &mut final_cost,
            corrs,
            camera,
            *stage,
            loss,
            max_iterations,
            &mut report,
        )?;
        report.converged = converged;
    }
    report.final_cost = final_cost;
    Ok((pose, report))
}

fn annealing_schedule(
    initial: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    t: f64,
) -> Vec<Loss> {
    let mut residuals: Vec<f64> = corrs
        .iter()
        .filter_map(|c| {
            super::project(&c.point, initial, camera)
                .ok()
                .map(|px| (c.pixel - px).norm())
        })
        .collect();
    let mut levels = 0;
    if !residuals.is_empty() {
        residuals.sort_by(|a, b| a.total_cmp(b));
        let median = residuals[residuals.len() / 2];
        while t * 2f64.powi(levels) < 2.0 * median && levels < 12 {
            levels += 1;
        }
    }
    (0..=levels)
        .rev()
        .map(|s| Loss::Tukey(t * 2f64.powi(s)))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn lm_stage(
    pose: &mut PoseSE3,
    final_cost: &mut f64,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    stage: Loss,
    target: Loss,
    max_iterations: usize,
    report: &mut OptimizationReport,
) -> Result<bool, PoseError> {
    let mut cost = robust_cost(pose, corrs, camera, stage);
    let mut lambda = INITIAL_LAMBDA;
    for _ in 0..max_iterations {
        report.iterations += 1;
        let (h, g) = normal_equations(pose, corrs, camera, stage);
        if g.norm() == 0.0 {
            return Ok(true);
        }
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            if lambda > MAX_LAMBDA {
                return Ok(false);
            }
            continue;
        };
        let step = -chol.solve(&g);
        let candidate = pose.retract(&step);
        let new_cost = robust_cost(&candidate, corrs, camera, stage);
        if !new_cost.is_finite() {
            return Err(PoseError::DivergedOptimization);
        }
        let new_final = if stage == target {
            new_cost
        } else {
            robust_cost(&candidate, corrs, camera, target)
        };
        if new_cost < cost && new_final <= *final_cost {
            let decrease = cost - new_cost;
            *pose = candidate;
            cost = new_cost;
            *final_cost = new_final;
            report.cost_trace.push(new_final);
            lambda = (lambda / 10.0).max(1e-12);
            if decrease <= REL_DECREASE_TOL * (cost + decrease)
                || step.norm() < STEP_TOL
                || cost == 0.0
            {
                return Ok(true);
            }
        } else {
            if step.norm() < STEP_TOL {
                return Ok(true);
            }
            lambda *= 10.0;
            if lambda > MAX_LAMBDA {
                return Ok(false);
            }
        }
    }
    Ok(false)
}

/// Tukey-robust refinement of a single pair's pose.
pub fn refine_pose(
    initial: &PoseSE3,
    corrs: &[Correspondence3D2D],
    camera: &PinholeCamera,
    config: &RobustConfig,
) -> Result<(PoseSE3, OptimizationReport), PoseError> {
    config.validate()?;
    optimize(
        initial,
        corrs,
        camera,
        Loss::Tukey(config.tukey_t),
        config.max_iterations,
    )
}
