//! Pose refinement from line and point correspondences.
//!
//! The line-only objective sums, over 2D-3D line pairs, the midpoint distance
//! and the length-scaled sine of the angle between the observed line and the
//! projection of its 3D partner. The joint objective adds point reprojection
//! errors, with the two families weighted by `α` and `β` (`α + β = 1`). Both
//! are solved as robust least squares with Levenberg-Marquardt over the
//! left-multiplicative local update of [`Pose::retract`].

mod lm;
mod residuals;

pub use residuals::{
    huber, line_residuals, line_terms, numeric_jacobian, point_error, point_residuals, segment_terms, AngleScale,
    LineTerms, ResidualSet,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, LineCorrespondence, PointCorrespondence, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub convergence_tol: f64,
    /// Update norm below which the solve ends.
    pub step_tol: f64,
    /// Huber threshold in pixels.
    pub huber_delta: f64,
    pub angle_scale: AngleScale,
    /// Record the cost after every accepted step.
    pub record_trace: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 10.0,
            convergence_tol: 1e-10,
            step_tol: 1e-12,
            huber_delta: 2.0,
            angle_scale: AngleScale::ProjectedLength,
            record_trace: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_lambda,
            self.lambda_up,
            self.lambda_down,
            self.convergence_tol,
            self.step_tol,
            self.huber_delta,
        ];
        if self.max_iterations == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "optimizer settings must be positive: {self:?}"
            )));
        }
        if let AngleScale::Constant(c) = self.angle_scale {
            if !(c > 0.0) {
                return Err(Error::InvalidInput("angle scale must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl JointWeights {
    pub const LINES_ONLY: JointWeights = JointWeights { alpha: 1.0, beta: 0.0 };
    pub const POINTS_ONLY: JointWeights = JointWeights { alpha: 0.0, beta: 1.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0) || (alpha + beta - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weights must be non-negative and sum to 1, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// `α : β = M : N`, so each family contributes equally in aggregate. With no
/// points the lines take the full weight, and vice versa.
pub fn compute_weights(n_lines: usize, m_points: usize) -> Result<JointWeights> {
    match (n_lines, m_points) {
        (0, 0) => Err(Error::NoCorrespondences),
        (_, 0) => Ok(JointWeights::LINES_ONLY),
        (0, _) => Ok(JointWeights::POINTS_ONLY),
        (n, m) => {
            let total = (n + m) as f64;
            Ok(JointWeights {
                alpha: m as f64 / total,
                beta: n as f64 / total,
            })
        }
    }
}

/// Weighted robust cost split by residual family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub line_distance: f64,
    pub line_angle: f64,
    pub point: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weights: JointWeights,
    pub breakdown: CostBreakdown,
    pub flagged_lines: usize,
    pub flagged_points: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cost_trace: Vec<f64>,
}

/// Residual layout shared by the solver and the diagnostics.
struct JointProblem<'a> {
    k: &'a CameraIntrinsics,
    lines: &'a [LineCorrespondence],
    points: &'a [PointCorrespondence],
    weights: JointWeights,
    huber_delta: f64,
    scale: AngleScale,
}

impl JointProblem<'_> {
    fn use_lines(&self) -> bool {
        self.weights.alpha > 0.0 && !self.lines.is_empty()
    }

    fn use_points(&self) -> bool {
        self.weights.beta > 0.0 && !self.points.is_empty()
    }

    fn line_part(&self, pose: &Pose) -> Option<ResidualSet> {
        self.use_lines()
            .then(|| line_residuals(pose, self.lines, self.k, self.huber_delta, self.scale))
    }

    fn point_part(&self, pose: &Pose) -> Option<ResidualSet> {
        self.use_points()
            .then(|| point_residuals(pose, self.points, self.k, self.huber_delta))
    }

    fn evaluate(&self, pose: &Pose) -> (DVector<f64>, DMatrix<f64>) {
        let parts = [
            self.line_part(pose).map(|r| (r, self.weights.alpha.sqrt())),
            self.point_part(pose).map(|r| (r, self.weights.beta.sqrt())),
        ];
        let rows: usize = parts.iter().flatten().map(|(r, _)| r.values.len()).sum();
        let mut values = DVector::zeros(rows);
        let mut jacobian = DMatrix::zeros(rows, 6);
        let mut offset = 0;
        for (r, w) in parts.iter().flatten() {
            let n = r.values.len();
            if *w == 1.0 {
                values.rows_mut(offset, n).copy_from(&r.values);
                jacobian.rows_mut(offset, n).copy_from(&r.jacobian);
            } else {
                values.rows_mut(offset, n).copy_from(&(&r.values * *w));
                jacobian.rows_mut(offset, n).copy_from(&(&r.jacobian * *w));
            }
            offset += n;
        }
        (values, jacobian)
    }

    fn breakdown(&self, pose: &Pose) -> (CostBreakdown, usize, usize) {
        let mut b = CostBreakdown::default();
        let (mut fl, mut fp) = (0, 0);
        if let Some(r) = self.line_part(pose) {
            for i in 0..self.lines.len() {
                b.line_distance += r.values.rows(3 * i, 2).norm_squared();
                b.line_angle += r.values[3 * i + 2].powi(2);
            }
            b.line_distance *= self.weights.alpha;
            b.line_angle *= self.weights.alpha;
            fl = r.flagged.len();
        }
        if let Some(r) = self.point_part(pose) {
            b.point = self.weights.beta * r.values.norm_squared();
            fp = r.flagged.len();
        }
        (b, fl, fp)
    }
}

/// Minimizes the weighted point-line objective starting from `init`.
///
/// Weights default to [`compute_weights`]. Requires at least three
/// correspondences in total.
pub fn refine_pose_joint(
    init: &Pose,
    lines: &[LineCorrespondence],
    points: &[PointCorrespondence],
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
    weights: Option<JointWeights>,
) -> Result<RefinementResult> {
    cfg.validate()?;
    let weights = match weights {
        Some(w) => JointWeights::new(w.alpha, w.beta)?,
        None => compute_weights(lines.len(), points.len())?,
    };
    let used = if weights.alpha > 0.0 { lines.len() } else { 0 } + if weights.beta > 0.0 { points.len() } else { 0 };
    if used < 3 {
        return Err(Error::TooFewCorrespondences { got: used, need: 3 });
    }
    let problem = JointProblem {
        k,
        lines,
        points,
        weights,
        huber_delta: cfg.huber_delta,
        scale: cfg.angle_scale,
    };
    let out = lm::solve(*init, cfg, |p| problem.evaluate(p))?;
    let (breakdown, flagged_lines, flagged_points) = problem.breakdown(&out.pose);
    Ok(RefinementResult {
        pose: out.pose,
        initial_cost: out.initial_cost,
        final_cost: out.final_cost,
        iterations: out.iterations,
        converged: out.converged,
        weights,
        breakdown,
        flagged_lines,
        flagged_points,
        cost_trace: out.trace,
    })
}

/// Line-only refinement; needs at least three line correspondences.
pub fn refine_pose_line_only(
    init: &Pose,
    lines: &[LineCorrespondence],
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<RefinementResult> {
    if lines.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            got: lines.len(),
            need: 3,
        });
    }
    refine_pose_joint(init, lines, &[], k, cfg, Some(JointWeights::LINES_ONLY))
}

/// Point-only (PnP) refinement.
pub fn refine_pose_points(
    init: &Pose,
    points: &[PointCorrespondence],
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<RefinementResult> {
    refine_pose_joint(init, &[], points, k, cfg, Some(JointWeights::POINTS_ONLY))
}

/// Objective value and gradient `Jᵀr` of the weighted problem at `pose`.
pub fn joint_cost_and_gradient(
    pose: &Pose,
    lines: &[LineCorrespondence],
    points: &[PointCorrespondence],
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
    weights: JointWeights,
) -> (f64, DVector<f64>) {
    let problem = JointProblem {
        k,
        lines,
        points,
        weights,
        huber_delta: cfg.huber_delta,
        scale: cfg.angle_scale,
    };
    let (r, j) = problem.evaluate(pose);
    (r.norm_squared(), j.transpose() * r)
}
