use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use super::OptimizerConfig;
use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Consecutive rejected steps after which a non-stationary solve is
/// reported as diverged.
const MAX_REJECTIONS: usize = 10;

/// A small relative decrease only ends the solve once the residual is this
/// close to orthogonal to every Jacobian column.
const GRADIENT_TOL: f64 = 1e-6;

pub(super) struct Solution {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Largest cosine between `r` and a column of `j` is within tolerance.
fn stationary(r: &DVector<f64>, j: &DMatrix<f64>) -> bool {
    let rn = r.norm();
    j.column_iter().all(|c| c.dot(r).abs() <= GRADIENT_TOL * c.norm() * rn)
}

fn normal_equations(r: &DVector<f64>, j: &DMatrix<f64>) -> (Matrix6<f64>, Vector6<f64>) {
    let jt = j.transpose();
    let h = &jt * j;
    let g = &jt * r;
    (
        Matrix6::from_iterator(h.iter().copied()),
        Vector6::from_iterator(g.iter().copied()),
    )
}

pub(super) fn solve<F>(init: Pose, cfg: &OptimizerConfig, eval: F) -> Result<Solution>
where
    F: Fn(&Pose) -> (DVector<f64>, DMatrix<f64>),
{
    let mut pose = init;
    let (mut r, mut j) = eval(&pose);
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(cost);
    }
    let mut lambda = cfg.initial_lambda;
    let mut iterations = 0;
    let mut converged = cost == 0.0;
    let mut rejections = 0;

    while !converged && iterations < cfg.max_iterations {
        let (h, g) = normal_equations(&r, &j);
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= cfg.lambda_up;
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::Diverged { iterations, cost });
            }
            continue;
        };
        let step = chol.solve(&(-g));
        if step.norm() < cfg.step_tol {
            converged = true;
            break;
        }
        let candidate = pose.retract(&step);
        let (cr, cj) = eval(&candidate);
        let new_cost = cr.norm_squared();
        if new_cost < cost {
            let decrease = (cost - new_cost) / cost;
            pose = candidate;
            r = cr;
            j = cj;
            cost = new_cost;
            lambda = (lambda / cfg.lambda_down).max(1e-12);
            iterations += 1;
            rejections = 0;
            if cfg.record_trace {
                trace.push(cost);
            }
            if cost == 0.0 {
                converged = true;
            } else if decrease < cfg.convergence_tol {
                converged = stationary(&r, &j);
            }
        } else {
            lambda *= cfg.lambda_up;
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                // no representable descent left: fine at a stationary point
                if stationary(&r, &j) {
                    converged = true;
                } else {
                    return Err(Error::Diverged { iterations, cost });
                }
            }
        }
    }

    Ok(Solution {
        pose,
        initial_cost,
        final_cost: cost,
        iterations,
        converged,
        trace,
    })
}
