//! Damped least-squares refinement of focal length, rotation and camera
//! center against point correspondences.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::{reprojection_rmse, CameraParams, Correspondence};

const MAX_ITERATIONS: usize = 200;
const MIN_STEP: f64 = 1e-10;
const MIN_RELATIVE_DECREASE: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e16;

type Vec7 = SVector<f64, 7>;
type Mat7 = SMatrix<f64, 7, 7>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    /// Step size or cost decrease fell below tolerance.
    Converged,
    MaxIterations,
    /// Damping saturated after progress had been made, or at a stationary
    /// point.
    Stalled,
    /// No step reduced the cost; the initial parameters are returned.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmReport {
    pub params: CameraParams,
    pub initial_rmse: f64,
    pub rmse: f64,
    pub iterations: usize,
    pub status: LmStatus,
}

impl LmReport {
    pub fn failed(&self) -> bool {
        self.status == LmStatus::Failed
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn cost(params: &CameraParams, corr: &[Correspondence]) -> f64 {
    let mut sum = 0.0;
    for c in corr {
        match params.project(&c.world) {
            Some(p) => sum += (p - c.image).norm_squared(),
            None => return f64::INFINITY,
        }
    }
    sum
}

/// Normal equations `(J^T J, J^T r)` at `params`.
fn normal_equations(params: &CameraParams, corr: &[Correspondence]) -> (Mat7, Vec7) {
    let mut jtj = Mat7::zeros();
    let mut jtr = Vec7::zeros();
    let r = params.rotation.matrix();
    let f = params.focal;
    let pp = params.principal_point();
    for c in corr {
        let pc = params.to_camera(&c.world);
        let (x, y, z) = (pc.x, pc.y, pc.z);
        let res = [f * x / z + pp.x - c.image.x, f * y / z + pp.y - c.image.y];
        // d(u, v)/d(camera point)
        let du = Vector3::new(f / z, 0.0, -f * x / (z * z));
        let dv = Vector3::new(0.0, f / z, -f * y / (z * z));
        let d_rot = -skew(&pc);
        let d_pos = -r;
        for (k, (dp, df)) in [(du, x / z), (dv, y / z)].into_iter().enumerate() {
            let jr = d_rot.transpose() * dp;
            let jc = d_pos.transpose() * dp;
            let row = Vec7::from([df, jr.x, jr.y, jr.z, jc.x, jc.y, jc.z]);
            jtj += row * row.transpose();
            jtr += row * res[k];
        }
    }
    (jtj, jtr)
}

fn apply_step(params: &CameraParams, step: &Vec7) -> CameraParams {
    let delta = nalgebra::Rotation3::new(Vector3::new(step[1], step[2], step[3]));
    let mut out = *params;
    out.focal += step[0];
    out.rotation = delta * params.rotation;
    out.position += Vector3::new(step[4], step[5], step[6]);
    out
}

/// Locally minimizes the squared reprojection error over focal length (1),
/// rotation (3, axis-angle increments) and camera center (3). The principal
/// point stays at the frame center. Returned RMSE never exceeds the initial.
pub fn refine_lm(initial: &CameraParams, correspondences: &[Correspondence]) -> LmReport {
    let initial_rmse = reprojection_rmse(initial, correspondences).unwrap_or(f64::INFINITY);
    let fail = |iterations| LmReport {
        params: *initial,
        initial_rmse,
        rmse: initial_rmse,
        iterations,
        status: LmStatus::Failed,
    };
    if correspondences.len() < 4 || !initial_rmse.is_finite() {
        return fail(0);
    }

    let n = correspondences.len() as f64;
    let mut params = *initial;
    let mut current = cost(&params, correspondences);
    let mut lambda = 1e-3;
    let mut accepted = 0usize;
    let mut status = LmStatus::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&params, correspondences);
        let max_diag = (0..7).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        if jtr.norm() <= 1e-14 * (max_diag.sqrt() * current.sqrt()).max(1e-300) {
            status = LmStatus::Converged;
            break;
        }
        loop {
            let mut damped = jtj;
            for i in 0..7 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * max_diag);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                if lambda > MAX_DAMPING {
                    status = if accepted > 0 { LmStatus::Stalled } else { LmStatus::Failed };
                    break 'outer;
                }
                continue;
            };
            let scale = params.focal.abs() + params.position.coords.norm() + 1.0;
            if step.norm() <= MIN_STEP * scale {
                status = LmStatus::Converged;
                break 'outer;
            }
            let candidate = apply_step(&params, &step);
            let next = cost(&candidate, correspondences);
            if next < current && candidate.focal > 0.0 {
                let decrease = (current - next) / current.max(1e-300);
                params = candidate;
                current = next;
                accepted += 1;
                lambda = (lambda / 10.0).max(1e-12);
                if decrease < MIN_RELATIVE_DECREASE || current / n < 1e-28 {
                    status = LmStatus::Converged;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                status = if accepted > 0 { LmStatus::Stalled } else { LmStatus::Failed };
                break 'outer;
            }
        }
    }

    if status == LmStatus::Failed {
        return fail(iterations);
    }
    LmReport {
        params,
        initial_rmse,
        rmse: (current / n).sqrt(),
        iterations,
        status,
    }
}
