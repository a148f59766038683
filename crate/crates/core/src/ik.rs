//! Damped least-squares inverse kinematics.
//!
//! The residual stacks the EE position error with an optional weighted
//! orientation error. Each step solves `(J^T J + lambda^2 I) dq = -J^T r`
//! with the Jacobian of the residual taken by central differences.
//!
//! [`planar_ik`] is a closed-form alternative for the common case of both
//! wrist rolls at zero, where the pitch joints form a planar 3-link chain.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector};

use crate::arm::{forward_kinematics_unchecked, ArmPose, JointConfig, CHAIN, DOF};
use crate::error::{FerlError, Result};

const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OrientationGoal {
    Free,
    /// Align the EE x-axis with `direction` (unit vector).
    XAxis { direction: [f64; 3], weight: f64 },
    /// Hold the full EE rotation.
    Full { rotation: Matrix3<f64>, weight: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    /// Largest joint-space step norm per iteration.
    pub max_step: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig {
            damping: 0.05,
            max_iters: 100,
            tolerance: 1e-5,
            max_step: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IkSolution {
    pub q: JointConfig,
    pub position_error: f64,
    pub residual: f64,
    pub converged: bool,
}

fn residual(pose: &ArmPose, target: &[f64; 3], goal: &OrientationGoal) -> Vec<f64> {
    let p = pose.ee_position();
    let mut r = vec![p.x - target[0], p.y - target[1], p.z - target[2]];
    match goal {
        OrientationGoal::Free => {}
        OrientationGoal::XAxis { direction, weight } => {
            let x = pose.ee_rotation().column(0).into_owned();
            for i in 0..3 {
                r.push(weight * (x[i] - direction[i]));
            }
        }
        OrientationGoal::Full { rotation, weight } => {
            let rot = pose.ee_rotation();
            for i in 0..3 {
                for j in 0..3 {
                    r.push(weight * (rot[(i, j)] - rotation[(i, j)]));
                }
            }
        }
    }
    r
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One damped least-squares step from `q` toward the target. The result is
/// clamped to the joint limits.
pub fn ik_step(q: &JointConfig, target: &[f64; 3], goal: &OrientationGoal, cfg: &IkConfig) -> JointConfig {
    let r0 = residual(&forward_kinematics_unchecked(q), target, goal);
    let m = r0.len();
    let mut jac = DMatrix::<f64>::zeros(m, DOF);
    for j in 0..DOF {
        let mut hi = *q;
        let mut lo = *q;
        hi.0[j] += JACOBIAN_STEP;
        lo.0[j] -= JACOBIAN_STEP;
        let rh = residual(&forward_kinematics_unchecked(&hi), target, goal);
        let rl = residual(&forward_kinematics_unchecked(&lo), target, goal);
        for i in 0..m {
            jac[(i, j)] = (rh[i] - rl[i]) / (2.0 * JACOBIAN_STEP);
        }
    }
    let jt = jac.transpose();
    let normal: SMatrix<f64, DOF, DOF> =
        (&jt * &jac).fixed_view::<DOF, DOF>(0, 0).into_owned()
            + SMatrix::<f64, DOF, DOF>::identity() * (cfg.damping * cfg.damping);
    let rhs: SVector<f64, DOF> = -(&jt * DVector::from_vec(r0)).fixed_rows::<DOF>(0).into_owned();
    let dq = match normal.cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => return *q,
    };
    let step = dq.norm();
    let scale = if step > cfg.max_step { cfg.max_step / step } else { 1.0 };
    let mut next = *q;
    for j in 0..DOF {
        next.0[j] += scale * dq[j];
    }
    next.clamped()
}

/// Iterates [`ik_step`] until the residual stops improving or drops below
/// the tolerance.
pub fn solve_ik(q0: &JointConfig, target: &[f64; 3], goal: &OrientationGoal, cfg: &IkConfig) -> IkSolution {
    let mut q = q0.clamped();
    let mut r = norm(&residual(&forward_kinematics_unchecked(&q), target, goal));
    let mut converged = r < cfg.tolerance;
    for _ in 0..cfg.max_iters {
        if converged {
            break;
        }
        let full = ik_step(&q, target, goal, cfg);
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..6 {
            let next = q.lerp(&full, t);
            let rn = norm(&residual(&forward_kinematics_unchecked(&next), target, goal));
            if rn < r - 1e-12 {
                accepted = Some((next, rn));
                break;
            }
            t *= 0.5;
        }
        let Some((next, rn)) = accepted else { break };
        q = next;
        r = rn;
        converged = r < cfg.tolerance;
    }
    let p = forward_kinematics_unchecked(&q).ee_position();
    let position_error = ((p.x - target[0]).powi(2) + (p.y - target[1]).powi(2) + (p.z - target[2]).powi(2)).sqrt();
    IkSolution {
        q,
        position_error,
        residual: r,
        converged,
    }
}

/// Height of the first pitch joint above the base.
fn shoulder_height() -> f64 {
    CHAIN[0].offset[2] + CHAIN[1].offset[2]
}

fn upper_link() -> f64 {
    CHAIN[2].offset[2] + CHAIN[3].offset[2]
}

fn fore_link() -> f64 {
    CHAIN[4].offset[2] + CHAIN[5].offset[2]
}

fn hand_link() -> f64 {
    CHAIN[6].offset[2]
}

/// Elbow branch for [`planar_ik`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elbow {
    Positive,
    Negative,
}

/// Closed-form IK with joints 3 and 5 at zero.
///
/// `pitch` is the sum of the three pitch angles, i.e. the tilt of the last
/// link from vertical toward the radial direction, and `roll` is the final
/// wrist angle. The EE rotation is then `Rz(azimuth) Ry(pitch) Rz(roll)`.
/// When the target lies almost on the base axis the azimuth falls back to
/// `azimuth_hint`.
pub fn planar_ik(
    target: &[f64; 3],
    pitch: f64,
    roll: f64,
    elbow: Elbow,
    azimuth_hint: f64,
) -> Result<JointConfig> {
    let rxy = target[0].hypot(target[1]);
    let azimuth = if rxy < 1e-9 {
        azimuth_hint
    } else {
        target[1].atan2(target[0])
    };
    // Radial coordinate in the arm plane, signed against the chosen azimuth.
    let r = target[0] * azimuth.cos() + target[1] * azimuth.sin();
    let wx = r - hand_link() * pitch.sin();
    let wz = target[2] - hand_link() * pitch.cos() - shoulder_height();
    let (l1, l2) = (upper_link(), fore_link());
    let d2 = wx * wx + wz * wz;
    let c = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c) {
        return Err(FerlError::invalid("ik target", format!("{target:?} out of reach")));
    }
    let q4 = match elbow {
        Elbow::Positive => c.acos(),
        Elbow::Negative => -c.acos(),
    };
    let q2 = wx.atan2(wz) - (l2 * q4.sin()).atan2(l1 + l2 * q4.cos());
    let q6 = pitch - q2 - q4;
    let q = JointConfig([azimuth, q2, 0.0, q4, 0.0, q6, roll]);
    q.check_limits()?;
    Ok(q)
}

/// [`planar_ik`] trying the positive elbow first.
pub fn planar_ik_any(target: &[f64; 3], pitch: f64, roll: f64, azimuth_hint: f64) -> Result<(JointConfig, Elbow)> {
    match planar_ik(target, pitch, roll, Elbow::Positive, azimuth_hint) {
        Ok(q) => Ok((q, Elbow::Positive)),
        Err(_) => planar_ik(target, pitch, roll, Elbow::Negative, azimuth_hint).map(|q| (q, Elbow::Negative)),
    }
}

/// [`planar_ik_any`] searching the pitch outward from `preferred` in
/// steps of 0.1 rad until the target is reachable within the limits.
pub fn planar_ik_search(target: &[f64; 3], preferred: f64, roll: f64) -> Result<JointConfig> {
    let hint = target[1].atan2(target[0]);
    for k in 0..=62 {
        let offset = if k % 2 == 1 { (k + 1) / 2 } else { -(k / 2) };
        let pitch = preferred + 0.1 * offset as f64;
        if let Ok((q, _)) = planar_ik_any(target, pitch, roll, hint) {
            return Ok(q);
        }
    }
    Err(FerlError::invalid("ik target", format!("{target:?} unreachable at any pitch")))
}
