//! Waypoint trajectory optimizer and correction deformation.
//!
//! `plan` refines the straight joint-space line between two configurations
//! by covariant gradient descent on
//! `sum_t c(q_t) + lambda * sum_t |q_{t+1} - q_t|^2`
//! with both endpoints pinned. The step is preconditioned by the inverse of
//! the smoothness metric (tridiagonal, solved per joint) and accepted by a
//! backtracking line search, so the objective never increases. A stiff
//! quadratic penalty keeps the EE from passing below the table surface,
//! where the table feature would otherwise read zero.

use crate::arm::{JointConfig, DOF};
use crate::error::{FerlError, Result};
use crate::scene::Scene;
use crate::state::{raw_state, raw_state_unchecked, RawState, EE_XYZ, FULL_DIM};

pub const DEFAULT_WAYPOINTS: usize = 21;
pub const SMOOTHNESS_WEIGHT: f64 = 1.0;
pub const PLAN_ITERATIONS: usize = 200;
/// Waypoints on each side of a correction that receive part of it.
pub const DEFORM_HALF_WIDTH: usize = 5;

const JACOBIAN_STEP: f64 = 1e-6;
const INITIAL_STEP: f64 = 0.5;
const MAX_STEP: f64 = 4.0;
const MAX_HALVINGS: usize = 30;
const ARMIJO: f64 = 1e-4;
/// Weight of the squared EE depth below the table.
pub const TABLE_PENALTY: f64 = 1000.0;

fn table_depth(state: &RawState, scene: &Scene) -> f64 {
    (scene.table_height - state.values()[EE_XYZ + 2]).max(0.0)
}

/// A per-state cost the planner can descend.
pub trait StateCost {
    fn costs(&self, states: &[RawState]) -> Result<Vec<f64>>;

    /// Costs and their gradients with respect to the 97-value raw state.
    fn costs_and_gradients(&self, states: &[RawState]) -> Result<(Vec<f64>, Vec<[f64; FULL_DIM]>)>;
}

/// No state cost: plans reduce to straight lines.
pub struct ZeroCost;

impl StateCost for ZeroCost {
    fn costs(&self, states: &[RawState]) -> Result<Vec<f64>> {
        Ok(vec![0.0; states.len()])
    }

    fn costs_and_gradients(&self, states: &[RawState]) -> Result<(Vec<f64>, Vec<[f64; FULL_DIM]>)> {
        Ok((vec![0.0; states.len()], vec![[0.0; FULL_DIM]; states.len()]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<JointConfig>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<JointConfig>) -> Result<Trajectory> {
        if waypoints.len() < 2 {
            return Err(FerlError::invalid("trajectory", "needs at least 2 waypoints"));
        }
        for q in &waypoints {
            q.check_limits()?;
        }
        Ok(Trajectory { waypoints })
    }

    /// Evenly spaced joint-space interpolation with `t` waypoints.
    pub fn straight(start: &JointConfig, goal: &JointConfig, t: usize) -> Result<Trajectory> {
        if t < 2 {
            return Err(FerlError::invalid("waypoint count", format!("{t} < 2")));
        }
        let n = (t - 1) as f64;
        Trajectory::new((0..t).map(|i| start.lerp(goal, i as f64 / n)).collect())
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn start(&self) -> &JointConfig {
        &self.waypoints[0]
    }

    pub fn goal(&self) -> &JointConfig {
        &self.waypoints[self.waypoints.len() - 1]
    }

    pub fn states(&self, scene: &Scene) -> Result<Vec<RawState>> {
        self.waypoints.iter().map(|q| raw_state(q, scene)).collect()
    }

    /// Sum of squared joint-space steps.
    pub fn smoothness(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| {
                let d = w[0].distance(&w[1]);
                d * d
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanConfig {
    pub waypoints: usize,
    pub smoothness: f64,
    pub iterations: usize,
    /// Extra seeds bowed away from the straight line; the best result wins.
    pub restarts: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            waypoints: DEFAULT_WAYPOINTS,
            smoothness: SMOOTHNESS_WEIGHT,
            iterations: PLAN_ITERATIONS,
            restarts: 0,
        }
    }
}

/// Planner objective of `traj`.
pub fn objective(cost: &dyn StateCost, traj: &Trajectory, scene: &Scene, smoothness: f64) -> Result<f64> {
    let states = traj.states(scene)?;
    let total: f64 = cost.costs(&states)?.iter().sum();
    let below: f64 = states.iter().map(|s| table_depth(s, scene).powi(2)).sum();
    let value = total + smoothness * traj.smoothness() + TABLE_PENALTY * below;
    if !value.is_finite() {
        return Err(FerlError::Numerical("non-finite trajectory cost".into()));
    }
    Ok(value)
}

/// Gradient of a state cost with respect to the joint angles, given the
/// cost gradient in raw-state coordinates.
fn joint_gradient(q: &JointConfig, scene: &Scene, g_raw: &[f64; FULL_DIM]) -> [f64; DOF] {
    let active: Vec<usize> = (0..FULL_DIM).filter(|&i| g_raw[i] != 0.0).collect();
    let mut out = [0.0; DOF];
    if active.is_empty() {
        return out;
    }
    for (j, o) in out.iter_mut().enumerate() {
        let mut hi = *q;
        hi.0[j] += JACOBIAN_STEP;
        let mut lo = *q;
        lo.0[j] -= JACOBIAN_STEP;
        let a = raw_state_unchecked(&hi, scene);
        let b = raw_state_unchecked(&lo, scene);
        *o = active
            .iter()
            .map(|&i| g_raw[i] * (a.values()[i] - b.values()[i]))
            .sum::<f64>()
            / (2.0 * JACOBIAN_STEP);
    }
    out
}

/// Solves the (2, -1) tridiagonal system in place (Thomas algorithm).
fn solve_metric(rhs: &mut [f64]) {
    let n = rhs.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut beta = 2.0;
    c[0] = -1.0 / beta;
    rhs[0] /= beta;
    for i in 1..n {
        beta = 2.0 + c[i - 1];
        c[i] = -1.0 / beta;
        rhs[i] = (rhs[i] + rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Minimizes the planner objective from the straight-line seed.
pub fn plan(
    cost: &dyn StateCost,
    start: &JointConfig,
    goal: &JointConfig,
    scene: &Scene,
    cfg: &PlanConfig,
) -> Result<Trajectory> {
    let straight = Trajectory::straight(start, goal, cfg.waypoints)?;
    if start == goal {
        return Ok(straight);
    }
    let (mut best, mut best_value) = optimize(cost, straight.clone(), scene, cfg)?;
    for k in 0..cfg.restarts {
        let (traj, value) = optimize(cost, bowed(&straight, k), scene, cfg)?;
        if value < best_value {
            best = traj;
            best_value = value;
        }
    }
    Ok(best)
}

/// Joint offsets of the restart seeds at mid-trajectory: base swing
/// either way, then shoulder and elbow.
const BOWS: [(usize, f64); 6] = [(0, 0.6), (0, -0.6), (1, -0.4), (1, 0.4), (3, 0.5), (3, -0.5)];

fn bowed(straight: &Trajectory, k: usize) -> Trajectory {
    let (joint, size) = BOWS[k % BOWS.len()];
    let size = size * (1 + k / BOWS.len()) as f64;
    let t = straight.len();
    let mut out = straight.clone();
    for (i, q) in out.waypoints.iter_mut().enumerate().take(t - 1).skip(1) {
        let s = i as f64 / (t - 1) as f64;
        q.0[joint] += size * (std::f64::consts::PI * s).sin();
        *q = q.clamped();
    }
    out
}

/// Descends from `traj`; returns the result and its objective.
fn optimize(cost: &dyn StateCost, mut traj: Trajectory, scene: &Scene, cfg: &PlanConfig) -> Result<(Trajectory, f64)> {
    let t = traj.len();
    let lambda = cfg.smoothness;
    let mut value = objective(cost, &traj, scene, lambda)?;
    let mut step = INITIAL_STEP;
    for _ in 0..cfg.iterations {
        if t < 3 {
            break;
        }
        let interior = &traj.waypoints[1..t - 1];
        let states: Vec<RawState> = interior.iter().map(|q| raw_state_unchecked(q, scene)).collect();
        let (_, mut g_raw) = cost.costs_and_gradients(&states)?;
        for (g, s) in g_raw.iter_mut().zip(&states) {
            g[EE_XYZ + 2] -= 2.0 * TABLE_PENALTY * table_depth(s, scene);
        }
        // Euclidean gradient, one row per interior waypoint.
        let mut grad = vec![[0.0; DOF]; t - 2];
        for (k, row) in grad.iter_mut().enumerate() {
            let i = k + 1;
            let gc = joint_gradient(&traj.waypoints[i], scene, &g_raw[k]);
            for j in 0..DOF {
                let smooth = 2.0
                    * (2.0 * traj.waypoints[i].0[j] - traj.waypoints[i - 1].0[j] - traj.waypoints[i + 1].0[j]);
                row[j] = gc[j] + lambda * smooth;
            }
        }
        // Covariant direction.
        let mut dir = grad.clone();
        let mut column = vec![0.0; t - 2];
        for j in 0..DOF {
            for k in 0..t - 2 {
                column[k] = grad[k][j];
            }
            solve_metric(&mut column);
            for k in 0..t - 2 {
                dir[k][j] = column[k];
            }
        }
        let slope: f64 = grad
            .iter()
            .zip(&dir)
            .map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        if !(slope > 1e-14) {
            break;
        }
        let mut accepted = None;
        let mut eta = (step * 2.0).min(MAX_STEP);
        for _ in 0..MAX_HALVINGS {
            let mut candidate = traj.clone();
            for (k, d) in dir.iter().enumerate() {
                let q = &mut candidate.waypoints[k + 1];
                for j in 0..DOF {
                    q.0[j] -= eta * d[j];
                }
                *q = q.clamped();
            }
            let v = objective(cost, &candidate, scene, lambda)?;
            if v <= value - ARMIJO * eta * slope {
                accepted = Some((candidate, v));
                break;
            }
            eta *= 0.5;
        }
        match accepted {
            Some((candidate, v)) => {
                traj = candidate;
                value = v;
                step = eta;
            }
            None => break,
        }
    }
    Ok((traj, value))
}

/// A physical correction: joint displacement applied at one waypoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Correction {
    pub index: usize,
    pub delta: [f64; DOF],
}

impl Correction {
    pub fn magnitude(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Squared-cosine window weight at waypoint distance `d`.
pub fn deform_weight(d: usize) -> f64 {
    if d >= DEFORM_HALF_WIDTH {
        return 0.0;
    }
    let c = (std::f64::consts::FRAC_PI_2 * d as f64 / DEFORM_HALF_WIDTH as f64).cos();
    c * c
}

/// Propagates the correction to nearby waypoints, keeping both endpoints.
pub fn deform(traj: &Trajectory, correction: &Correction) -> Result<Trajectory> {
    let t = traj.len();
    if correction.index >= t {
        return Err(FerlError::invalid(
            "correction index",
            format!("{} outside 0..{t}", correction.index),
        ));
    }
    let mut out = traj.clone();
    for (i, q) in out.waypoints.iter_mut().enumerate().take(t - 1).skip(1) {
        let w = deform_weight(i.abs_diff(correction.index));
        if w == 0.0 {
            continue;
        }
        for j in 0..DOF {
            q.0[j] += w * correction.delta[j];
        }
        *q = q.clamped();
    }
    Ok(out)
}
