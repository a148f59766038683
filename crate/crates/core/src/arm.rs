//! Kinematics of the simulated 7-DoF arm.
//!
//! The chain is a JACO-like serial arm with alternating roll (z) and pitch (y)
//! joints. Each joint frame is reached from its parent by a fixed translation
//! followed by a rotation about the joint axis:
//!
//! | joint | parent offset (m) | axis | limits (rad)   |
//! |-------|-------------------|------|----------------|
//! | 1     | (0, 0, 0.15)      | z    | [-pi, pi]      |
//! | 2     | (0, 0, 0.12)      | y    | [-2.0, 2.0]    |
//! | 3     | (0, 0, 0.21)      | z    | [-pi, pi]      |
//! | 4     | (0, 0, 0.21)      | y    | [-2.4, 2.4]    |
//! | 5     | (0, 0, 0.21)      | z    | [-pi, pi]      |
//! | 6     | (0, 0, 0.10)      | y    | [-2.0, 2.0]    |
//! | 7     | (0, 0, 0.10)      | z    | [-pi, pi]      |
//!
//! The end-effector (EE) is the origin of the joint-7 frame, so the final roll
//! joint only changes the EE orientation. With all angles at zero the arm
//! points straight up and the EE sits at (0, 0, 1.10).

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FerlError, Result};
use crate::scene::Scene;

pub const DOF: usize = 7;

/// Slack allowed when checking joint limits.
const LIMIT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Y,
    Z,
}

#[derive(Clone, Copy, Debug)]
pub struct JointSpec {
    pub offset: [f64; 3],
    pub axis: Axis,
    pub lower: f64,
    pub upper: f64,
}

pub const CHAIN: [JointSpec; DOF] = [
    JointSpec { offset: [0.0, 0.0, 0.15], axis: Axis::Z, lower: -PI, upper: PI },
    JointSpec { offset: [0.0, 0.0, 0.12], axis: Axis::Y, lower: -2.0, upper: 2.0 },
    JointSpec { offset: [0.0, 0.0, 0.21], axis: Axis::Z, lower: -PI, upper: PI },
    JointSpec { offset: [0.0, 0.0, 0.21], axis: Axis::Y, lower: -2.4, upper: 2.4 },
    JointSpec { offset: [0.0, 0.0, 0.21], axis: Axis::Z, lower: -PI, upper: PI },
    JointSpec { offset: [0.0, 0.0, 0.10], axis: Axis::Y, lower: -2.0, upper: 2.0 },
    JointSpec { offset: [0.0, 0.0, 0.10], axis: Axis::Z, lower: -PI, upper: PI },
];

/// Seven joint angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointConfig(pub [f64; DOF]);

impl JointConfig {
    pub const ZERO: JointConfig = JointConfig([0.0; DOF]);
    /// Rest pose with the hand above the table in front of the base.
    pub const HOME: JointConfig = JointConfig([0.0, 0.6, 0.0, 1.2, 0.0, 0.8, 0.0]);

    pub fn new(q: [f64; DOF]) -> Self {
        JointConfig(q)
    }

    pub fn from_slice(q: &[f64]) -> Result<Self> {
        let arr: [f64; DOF] = q.try_into().map_err(|_| FerlError::Mismatch {
            expected: DOF,
            got: q.len(),
        })?;
        Ok(JointConfig(arr))
    }

    pub fn as_array(&self) -> &[f64; DOF] {
        &self.0
    }

    pub fn check_limits(&self) -> Result<()> {
        for (joint, (&value, spec)) in self.0.iter().zip(CHAIN.iter()).enumerate() {
            if !value.is_finite()
                || value < spec.lower - LIMIT_SLACK
                || value > spec.upper + LIMIT_SLACK
            {
                return Err(FerlError::JointLimit {
                    joint: joint + 1,
                    value,
                    lower: spec.lower,
                    upper: spec.upper,
                });
            }
        }
        Ok(())
    }

    pub fn within_limits(&self) -> bool {
        self.check_limits().is_ok()
    }

    pub fn clamped(&self) -> JointConfig {
        let mut q = self.0;
        for (v, spec) in q.iter_mut().zip(CHAIN.iter()) {
            *v = v.clamp(spec.lower, spec.upper);
        }
        JointConfig(q)
    }

    pub fn lerp(&self, other: &JointConfig, t: f64) -> JointConfig {
        let mut q = [0.0; DOF];
        for i in 0..DOF {
            q[i] = self.0[i] + t * (other.0[i] - self.0[i]);
        }
        JointConfig(q)
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Positions and orientations of every joint frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmPose {
    pub joint_positions: [Vector3<f64>; DOF],
    pub joint_rotations: [Matrix3<f64>; DOF],
}

impl ArmPose {
    pub fn ee_position(&self) -> Vector3<f64> {
        self.joint_positions[DOF - 1]
    }

    pub fn ee_rotation(&self) -> Matrix3<f64> {
        self.joint_rotations[DOF - 1]
    }
}

pub(crate) fn axis_rotation(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// Forward kinematics without the joint-limit check.
pub fn forward_kinematics_unchecked(q: &JointConfig) -> ArmPose {
    let mut rotation = Matrix3::identity();
    let mut position = Vector3::zeros();
    let mut joint_positions = [Vector3::zeros(); DOF];
    let mut joint_rotations = [Matrix3::identity(); DOF];
    for (i, spec) in CHAIN.iter().enumerate() {
        position += rotation * Vector3::from(spec.offset);
        rotation *= axis_rotation(spec.axis, q.0[i]);
        joint_positions[i] = position;
        joint_rotations[i] = rotation;
    }
    ArmPose {
        joint_positions,
        joint_rotations,
    }
}

/// Positions of all seven joints and the orientation of every joint frame.
/// Fails with [`FerlError::JointLimit`] naming the first offending joint.
pub fn forward_kinematics(q: &JointConfig) -> Result<ArmPose> {
    q.check_limits()?;
    Ok(forward_kinematics_unchecked(q))
}

/// Uniform samples over the joint-limit box, before any workspace filtering.
pub fn sample_uniform_joints(n: usize, rng: &mut impl Rng) -> Vec<JointConfig> {
    (0..n)
        .map(|_| {
            let mut q = [0.0; DOF];
            for (v, spec) in q.iter_mut().zip(CHAIN.iter()) {
                *v = rng.random_range(spec.lower..=spec.upper);
            }
            JointConfig(q)
        })
        .collect()
}

/// `n` configurations drawn uniformly over the joint limits and kept only when
/// the EE lies inside the scene's workspace box.
pub fn sample_reachable(n: usize, scene: &Scene, seed: u64) -> Result<Vec<JointConfig>> {
    if n == 0 {
        return Err(FerlError::Empty("sample request"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > n.saturating_mul(1000).max(100_000) {
            return Err(FerlError::Numerical(
                "workspace box rejects almost every configuration".into(),
            ));
        }
        let q = sample_uniform_joints(1, &mut rng)[0];
        let ee = forward_kinematics_unchecked(&q).ee_position();
        if scene.workspace.contains(&[ee.x, ee.y, ee.z]) {
            out.push(q);
        }
    }
    Ok(out)
}
