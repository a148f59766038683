//! Raw-state construction and the input encodings fed to learned functions.
//!
//! A [`RawState`] always carries the full 97-value layout:
//!
//! | range    | content                                        |
//! |----------|------------------------------------------------|
//! | 0..7     | joint angles                                   |
//! | 7..28    | joint xyz, joints 1..7 (EE last)               |
//! | 28..34   | xyz of the two encoded scene objects           |
//! | 34..97   | row-major 3x3 rotation of joints 1..7 (EE last)|
//!
//! The narrower encodings are fixed projections of this vector, so the
//! layout of every encoding is stable across versions.

use std::fmt;
use std::str::FromStr;

use crate::arm::{forward_kinematics, forward_kinematics_unchecked, ArmPose, JointConfig, DOF};
use crate::error::{FerlError, Result};
use crate::scene::Scene;

pub const FULL_DIM: usize = 97;

const ANGLES: usize = 0;
const JOINT_XYZ: usize = 7;
const OBJECT_XYZ: usize = 28;
const ROTATIONS: usize = 34;
/// Offset of the EE xyz inside the full layout.
pub const EE_XYZ: usize = JOINT_XYZ + 3 * (DOF - 1);
/// Offset of the EE rotation inside the full layout.
pub const EE_ROTATION: usize = ROTATIONS + 9 * (DOF - 1);

const fn span<const N: usize>(start: usize) -> [usize; N] {
    let mut out = [0; N];
    let mut i = 0;
    while i < N {
        out[i] = start + i;
        i += 1;
    }
    out
}

const fn join<const A: usize, const B: usize, const N: usize>(a: [usize; A], b: [usize; B]) -> [usize; N] {
    let mut out = [0; N];
    let mut i = 0;
    while i < A {
        out[i] = a[i];
        i += 1;
    }
    while i < N {
        out[i] = b[i - A];
        i += 1;
    }
    out
}

static POS27: [usize; 27] = span::<27>(JOINT_XYZ);
static ROT9: [usize; 9] = span::<9>(EE_ROTATION);
static POS_ROT36: [usize; 36] = join::<27, 9, 36>(span::<27>(JOINT_XYZ), span::<9>(EE_ROTATION));
static EE_OBJECTS9: [usize; 9] = join::<3, 6, 9>(span::<3>(EE_XYZ), span::<6>(OBJECT_XYZ));
static FULL97: [usize; 97] = span::<97>(0);

/// Which slice of the raw state a learned function sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Encoding {
    /// 27 positions followed by the 9 EE rotation entries.
    PosRot36,
    /// Joint and object positions only.
    Pos27,
    /// EE rotation entries only.
    Rot9,
    /// EE xyz followed by both object xyz.
    EeObjects9,
    /// Angles, positions, objects and every joint rotation.
    Full97,
}

impl Encoding {
    pub const ALL: [Encoding; 5] = [
        Encoding::PosRot36,
        Encoding::Pos27,
        Encoding::Rot9,
        Encoding::EeObjects9,
        Encoding::Full97,
    ];

    /// Indices into the full 97-value layout.
    pub fn indices(self) -> &'static [usize] {
        match self {
            Encoding::PosRot36 => &POS_ROT36,
            Encoding::Pos27 => &POS27,
            Encoding::Rot9 => &ROT9,
            Encoding::EeObjects9 => &EE_OBJECTS9,
            Encoding::Full97 => &FULL97,
        }
    }

    pub fn dim(self) -> usize {
        self.indices().len()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Encoding::PosRot36 => "pos27+rot9",
            Encoding::Pos27 => "pos27",
            Encoding::Rot9 => "rot9",
            Encoding::EeObjects9 => "ee+obj9",
            Encoding::Full97 => "full97",
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Encoding {
    type Err = FerlError;

    fn from_str(s: &str) -> Result<Self> {
        Encoding::ALL
            .into_iter()
            .find(|e| e.tag() == s)
            .ok_or_else(|| FerlError::invalid("encoding", format!("unknown tag `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawState {
    values: [f64; FULL_DIM],
}

impl RawState {
    pub fn from_values(values: [f64; FULL_DIM]) -> Self {
        RawState { values }
    }

    pub fn from_pose(q: &JointConfig, pose: &ArmPose, objects: [[f64; 3]; 2]) -> Self {
        let mut v = [0.0; FULL_DIM];
        v[ANGLES..ANGLES + DOF].copy_from_slice(&q.0);
        for j in 0..DOF {
            let p = pose.joint_positions[j];
            v[JOINT_XYZ + 3 * j..JOINT_XYZ + 3 * j + 3].copy_from_slice(&[p.x, p.y, p.z]);
            let r = &pose.joint_rotations[j];
            for row in 0..3 {
                for col in 0..3 {
                    v[ROTATIONS + 9 * j + 3 * row + col] = r[(row, col)];
                }
            }
        }
        for (k, obj) in objects.iter().enumerate() {
            v[OBJECT_XYZ + 3 * k..OBJECT_XYZ + 3 * k + 3].copy_from_slice(obj);
        }
        RawState { values: v }
    }

    pub fn values(&self) -> &[f64; FULL_DIM] {
        &self.values
    }

    pub fn joint_config(&self) -> JointConfig {
        let mut q = [0.0; DOF];
        q.copy_from_slice(&self.values[ANGLES..ANGLES + DOF]);
        JointConfig(q)
    }

    pub fn joint_xyz(&self, joint: usize) -> [f64; 3] {
        let o = JOINT_XYZ + 3 * joint;
        [self.values[o], self.values[o + 1], self.values[o + 2]]
    }

    pub fn ee_position(&self) -> [f64; 3] {
        self.joint_xyz(DOF - 1)
    }

    /// Row-major EE rotation.
    pub fn ee_rotation(&self) -> [f64; 9] {
        let mut r = [0.0; 9];
        r.copy_from_slice(&self.values[EE_ROTATION..EE_ROTATION + 9]);
        r
    }

    pub fn object_xyz(&self, slot: usize) -> [f64; 3] {
        let o = OBJECT_XYZ + 3 * slot;
        [self.values[o], self.values[o + 1], self.values[o + 2]]
    }

    pub fn encode(&self, encoding: Encoding) -> Vec<f64> {
        encoding.indices().iter().map(|&i| self.values[i]).collect()
    }

    pub fn encode_into(&self, encoding: Encoding, out: &mut [f64]) {
        for (o, &i) in out.iter_mut().zip(encoding.indices()) {
            *o = self.values[i];
        }
    }
}

fn scene_objects(scene: &Scene) -> [[f64; 3]; 2] {
    [
        scene.object_xyz(scene.encoded_objects[0]),
        scene.object_xyz(scene.encoded_objects[1]),
    ]
}

/// Raw state of `q` in `scene`.
pub fn raw_state(q: &JointConfig, scene: &Scene) -> Result<RawState> {
    let pose = forward_kinematics(q)?;
    Ok(RawState::from_pose(q, &pose, scene_objects(scene)))
}

pub fn raw_state_unchecked(q: &JointConfig, scene: &Scene) -> RawState {
    let pose = forward_kinematics_unchecked(q);
    RawState::from_pose(q, &pose, scene_objects(scene))
}

/// Raw state of `q` projected onto `encoding`.
pub fn raw_state_encoded(q: &JointConfig, scene: &Scene, encoding: Encoding) -> Result<Vec<f64>> {
    Ok(raw_state(q, scene)?.encode(encoding))
}

/// Raw state from the 36 stored values plus the joint angles they came from.
/// Positions and the EE rotation come from forward kinematics; the object
/// slots come from the stored values.
pub fn raw_state_from_stored(q: &JointConfig, stored36: &[f64]) -> Result<RawState> {
    if stored36.len() != 36 {
        return Err(FerlError::Mismatch {
            expected: 36,
            got: stored36.len(),
        });
    }
    let pose = forward_kinematics(q)?;
    let objects = [
        [stored36[21], stored36[22], stored36[23]],
        [stored36[24], stored36[25], stored36[26]],
    ];
    Ok(RawState::from_pose(q, &pose, objects))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_sizes() {
        let dims: Vec<usize> = Encoding::ALL.iter().map(|e| e.dim()).collect();
        assert_eq!(dims, vec![36, 27, 9, 9, 97]);
        for e in Encoding::ALL {
            assert_eq!(e.tag().parse::<Encoding>().unwrap(), e);
        }
    }

    #[test]
    fn pos27_is_prefix_of_pos_rot36() {
        let q = JointConfig([0.2, -0.5, 1.0, 0.8, -0.3, 1.2, 0.4]);
        let s = raw_state(&q, &Scene::default()).unwrap();
        let full = s.encode(Encoding::PosRot36);
        assert_eq!(&full[..27], &s.encode(Encoding::Pos27)[..]);
        assert_eq!(&full[27..], &s.encode(Encoding::Rot9)[..]);
        assert_eq!(&full[27..], &s.ee_rotation()[..]);
    }

    #[test]
    fn laptop_move_only_touches_object_slots() {
        let q = JointConfig([0.1, 0.4, 0.0, 1.0, 0.0, 0.5, 0.0]);
        let a = Scene::default();
        let b = Scene {
            laptop_xy: [0.2, -0.2],
            ..Scene::default()
        };
        let sa = raw_state(&q, &a).unwrap();
        let sb = raw_state(&q, &b).unwrap();
        for i in 0..FULL_DIM {
            let in_objects = (OBJECT_XYZ..OBJECT_XYZ + 6).contains(&i);
            if !in_objects {
                assert_eq!(sa.values()[i], sb.values()[i], "index {i}");
            }
        }
        assert_ne!(sa.object_xyz(0), sb.object_xyz(0));
    }

    #[test]
    fn stored_values_rebuild_state() {
        let q = JointConfig([0.1, 0.4, 0.0, 1.0, 0.0, 0.5, 0.0]);
        let s = raw_state(&q, &Scene::between_objects()).unwrap();
        let back = raw_state_from_stored(&q, &s.encode(Encoding::PosRot36)).unwrap();
        assert_eq!(s, back);
    }
}
