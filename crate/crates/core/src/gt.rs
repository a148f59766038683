//! Ground-truth feature functions.
//!
//! Every feature maps a raw state to [0, 1] and reads only the EE position
//! and rotation from the state; object positions come from the scene.
//!
//! | id                     | formula                                                     |
//! |------------------------|-------------------------------------------------------------|
//! | `table`                | clamp(z - table, 0, zmax) / zmax                            |
//! | `coffee`               | (1 - up . x_ee) / 2                                         |
//! | `laptop`               | max(0, 1 - d_xy(laptop) / 0.3)                              |
//! | `test_laptop_location` | `laptop` with the laptop at the scene's test location       |
//! | `proxemics`            | max(0, 1 - d_ell), semi-axes 0.5 in front and 0.25 at sides |
//! | `between_objects`      | max(bump_a, bump_b, 0.5 * corridor), radius 0.2             |
//! | `human`                | max(0, 1 - d_xy(human) / 0.3)                               |
//!
//! `d_ell` is `sqrt((f / 0.5)^2 + (s / 0.25)^2)` where `f` and `s` are the
//! forward and sideways offsets of the EE in the human's frame. Behind the
//! human the side semi-axis is used in both directions.

use std::fmt;
use std::str::FromStr;

use crate::arm::JointConfig;
use crate::error::{FerlError, Result};
use crate::scene::Scene;
use crate::state::{raw_state, RawState, EE_ROTATION, EE_XYZ, FULL_DIM};

pub const LAPTOP_RADIUS: f64 = 0.3;
pub const HUMAN_RADIUS: f64 = 0.3;
pub const PROXEMICS_FRONT: f64 = 0.5;
pub const PROXEMICS_SIDE: f64 = 0.25;
pub const OBJECT_RADIUS: f64 = 0.2;
pub const CORRIDOR_WIDTH: f64 = 0.2;
pub const CORRIDOR_VALUE: f64 = 0.5;

/// Step used for finite-difference gradients of the GT features.
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GtFeatureId {
    Table,
    Coffee,
    Laptop,
    TestLaptopLocation,
    Proxemics,
    BetweenObjects,
    Human,
}

impl GtFeatureId {
    pub const ALL: [GtFeatureId; 7] = [
        GtFeatureId::Table,
        GtFeatureId::Coffee,
        GtFeatureId::Laptop,
        GtFeatureId::TestLaptopLocation,
        GtFeatureId::Proxemics,
        GtFeatureId::BetweenObjects,
        GtFeatureId::Human,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GtFeatureId::Table => "table",
            GtFeatureId::Coffee => "coffee",
            GtFeatureId::Laptop => "laptop",
            GtFeatureId::TestLaptopLocation => "test_laptop_location",
            GtFeatureId::Proxemics => "proxemics",
            GtFeatureId::BetweenObjects => "between_objects",
            GtFeatureId::Human => "human",
        }
    }

    /// True for features that depend only on the EE orientation.
    pub fn is_orientation(self) -> bool {
        matches!(self, GtFeatureId::Coffee)
    }

    pub fn eval_state(self, state: &RawState, scene: &Scene) -> f64 {
        let v = state.values();
        let ee = [v[EE_XYZ], v[EE_XYZ + 1], v[EE_XYZ + 2]];
        let mut rot = [0.0; 9];
        rot.copy_from_slice(&v[EE_ROTATION..EE_ROTATION + 9]);
        self.eval_ee(&ee, &rot, scene)
    }

    /// Value from the EE position and row-major EE rotation.
    pub fn eval_ee(self, ee: &[f64; 3], rot: &[f64; 9], scene: &Scene) -> f64 {
        let v = match self {
            GtFeatureId::Table => {
                let zmax = scene.max_height_above_table();
                (ee[2] - scene.table_height).clamp(0.0, zmax) / zmax
            }
            GtFeatureId::Coffee => (1.0 - rot[6]) / 2.0,
            GtFeatureId::Laptop => bump(ee, scene.laptop_xy, LAPTOP_RADIUS),
            GtFeatureId::TestLaptopLocation => bump(ee, scene.test_laptop_xy, LAPTOP_RADIUS),
            GtFeatureId::Proxemics => proxemics(ee, scene),
            GtFeatureId::BetweenObjects => between_objects(ee, scene),
            GtFeatureId::Human => bump(ee, scene.human_xy, HUMAN_RADIUS),
        };
        v.clamp(0.0, 1.0)
    }

    /// Gradient with respect to the full 97-value raw state. Only the EE
    /// position and rotation entries can be nonzero.
    pub fn gradient_state(self, state: &RawState, scene: &Scene) -> [f64; FULL_DIM] {
        let mut out = [0.0; FULL_DIM];
        let v = state.values();
        let mut ee = [v[EE_XYZ], v[EE_XYZ + 1], v[EE_XYZ + 2]];
        let mut rot = [0.0; 9];
        rot.copy_from_slice(&v[EE_ROTATION..EE_ROTATION + 9]);
        for i in 0..3 {
            let x = ee[i];
            ee[i] = x + FD_STEP;
            let hi = self.eval_ee(&ee, &rot, scene);
            ee[i] = x - FD_STEP;
            let lo = self.eval_ee(&ee, &rot, scene);
            ee[i] = x;
            out[EE_XYZ + i] = (hi - lo) / (2.0 * FD_STEP);
        }
        if self == GtFeatureId::Coffee {
            // Linear in a single rotation entry.
            out[EE_ROTATION + 6] = if rot[6] > -1.0 && rot[6] < 1.0 { -0.5 } else { 0.0 };
        }
        out
    }
}

impl fmt::Display for GtFeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GtFeatureId {
    type Err = FerlError;

    fn from_str(s: &str) -> Result<Self> {
        GtFeatureId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| FerlError::UnknownFeature(s.to_string()))
    }
}

fn xy_distance(ee: &[f64; 3], xy: [f64; 2]) -> f64 {
    ((ee[0] - xy[0]).powi(2) + (ee[1] - xy[1]).powi(2)).sqrt()
}

fn bump(ee: &[f64; 3], center: [f64; 2], radius: f64) -> f64 {
    (1.0 - xy_distance(ee, center) / radius).max(0.0)
}

/// Ellipse-weighted xy distance from the human, 1.0 on the boundary.
pub fn proxemic_distance(ee: &[f64; 3], scene: &Scene) -> f64 {
    let [hx, hy] = scene.human_facing();
    let dx = ee[0] - scene.human_xy[0];
    let dy = ee[1] - scene.human_xy[1];
    let forward = dx * hx + dy * hy;
    let side = -dx * hy + dy * hx;
    let front_axis = if forward > 0.0 { PROXEMICS_FRONT } else { PROXEMICS_SIDE };
    ((forward / front_axis).powi(2) + (side / PROXEMICS_SIDE).powi(2)).sqrt()
}

fn proxemics(ee: &[f64; 3], scene: &Scene) -> f64 {
    (1.0 - proxemic_distance(ee, scene)).max(0.0)
}

/// xy distance from the EE to the segment joining the two objects.
pub fn segment_distance(ee: &[f64; 3], scene: &Scene) -> f64 {
    let a = scene.object_a_xyz;
    let b = scene.object_b_xyz;
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((ee[0] - a[0]) * abx + (ee[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let px = a[0] + t * abx;
    let py = a[1] + t * aby;
    ((ee[0] - px).powi(2) + (ee[1] - py).powi(2)).sqrt()
}

fn between_objects(ee: &[f64; 3], scene: &Scene) -> f64 {
    let a = scene.object_a_xyz;
    let b = scene.object_b_xyz;
    let bump_a = bump(ee, [a[0], a[1]], OBJECT_RADIUS);
    let bump_b = bump(ee, [b[0], b[1]], OBJECT_RADIUS);
    let corridor = (1.0 - segment_distance(ee, scene) / CORRIDOR_WIDTH).max(0.0);
    bump_a.max(bump_b).max(CORRIDOR_VALUE * corridor)
}

/// Feature value of a joint configuration.
pub fn eval_gt(id: GtFeatureId, q: &JointConfig, scene: &Scene) -> Result<f64> {
    Ok(id.eval_state(&raw_state(q, scene)?, scene))
}

/// Like [`eval_gt`] but with the feature given by name.
pub fn eval_gt_named(name: &str, q: &JointConfig, scene: &Scene) -> Result<f64> {
    eval_gt(name.parse()?, q, scene)
}
