//! Frozen values at the home pose, derived by hand from the link table:
//! only the pitch joints move, so the arm stays in the xz plane with
//! cumulative pitches 0.6, 1.8 and 2.6.

use ferl::arm::{forward_kinematics, JointConfig};
use ferl::gt::{eval_gt, GtFeatureId};
use ferl::scene::Scene;
use ferl::state::raw_state;

const EE_X: f64 = 0.5905927415803017;
const EE_Z: f64 = 0.4605194335703131;
const COFFEE: f64 = 0.7577506859107321;

#[test]
fn home_ee_position() {
    let pose = forward_kinematics(&JointConfig::HOME).unwrap();
    let ee = pose.ee_position();
    assert!((ee.x - EE_X).abs() < 1e-12);
    assert!(ee.y.abs() < 1e-12);
    assert!((ee.z - EE_Z).abs() < 1e-12);
    let s = raw_state(&JointConfig::HOME, &Scene::default()).unwrap();
    assert_eq!(s.ee_position(), [ee.x, ee.y, ee.z]);
}

#[test]
fn home_feature_values() {
    let scene = Scene::default();
    let q = JointConfig::HOME;
    assert!((eval_gt(GtFeatureId::Coffee, &q, &scene).unwrap() - COFFEE).abs() < 1e-12);
    let table = (EE_Z - scene.table_height).clamp(0.0, scene.max_height_above_table()) / scene.max_height_above_table();
    assert!((eval_gt(GtFeatureId::Table, &q, &scene).unwrap() - table).abs() < 1e-12);
    let [lx, ly] = scene.laptop_xy;
    let d = ((EE_X - lx).powi(2) + ly.powi(2)).sqrt();
    let laptop = (1.0 - d / 0.3).max(0.0);
    assert!((eval_gt(GtFeatureId::Laptop, &q, &scene).unwrap() - laptop).abs() < 1e-12);
}
