//! Synthetic teacher producing feature traces for the GT features.
//!
//! Every protocol moves the EE along a straight line (or, for `coffee`,
//! rolls the wrist in place) from a state where the feature is highly
//! expressed to one where it is not. Joint angles come from the closed-form
//! planar IK with the hand pitch held constant over the trace (drawn per
//! trace for the position protocols), then a greedy filter drops any state
//! whose GT value rises above the last kept one, so noiseless traces are
//! non-increasing.
//!
//! | feature                | protocol                                                   |
//! |------------------------|------------------------------------------------------------|
//! | `table`                | descend vertically from 0.87-0.88 m to 0-0.004 m           |
//! | `laptop`               | start above the laptop, move out 0.31-0.36 m, spread azimuths |
//! | `test_laptop_location` | as `laptop`, around the test location                      |
//! | `coffee`               | hold position, roll the cup from upside-down to upright    |
//! | `proxemics`            | start in front of the human, move to just outside the ellipse |
//! | `human`                | start above the human, move out over the front half-circle |
//! | `between_objects`      | cycle: radial off object A, radial off object B, corridor span (labels 0.5/0.5), perpendicular off the corridor (start label 0.5) |

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::JointConfig;
use crate::error::{FerlError, Result};
use crate::gt::{GtFeatureId, OBJECT_RADIUS};
use crate::ik::{planar_ik, Elbow};
use crate::scene::{Scene, SceneObject};
use crate::state::{raw_state, RawState};
use crate::traces::{validate_trace, FeatureTrace, TraceMeta};

const MIN_LEN: usize = 15;
const MAX_LEN: usize = 60;
const MAX_ATTEMPTS: usize = 200;
/// Pitch that points the last link radially outward.
const HAND_OUT: f64 = FRAC_PI_2;
/// Preferred pitch for position protocols, hand tilted down and out.
const HAND_DOWN_OUT: f64 = 0.75 * PI;
const PITCH_STEP: f64 = 0.1;

/// Scene whose raw-state object slots match the feature being taught.
pub fn feature_scene(id: GtFeatureId, scene: &Scene) -> Scene {
    match id {
        GtFeatureId::TestLaptopLocation => Scene {
            laptop_xy: scene.test_laptop_xy,
            ..scene.clone()
        },
        GtFeatureId::BetweenObjects => Scene {
            encoded_objects: [SceneObject::ObjectA, SceneObject::ObjectB],
            ..scene.clone()
        },
        _ => scene.clone(),
    }
}

/// One straight-line teaching motion.
#[derive(Clone, Debug)]
struct Motion {
    protocol: &'static str,
    start: [f64; 3],
    end: [f64; 3],
    /// Hand pitch, searched outward from the given value when `search`.
    pitch: f64,
    search: bool,
    roll: (f64, f64),
    labels: (Option<f64>, Option<f64>),
    /// Accepted start-value range and largest accepted end value.
    start_range: (f64, f64),
    end_max: f64,
}

impl Motion {
    fn radial(protocol: &'static str, start: [f64; 3], end: [f64; 3]) -> Motion {
        Motion {
            protocol,
            start,
            end,
            pitch: HAND_DOWN_OUT,
            search: true,
            roll: (0.0, 0.0),
            labels: (None, None),
            start_range: (0.95, 1.0),
            end_max: 0.05,
        }
    }
}

fn polar(center: [f64; 2], radius: f64, angle: f64, z: f64) -> [f64; 3] {
    [center[0] + radius * angle.cos(), center[1] + radius * angle.sin(), z]
}

/// Stratified angle for trace `k` of `n` over `[lo, lo + span)`.
fn stratified(k: usize, n: usize, lo: f64, span: f64, rng: &mut impl Rng) -> f64 {
    lo + span * (k as f64 + rng.random::<f64>()) / n as f64
}

fn bump_motion(protocol: &'static str, center: [f64; 2], k: usize, n: usize, lo: f64, span: f64, rng: &mut impl Rng) -> Motion {
    let z0: f64 = rng.random_range(0.03..0.5);
    let z1 = (z0 + rng.random_range(-0.05..0.05)).clamp(0.02, 0.55);
    let angle = stratified(k, n, lo, span, rng);
    let radius = rng.random_range(0.31..0.36);
    Motion {
        pitch: rng.random_range(HAND_OUT..PI),
        ..Motion::radial(protocol, [center[0], center[1], z0], polar(center, radius, angle, z1))
    }
}

fn motion(id: GtFeatureId, k: usize, n: usize, scene: &Scene, rng: &mut impl Rng) -> Motion {
    match id {
        GtFeatureId::Table => {
            let az = rng.random_range(-1.2..1.2);
            let r = rng.random_range(0.15..0.45);
            let z0 = scene.table_height + rng.random_range(0.87..0.88);
            let z1 = scene.table_height + rng.random_range(0.0..0.004);
            let xy = [r * f64::cos(az), r * f64::sin(az)];
            Motion {
                pitch: rng.random_range(HAND_OUT..PI),
                start_range: (0.85, 1.0),
                ..Motion::radial("descend", [xy[0], xy[1], z0], [xy[0], xy[1], z1])
            }
        }
        GtFeatureId::Laptop => bump_motion("radial", scene.laptop_xy, k, n, -PI, TAU, rng),
        GtFeatureId::TestLaptopLocation => bump_motion("radial", scene.test_laptop_xy, k, n, -PI, TAU, rng),
        GtFeatureId::Human => {
            let heading = scene.human_heading;
            bump_motion("radial-front", scene.human_xy, k, n, heading - FRAC_PI_2, PI, rng)
        }
        GtFeatureId::Coffee => {
            let az: f64 = rng.random_range(-1.0..1.0);
            let r = rng.random_range(0.3..0.5);
            let z = scene.table_height + rng.random_range(0.25..0.6);
            let p = [r * az.cos(), r * az.sin(), z];
            Motion {
                protocol: "upright",
                start: p,
                end: p,
                pitch: HAND_OUT + rng.random_range(-0.2..0.2),
                search: false,
                roll: (0.0, if rng.random::<bool>() { PI } else { -PI }),
                labels: (None, None),
                start_range: (0.95, 1.0),
                end_max: 0.05,
            }
        }
        GtFeatureId::Proxemics => {
            let f = scene.human_facing();
            let s = [-f[1], f[0]];
            let h = scene.human_xy;
            let lead = rng.random_range(0.02..0.06);
            let z0 = scene.table_height + rng.random_range(0.1..0.45);
            let z1 = (z0 + rng.random_range(-0.05..0.05)).max(scene.table_height + 0.05);
            let psi = stratified(k, n, -80f64.to_radians(), 160f64.to_radians(), rng);
            let u = [psi.cos() * f[0] + psi.sin() * s[0], psi.cos() * f[1] + psi.sin() * s[1]];
            let scale = ((psi.cos() / 0.5).powi(2) + (psi.sin() / 0.25).powi(2)).sqrt();
            let rho = 1.05 / scale;
            Motion {
                start_range: (0.85, 1.0),
                ..Motion::radial(
                    "front-ellipse",
                    [h[0] + lead * f[0], h[1] + lead * f[1], z0],
                    [h[0] + rho * u[0], h[1] + rho * u[1], z1],
                )
            }
        }
        GtFeatureId::BetweenObjects => between_motion(k, scene, rng),
    }
}

fn between_motion(k: usize, scene: &Scene, rng: &mut impl Rng) -> Motion {
    let a = [scene.object_a_xyz[0], scene.object_a_xyz[1]];
    let b = [scene.object_b_xyz[0], scene.object_b_xyz[1]];
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
    let base_z = scene.object_a_xyz[2].max(scene.object_b_xyz[2]);
    let z: f64 = base_z + rng.random_range(0.05..0.45);
    let along = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    match k % 4 {
        0 | 1 => {
            let (center, away) = if k % 4 == 0 {
                (a, (-dir[1]).atan2(-dir[0]))
            } else {
                (b, dir[1].atan2(dir[0]))
            };
            let angle = away + rng.random_range(-60f64.to_radians()..60f64.to_radians());
            let radius = rng.random_range(OBJECT_RADIUS + 0.01..OBJECT_RADIUS + 0.05);
            let z1 = (z + rng.random_range(-0.05..0.05)).max(base_z + 0.02);
            Motion::radial("object-radial", [center[0], center[1], z], polar(center, radius, angle, z1))
        }
        2 => {
            let margin = (OBJECT_RADIUS + 0.01) / len;
            let (t0, t1) = if rng.random::<bool>() { (margin, 1.0 - margin) } else { (1.0 - margin, margin) };
            let p0 = along(t0);
            let p1 = along(t1);
            Motion {
                protocol: "corridor-span",
                labels: (Some(0.5), Some(0.5)),
                start_range: (0.45, 0.55),
                end_max: 0.55,
                ..Motion::radial("", [p0[0], p0[1], z], [p1[0], p1[1], z])
            }
        }
        _ => {
            let t = rng.random_range(0.44..0.56);
            let p = along(t);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let normal = [-dir[1] * side, dir[0] * side];
            let dist = rng.random_range(0.21..0.25);
            Motion {
                protocol: "corridor-exit",
                labels: (Some(0.5), None),
                start_range: (0.45, 0.55),
                ..Motion::radial(
                    "",
                    [p[0], p[1], z],
                    [p[0] + dist * normal[0], p[1] + dist * normal[1], z],
                )
            }
        }
    }
}

fn track_with(m: &Motion, len: usize, pitch: f64, elbow: Elbow) -> Option<Vec<JointConfig>> {
    let hint = m.start[1].atan2(m.start[0]);
    (0..len)
        .map(|i| {
            let t = i as f64 / (len - 1) as f64;
            let p = [
                m.start[0] + t * (m.end[0] - m.start[0]),
                m.start[1] + t * (m.end[1] - m.start[1]),
                m.start[2] + t * (m.end[2] - m.start[2]),
            ];
            let roll = m.roll.0 + t * (m.roll.1 - m.roll.0);
            planar_ik(&p, pitch, roll, elbow, hint).ok()
        })
        .collect()
}

/// Joint configurations along the motion, or `None` when the path leaves
/// the workspace or no constant pitch reaches every waypoint.
fn track(m: &Motion, len: usize, scene: &Scene) -> Option<Vec<JointConfig>> {
    if !scene.workspace.contains(&m.start) || !scene.workspace.contains(&m.end) {
        return None;
    }
    let steps = if m.search { (PI / PITCH_STEP) as i32 } else { 0 };
    for k in 0..=2 * steps {
        // 0, +1, -1, +2, -2, ...
        let offset = if k % 2 == 1 { (k + 1) / 2 } else { -(k / 2) };
        let pitch = m.pitch + offset as f64 * PITCH_STEP;
        for elbow in [Elbow::Positive, Elbow::Negative] {
            if let Some(qs) = track_with(m, len, pitch, elbow) {
                return Some(qs);
            }
        }
    }
    None
}

/// Keeps each state whose GT value does not exceed the last kept value.
fn monotone_filter(states: Vec<RawState>, values: &[f64]) -> (Vec<RawState>, Vec<f64>) {
    let mut kept = Vec::with_capacity(states.len());
    let mut kept_values = Vec::with_capacity(states.len());
    for (s, &v) in states.into_iter().zip(values) {
        if kept_values.last().is_none_or(|&last: &f64| v <= last) {
            kept.push(s);
            kept_values.push(v);
        }
    }
    (kept, kept_values)
}

/// Swaps interior state `i` with its successor with probability `p`,
/// keeping both endpoints in place.
pub fn swap_noise<T>(states: &mut [T], p: f64, rng: &mut impl Rng) {
    let n = states.len();
    if n < 4 || p <= 0.0 {
        return;
    }
    let mut i = 1;
    while i + 1 < n - 1 {
        if rng.random::<f64>() < p {
            states.swap(i, i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
}

/// `n` traces for `id` following its protocol, deterministic per seed.
pub fn synth_traces(id: GtFeatureId, n: usize, scene: &Scene, noise_p: f64, seed: u64) -> Result<Vec<FeatureTrace>> {
    if n == 0 {
        return Err(FerlError::invalid("trace count", "must be at least 1"));
    }
    if !(0.0..=0.5).contains(&noise_p) {
        return Err(FerlError::invalid("noise", format!("{noise_p} outside [0, 0.5]")));
    }
    let state_scene = feature_scene(id, scene);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        out.push(synth_one(id, k, n, scene, &state_scene, noise_p, seed, &mut rng)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn synth_one(
    id: GtFeatureId,
    k: usize,
    n: usize,
    scene: &Scene,
    state_scene: &Scene,
    noise_p: f64,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureTrace> {
    for _ in 0..MAX_ATTEMPTS {
        let m = motion(id, k, n, scene, rng);
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let Some(qs) = track(&m, len, scene) else { continue };
        let states: Vec<RawState> = qs.iter().map(|q| raw_state(q, state_scene)).collect::<Result<_>>()?;
        let values: Vec<f64> = states.iter().map(|s| id.eval_state(s, scene)).collect();
        let (mut states, values) = monotone_filter(states, &values);
        if states.len() < 2 {
            continue;
        }
        let first = values[0];
        let last = values[values.len() - 1];
        if first < m.start_range.0 || first > m.start_range.1 || last > m.end_max {
            continue;
        }
        swap_noise(&mut states, noise_p, rng);
        let meta = TraceMeta {
            feature: id.name().to_string(),
            seed,
            protocol: m.protocol.to_string(),
            scene_hash: scene.hash_hex(),
        };
        return validate_trace(states, m.labels.0, m.labels.1, meta);
    }
    Err(FerlError::Numerical(format!(
        "teacher could not place trace {k} for {id} after {MAX_ATTEMPTS} attempts"
    )))
}

/// Degrees of the circle covered by the given directions, i.e. 360 minus
/// the largest angular gap between consecutive directions.
pub fn azimuth_coverage(angles: &[f64]) -> f64 {
    if angles.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = angles.iter().map(|x| x.rem_euclid(TAU)).collect();
    a.sort_by(f64::total_cmp);
    let mut gap = a[0] + TAU - a[a.len() - 1];
    for w in a.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    (TAU - gap).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(t: &FeatureTrace, id: GtFeatureId, scene: &Scene) -> Vec<f64> {
        t.states.iter().map(|s| id.eval_state(s, scene)).collect()
    }

    #[test]
    fn every_feature_yields_monotone_traces() {
        let scene = Scene::default();
        for id in GtFeatureId::ALL {
            let traces = synth_traces(id, 8, &scene, 0.0, 3).unwrap();
            assert_eq!(traces.len(), 8);
            for t in &traces {
                let v = values(t, id, &scene);
                assert!(v.windows(2).all(|w| w[1] <= w[0]), "{id} {v:?}");
                assert!(t.len() >= 2 && t.len() <= MAX_LEN);
            }
        }
    }

    #[test]
    fn laptop_endpoints_and_coverage() {
        let scene = Scene::default();
        let traces = synth_traces(GtFeatureId::Laptop, 20, &scene, 0.0, 7).unwrap();
        let mut dirs = Vec::new();
        for t in &traces {
            let v = values(t, GtFeatureId::Laptop, &scene);
            assert!(v[0] >= 0.95 && v[v.len() - 1] <= 0.05);
            let a = t.first().ee_position();
            let b = t.last().ee_position();
            dirs.push((b[1] - a[1]).atan2(b[0] - a[0]));
        }
        assert!(azimuth_coverage(&dirs) >= 300.0);
    }

    #[test]
    fn between_objects_has_labeled_traces() {
        let scene = Scene::default();
        let traces = synth_traces(GtFeatureId::BetweenObjects, 8, &scene, 0.0, 1).unwrap();
        assert!(traces.iter().any(|t| t.label_end == Some(0.5) && t.label_start == Some(0.5)));
        assert!(traces.iter().any(|t| t.label_start == Some(0.5) && t.label_end.is_none()));
    }

    #[test]
    fn coffee_rotates_in_place() {
        let scene = Scene::default();
        for t in synth_traces(GtFeatureId::Coffee, 5, &scene, 0.0, 2).unwrap() {
            let a = t.first().ee_position();
            let b = t.last().ee_position();
            let d: f64 = (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_noise_keeps_endpoints() {
        let scene = Scene::default();
        let a = synth_traces(GtFeatureId::Table, 4, &scene, 0.2, 9).unwrap();
        let b = synth_traces(GtFeatureId::Table, 4, &scene, 0.2, 9).unwrap();
        assert_eq!(a, b);
        let clean = synth_traces(GtFeatureId::Table, 4, &scene, 0.0, 9).unwrap();
        assert_ne!(a, clean);
        assert!(synth_traces(GtFeatureId::Table, 0, &scene, 0.0, 9).is_err());
        assert!(synth_traces(GtFeatureId::Table, 1, &scene, 0.6, 9).is_err());
    }

    #[test]
    fn swap_noise_is_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut v: Vec<usize> = (0..20).collect();
        swap_noise(&mut v, 0.5, &mut rng);
        assert_eq!(v[0], 0);
        assert_eq!(v[19], 19);
        for (i, &x) in v.iter().enumerate() {
            assert!(x.abs_diff(i) <= 1);
        }
    }
}
