use std::sync::Arc;

use ferl::arm::JointConfig;
use ferl::gt::GtFeatureId;
use ferl::io::{
    load_meirl, load_net, load_reward, load_trace_dir, meirl_from_str, meirl_to_string, save_meirl, save_net,
    save_reward, save_traces, trajectory_from_str, trajectory_to_string,
};
use ferl::learner::FeatureNet;
use ferl::meirl::MeirlNet;
use ferl::planner::Trajectory;
use ferl::reward::{RewardFeature, RewardModel};
use ferl::scene::Scene;
use ferl::state::Encoding;
use ferl::teacher::synth_traces;

#[test]
fn meirl_round_trip_and_scene_check() {
    let scene = Scene::default();
    let net = MeirlNet::new(&[GtFeatureId::Coffee, GtFeatureId::Laptop], &[6, 5], &scene, 9);
    let text = meirl_to_string(&net);
    let back = meirl_from_str(&text, &scene).unwrap();
    assert_eq!(back, net);
    assert_eq!(meirl_to_string(&back), text);

    let mut other = scene.clone();
    other.laptop_xy = [0.1, 0.1];
    assert!(meirl_from_str(&text, &other).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.meirl");
    save_meirl(&path, &net).unwrap();
    assert_eq!(load_meirl(&path, &scene).unwrap(), net);
}

#[test]
fn reward_manifest_round_trip() {
    let scene = Scene::default();
    let mut model = RewardModel::gt(scene.clone(), &[GtFeatureId::Coffee, GtFeatureId::Table], vec![0.0, 10.0]).unwrap();
    let net = FeatureNet::new(Encoding::Pos27, &[8, 8], 2);
    model.push_feature(RewardFeature::Learned(Arc::new(net.clone())));
    model.set_theta(vec![0.0, 10.0, 2.5]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reward.txt");
    save_reward(&path, &model).unwrap();
    assert!(dir.path().join("reward.f2.net").exists());
    let back = load_reward(&path, &scene).unwrap();
    assert_eq!(back.theta(), model.theta());
    let names: Vec<String> = back.features().iter().map(|f| f.name()).collect();
    assert_eq!(names, model.features().iter().map(|f| f.name()).collect::<Vec<_>>());
    let traj = Trajectory::straight(&JointConfig::HOME, &JointConfig::ZERO, 7).unwrap();
    let states = traj.states(&scene).unwrap();
    assert_eq!(back.state_rewards(&states), model.state_rewards(&states));
}

#[test]
fn net_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.net");
    let net = FeatureNet::new(Encoding::EeObjects9, &[4], 5);
    save_net(&path, &net).unwrap();
    assert_eq!(load_net(&path).unwrap(), net);
}

#[test]
fn trajectory_round_trip() {
    let scene = Scene::default();
    let mut goal = JointConfig::HOME;
    goal.0[0] = 1.0 / 3.0;
    let traj = Trajectory::straight(&JointConfig::HOME, &goal, 9).unwrap();
    let text = trajectory_to_string(&traj, &scene).unwrap();
    assert_eq!(trajectory_from_str(&text).unwrap(), traj);
    assert!(trajectory_from_str(&text.replace("ferl-trajectory v1", "ferl-trajectory v9")).is_err());
}

#[test]
fn trace_directory_loads_sorted() {
    let scene = Scene::default();
    let traces = synth_traces(GtFeatureId::Table, 3, &scene, 0.0, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (k, t) in traces.iter().enumerate().rev() {
        save_traces(dir.path().join(format!("t{k}.trace")), std::slice::from_ref(t)).unwrap();
    }
    std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
    assert_eq!(load_trace_dir(dir.path()).unwrap(), traces);
}
