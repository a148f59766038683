use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ferl::eval::feature_field;
use ferl::experiment::Report;
use ferl::io::{field_from_str, load_net, load_traces, trajectory_from_str};
use ferl::scene::Scene;

fn ferl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ferl"))
        .args(args)
        .env_remove("FERL_SCENE")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ferl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn teach_writes_one_file_per_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("traces");
    ok(&["teach", "--feature", "laptop", "--n", "10", "--seed", "7", "--out", p(&out)]);
    let files = dir_bytes(&out);
    assert_eq!(files.len(), 10);
    for (name, _) in &files {
        assert!(name.ends_with(".trace"));
        let traces = load_traces(out.join(name)).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].meta.feature, "laptop");
        assert_eq!(traces[0].meta.seed, 7);
    }
    let again = tmp.path().join("again");
    ok(&["teach", "--feature", "laptop", "--n", "10", "--seed", "7", "--out", p(&again)]);
    assert_eq!(dir_bytes(&again), files);
    let other = tmp.path().join("other");
    ok(&["teach", "--feature", "laptop", "--n", "10", "--seed", "8", "--out", p(&other)]);
    assert_ne!(dir_bytes(&other)[0].1, files[0].1);
}

#[test]
fn train_and_export_field_match_library() {
    let tmp = tempfile::tempdir().unwrap();
    let traces = tmp.path().join("traces");
    let net = tmp.path().join("f.net");
    ok(&["teach", "--feature", "table", "--n", "3", "--seed", "1", "--out", p(&traces)]);
    let before = dir_bytes(&traces);
    ok(&["train-feature", "--traces", p(&traces), "--encoding", "pos27", "--epochs", "10", "--out", p(&net)]);
    assert_eq!(dir_bytes(&traces), before);

    let net_bytes = fs::read(&net).unwrap();
    ok(&["export-field", "--net", p(&net), "--samples", "300", "--seed", "1"]);
    assert_eq!(fs::read(&net).unwrap(), net_bytes);
    let text = fs::read_to_string(net.with_extension("field")).unwrap();
    let got = field_from_str(&text).unwrap();
    let want = feature_field(&load_net(&net).unwrap(), &Scene::default(), 300, 1).unwrap();
    assert_eq!(got, want);
}

#[test]
fn train_feature_seed_threads_through() {
    let tmp = tempfile::tempdir().unwrap();
    let traces = tmp.path().join("t.trace");
    ok(&["teach", "--feature", "table", "--n", "2", "--seed", "2", "--out", p(tmp.path())]);
    let first = fs::read_dir(tmp.path()).unwrap().next().unwrap().unwrap().path();
    fs::copy(first, &traces).unwrap();
    let run = |seed: &str, name: &str| {
        let out = tmp.path().join(name);
        ok(&["train-feature", "--traces", p(&traces), "--encoding", "pos27", "--epochs", "5", "--seed", seed, "--out", p(&out)]);
        fs::read(out).unwrap()
    };
    assert_eq!(run("3", "a.net"), run("3", "b.net"));
    assert_ne!(run("3", "a.net"), run("4", "c.net"));
}

#[test]
fn experiment_writes_report_at_configured_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sweep.cfg");
    fs::write(
        &cfg,
        "kind = \"feature_sweep\"\nfeature = \"table\"\nmax_traces = 2\nseeds = [0, 1]\ntest_states = 200\nepochs = 5\noutput = \"out/report.txt\"\n",
    )
    .unwrap();
    ok(&["experiment", "--config", p(&cfg)]);
    let report = Report::load(tmp.path().join("out/report.txt")).unwrap();
    assert_eq!(report.meta_value("kind"), Some("feature_sweep"));
    assert_eq!(report.rows.len(), 4);

    let override_out = tmp.path().join("one.txt");
    ok(&["experiment", "--config", p(&cfg), "--seeds", "5", "--output", p(&override_out)]);
    let report = Report::load(&override_out).unwrap();
    assert_eq!(report.meta_value("seeds"), Some("5"));
    assert_eq!(report.rows.len(), 2);

    let svg = tmp.path().join("sweep.svg");
    ok(&["plot", "--report", p(&override_out), "--out", p(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn experiment_rejects_empty_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "seeds = []\n").unwrap();
    let out = ferl(&["experiment", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));
}

#[test]
fn plot_comparison_report() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("cmp.txt");
    fs::write(
        &report,
        "ferl-report v1\nkind comparison\n[metrics]\nseed ferl_mse meirl_mse ferl_ratio meirl_ratio\n0.0 0.01 0.05 1.1 2.0\n[summary]\nmetric mean se median\n0.0 0.01 0.0 0.01\n1.0 0.05 0.0 0.05\n2.0 1.1 0.0 1.1\n3.0 2.0 0.0 2.0\nend\n",
    )
    .unwrap();
    let svg = tmp.path().join("cmp.svg");
    ok(&["plot", "--report", p(&report), "--out", p(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains("ME-IRL"));
    assert!(text.contains("reward MSE"));
}

#[test]
fn plan_writes_trajectory_between_endpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("traj.txt");
    let goal = "1.0,0.6,0.0,1.2,0.0,0.8,0.0";
    ok(&["plan", "--features", "coffee,table", "--theta", "0,10", "--start", "home", "--goal", goal, "--out", p(&out)]);
    let traj = trajectory_from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(traj.start().0, [0.0, 0.6, 0.0, 1.2, 0.0, 0.8, 0.0]);
    assert_eq!(traj.goal().0, [1.0, 0.6, 0.0, 1.2, 0.0, 0.8, 0.0]);

    let bad = ferl(&["plan", "--features", "table", "--start", "home", "--goal", "1,2", "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("goal"));
}

#[test]
fn meirl_train_then_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let net = tmp.path().join("m.meirl");
    ok(&["train-meirl", "--task", "1", "--demos", "2", "--iterations", "1", "--seed", "3", "--out", p(&net)]);
    let out = tmp.path().join("traj.txt");
    ok(&["plan", "--meirl", p(&net), "--start", "home", "--goal", "0.8,0.6,0.0,1.2,0.0,0.8,0.0", "--out", p(&out)]);
    assert!(trajectory_from_str(&fs::read_to_string(&out).unwrap()).is_ok());
}

#[test]
fn ferl_run_writes_reward_and_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["ferl-run", "--task", "1", "--rounds", "1", "--traces", "3", "--seed", "1", "--out", p(tmp.path())]);
    assert!(stdout.starts_with("round beta_hat"));
    let scene = Scene::default();
    let model = ferl::io::load_reward(tmp.path().join("reward.txt"), &scene).unwrap();
    assert!(model.features().len() >= 2);
    assert!(tmp.path().join("trajectory.txt").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ferl(&["bogus"]).status.code(), Some(2));
    assert_eq!(ferl(&["teach", "--feature", "teapot", "--out", "x"]).status.code(), Some(2));
    assert_eq!(ferl(&["teach", "--feature", "table", "--out", "x", "--colour", "red"]).status.code(), Some(2));
}

#[test]
fn scene_flag_and_env_are_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let scene_path = tmp.path().join("scene.toml");
    let mut scene = Scene::default();
    scene.laptop_xy = [0.4, 0.0];
    scene.save(&scene_path).unwrap();
    let out = tmp.path().join("t");
    ok(&["--scene", p(&scene_path), "teach", "--feature", "laptop", "--n", "1", "--out", p(&out)]);
    let trace = &dir_bytes(&out)[0];
    let traces = load_traces(out.join(&trace.0)).unwrap();
    assert_eq!(traces[0].meta.scene_hash, scene.hash_hex());

    let env_out = tmp.path().join("e");
    let status = Command::new(env!("CARGO_BIN_EXE_ferl"))
        .args(["teach", "--feature", "laptop", "--n", "1", "--out", p(&env_out)])
        .env("FERL_SCENE", &scene_path)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(dir_bytes(&env_out), dir_bytes(&out));
}
