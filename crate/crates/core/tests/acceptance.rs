//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Pass criterion names (e.g. `A3 A7`)
//! as arguments to run a subset.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ferl::arm::{forward_kinematics, sample_uniform_joints, JointConfig};
use ferl::eval::{behavior_accuracy, behavior_pairs, compare_seed, mean_se, median, ComparisonConfig, FeatureBench};
use ferl::experiment::{between_objects_study, build_report, ExperimentConfig, ExperimentKind};
use ferl::gt::GtFeatureId;
use ferl::ik::{ik_step, planar_ik_any, IkConfig, OrientationGoal};
use ferl::io::{meirl_to_string, net_to_string};
use ferl::learner::{dataset_loss, decomposed_loss, subspace_scores, train_feature, FeatureNet, TrainConfig};
use ferl::meirl::{meirl_gradient, meirl_objective, synth_demos, train_meirl, MeirlConfig, MeirlNet, Task};
use ferl::planner::{plan, Correction, PlanConfig, Trajectory};
use ferl::reward::{ferl_step, BetaBelief, FerlConfig, RewardModel, TeacherSource};
use ferl::scene::Scene;
use ferl::state::{raw_state, Encoding};
use ferl::teacher::synth_traces;
use ferl::traces::{build_dataset, validate_trace, FeatureTrace, TraceMeta, EQUAL_COPIES, EQUAL_WEIGHT};

type Outcome = Result<(bool, String), String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "A1", budget: Duration::from_secs(10), run: a1_loss_identity },
        Criterion { name: "A2", budget: Duration::from_secs(60), run: a2_gradient_oracle },
        Criterion { name: "A3", budget: Duration::from_secs(5), run: a3_dataset_count },
        Criterion { name: "A4", budget: minutes(10), run: a4_feature_trend },
        // A5 and A6 share one run of the comparison; its time counts against
        // the tighter of the two budgets.
        Criterion { name: "A5", budget: minutes(20), run: a5_a6_comparison },
        Criterion { name: "A7", budget: minutes(5), run: a7_confidence_gate },
        Criterion { name: "A8", budget: minutes(10), run: a8_subspace },
        Criterion { name: "A9", budget: minutes(15), run: a9_between_objects },
        Criterion { name: "A10", budget: minutes(10), run: a10_determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut failed = 0;
    for c in &criteria {
        let selected = filter.is_empty()
            || filter.iter().any(|f| f == c.name || (c.name == "A5" && f == "A6"));
        if !selected {
            continue;
        }
        let t0 = Instant::now();
        let outcome = (c.run)();
        let elapsed = t0.elapsed();
        let in_budget = elapsed <= c.budget;
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        let budget_note = if in_budget { String::new() } else { format!(" OVER BUDGET {:?}", c.budget) };
        println!(
            "{} {} {} [{:.1}s]{}",
            c.name,
            if ok { "PASS" } else { "FAIL" },
            detail,
            elapsed.as_secs_f64(),
            budget_note
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Traces of random joint configurations with random labels.
fn random_traces(rng: &mut ChaCha8Rng, scene: &Scene, count: usize, max_len: usize) -> Vec<FeatureTrace> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(2..=max_len);
            let states = sample_uniform_joints(len, rng).iter().map(|q| raw_state(q, scene).unwrap()).collect();
            let label = |rng: &mut ChaCha8Rng| rng.random_bool(0.3).then(|| rng.random_range(0.0..=1.0));
            let (ls, le) = (label(rng), label(rng));
            validate_trace(states, ls, le, TraceMeta::default()).unwrap()
        })
        .collect()
}

fn random_net(rng: &mut ChaCha8Rng) -> FeatureNet {
    let encoding = [Encoding::Pos27, Encoding::Rot9, Encoding::PosRot36][rng.random_range(0..3)];
    let hidden = [rng.random_range(3..12), rng.random_range(3..12)];
    FeatureNet::new(encoding, &hidden, rng.random())
}

fn a1_loss_identity() -> Outcome {
    let scene = Scene::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..6);
        let traces = random_traces(&mut rng, &scene, n, 8);
        let ds = build_dataset(&traces, rng.random_bool(0.5)).map_err(err)?;
        let mut net = random_net(&mut rng);
        if rng.random_bool(0.7) {
            let x = net.encode(&ds.states);
            net.refresh_norm(x.view());
        }
        let total = dataset_loss(&net, &ds).map_err(err)?.0;
        let parts = decomposed_loss(&net, &ds).map_err(err)?;
        worst = worst.max((total - parts).abs());
    }
    Ok((worst <= 1e-9, format!("100 datasets, max |total - decomposition| = {worst:.2e} (tol 1e-9)")))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

fn random_traj(rng: &mut ChaCha8Rng) -> Trajectory {
    let q = sample_uniform_joints(2, rng);
    Trajectory::straight(&q[0], &q[1], rng.random_range(3..9)).unwrap()
}

fn a2_gradient_oracle() -> Outcome {
    let scene = Scene::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Feature losses reach ~1e2 with gradients near 1e-4 on saturated nets,
    // so a larger step keeps roundoff below the tolerance. The ReLU
    // objective needs the smaller step to avoid straddling kinks.
    let h = 1e-5;
    let mut worst_feature: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..5);
        let traces = random_traces(&mut rng, &scene, n, 6);
        let ds = build_dataset(&traces, rng.random_bool(0.5)).map_err(err)?;
        let mut net = random_net(&mut rng);
        let x = net.encode(&ds.states);
        net.refresh_norm(x.view());
        let analytic = dataset_loss(&net, &ds).map_err(err)?.1;
        let p0 = net.mlp.params_flat();
        let mut fd = vec![0.0; p0.len()];
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] = p0[k] + h;
            net.mlp.set_params_flat(&p).map_err(err)?;
            let up = dataset_loss(&net, &ds).map_err(err)?.0;
            p[k] = p0[k] - h;
            net.mlp.set_params_flat(&p).map_err(err)?;
            let down = dataset_loss(&net, &ds).map_err(err)?.0;
            fd[k] = (up - down) / (2.0 * h);
        }
        worst_feature = worst_feature.max(rel_err(&analytic, &fd));
    }
    let h = 1e-6;
    let mut worst_meirl: f64 = 0.0;
    for _ in 0..20 {
        let known = [GtFeatureId::Coffee, GtFeatureId::Table, GtFeatureId::Laptop];
        let k = rng.random_range(0..=known.len());
        let hidden = [rng.random_range(4..16), rng.random_range(4..16)];
        let mut net = MeirlNet::new(&known[..k], &hidden, &scene, rng.random());
        let demos: Vec<Trajectory> = (0..rng.random_range(1..3)).map(|_| random_traj(&mut rng)).collect();
        let samples: Vec<Trajectory> = (0..rng.random_range(1..3)).map(|_| random_traj(&mut rng)).collect();
        let analytic = meirl_gradient(&net, &demos, &samples).map_err(err)?;
        let p0 = net.params_flat();
        let mut fd = vec![0.0; p0.len()];
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] = p0[k] + h;
            net.set_params_flat(&p).map_err(err)?;
            let up = meirl_objective(&net, &demos, &samples).map_err(err)?;
            p[k] = p0[k] - h;
            net.set_params_flat(&p).map_err(err)?;
            let down = meirl_objective(&net, &demos, &samples).map_err(err)?;
            fd[k] = (up - down) / (2.0 * h);
        }
        worst_meirl = worst_meirl.max(rel_err(&analytic, &fd));
    }
    Ok((
        worst_feature < 1e-4 && worst_meirl < 1e-4,
        format!("max relative error dataset_loss {worst_feature:.2e}, meirl_gradient {worst_meirl:.2e} (tol 1e-4, 20 cases each)"),
    ))
}

fn choose2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

fn a3_dataset_count() -> Outcome {
    let scene = Scene::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n_traces = rng.random_range(1..9);
        let traces = random_traces(&mut rng, &scene, n_traces, 12);
        // A trace s_0..s_n has n + 1 states.
        let within: usize = traces.iter().map(|t| choose2((t.len() - 1) + 1)).sum();
        let plain = build_dataset(&traces, false).map_err(err)?;
        let aug = build_dataset(&traces, true).map_err(err)?;
        let equal = 2 * choose2(n_traces);
        let aug_ok = aug.tuples.len() == within + EQUAL_COPIES * equal
            && aug.tuples.iter().filter(|t| t.y == 0.5).count() == EQUAL_COPIES * equal
            && aug.tuples.iter().all(|t| (t.weight == EQUAL_WEIGHT) == (t.y == 0.5));
        if plain.tuples.len() != within + equal || !aug_ok {
            mismatches += 1;
        }
    }
    let rule = EQUAL_COPIES == 5 && EQUAL_WEIGHT == 10.0;
    Ok((
        mismatches == 0 && rule,
        format!("100 collections, {mismatches} count mismatches; augmentation {EQUAL_COPIES} copies at weight {EQUAL_WEIGHT}"),
    ))
}

fn a4_feature_trend() -> Outcome {
    let scene = Scene::default();
    let train = TrainConfig {
        encoding: Encoding::Pos27,
        ..TrainConfig::default()
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for id in [GtFeatureId::Table, GtFeatureId::Laptop] {
        let mut at = [Vec::new(), Vec::new()];
        for seed in 0..10u64 {
            let bench = FeatureBench::new(id, &scene, train.encoding, &train.hidden, 10_000, seed).map_err(err)?;
            for (slot, n) in [1usize, 9].into_iter().enumerate() {
                let traces = synth_traces(id, n, &scene, 0.0, seed).map_err(err)?;
                let net = train_feature(&traces, &TrainConfig { seed, ..train.clone() }).map_err(err)?;
                at[slot].push(bench.mse_norm(&net).map_err(err)?);
            }
        }
        let (mean9, se9) = mean_se(&at[1]);
        let (_, se1) = mean_se(&at[0]);
        let (med1, med9) = (median(&at[0]), median(&at[1]));
        let pass = mean9 < 0.5 && med9 <= med1 && se9 <= se1;
        ok &= pass;
        detail.push(format!(
            "{}: mean@9 {mean9:.3} (<0.5), median@1 {med1:.3} median@9 {med9:.3}, se@1 {se1:.3} se@9 {se9:.3}",
            id.name()
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn a5_a6_comparison() -> Outcome {
    let scene = Scene::default();
    let cfg = ComparisonConfig::default();
    let mut wins = 0;
    let mut ferl_ratios = Vec::new();
    let mut meirl_ratios = Vec::new();
    let mut mses = Vec::new();
    for seed in 0..10u64 {
        let c = compare_seed(&cfg, &scene, seed).map_err(err)?;
        if c.ferl_mse < c.meirl_mse {
            wins += 1;
        }
        mses.push(format!("{:.4}/{:.4}", c.ferl_mse, c.meirl_mse));
        ferl_ratios.extend(c.ferl_ratios);
        meirl_ratios.extend(c.meirl_ratios);
    }
    let gt = cfg.task.gt_model(&scene).map_err(err)?;
    let pairs = behavior_pairs(cfg.task, &scene, cfg.behavior_pairs, 0).map_err(err)?;
    let own = behavior_accuracy(&gt, &gt, &pairs, &cfg.behavior_plan).map_err(err)?;
    let self_dev = own.ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    let fm = mean_se(&ferl_ratios).0;
    let mm = mean_se(&meirl_ratios).0;
    let a5 = wins >= 8;
    let a6 = (fm - 1.0).abs() < (mm - 1.0).abs() && self_dev <= 1e-6;
    println!(
        "A5 {} FERL reward MSE lower in {wins}/10 paired seeds (need >= 8); ferl/meirl per seed {}",
        if a5 { "PASS" } else { "FAIL" },
        mses.join(" ")
    );
    println!(
        "A6 {} mean GT-reward ratio FERL {fm:.3} vs ME-IRL {mm:.3} over {} pairs; GT self-ratio max |r - 1| = {self_dev:.1e} (tol 1e-6)",
        if a6 { "PASS" } else { "FAIL" },
        ferl_ratios.len()
    );
    Ok((a5 && a6, "comparison run (A5 and A6 lines above)".into()))
}

/// Joint displacement at waypoint `index` that moves the EE by `dx`.
fn push_correction(q: &JointConfig, dx: [f64; 3], index: usize) -> Correction {
    let p = forward_kinematics(q).unwrap().ee_position();
    let target = [p.x + dx[0], p.y + dx[1], p.z + dx[2]];
    let mut moved = *q;
    for _ in 0..5 {
        moved = ik_step(&moved, &target, &OrientationGoal::Free, &IkConfig::default());
    }
    let mut delta = [0.0; 7];
    for (j, d) in delta.iter_mut().enumerate() {
        *d = moved.0[j] - q.0[j];
    }
    Correction { index, delta }
}

struct GateRun {
    beta_hat: f64,
    learned: bool,
    theta: Vec<f64>,
}

/// Plans under `model`, pushes the middle waypoint 20 cm away from the
/// laptop and runs one interaction step.
fn gate_run(model: &RewardModel, seed: u64) -> Result<GateRun, String> {
    let scene = &model.scene;
    let (a, _) = planar_ik_any(&[0.35, -0.3, 0.35], 0.75 * PI, 0.0, 0.0).map_err(err)?;
    let (b, _) = planar_ik_any(&[0.3, 0.55, 0.35], 0.75 * PI, 0.0, 0.0).map_err(err)?;
    let cfg = FerlConfig {
        seed,
        ..FerlConfig::default()
    };
    let tau = plan(model, &a, &b, scene, &cfg.plan).map_err(err)?;
    let mid = tau.len() / 2;
    let p = forward_kinematics(&tau.waypoints[mid]).map_err(err)?.ee_position();
    let away = [p.x - scene.laptop_xy[0], p.y - scene.laptop_xy[1]];
    let norm = away[0].hypot(away[1]).max(1e-9);
    let c = push_correction(&tau.waypoints[mid], [0.2 * away[0] / norm, 0.2 * away[1] / norm, 0.0], mid);
    let mut source = TeacherSource {
        id: GtFeatureId::Laptop,
        scene: scene.clone(),
        noise_p: 0.0,
        seed,
    };
    let out = ferl_step(model, &BetaBelief::default(), &c, &tau, &mut source, &cfg).map_err(err)?;
    Ok(GateRun {
        beta_hat: out.beta_hat,
        learned: out.learned_feature,
        theta: out.model.theta().to_vec(),
    })
}

fn a7_confidence_gate() -> Outcome {
    let scene = Scene::default();
    let known = RewardModel::gt(
        scene.clone(),
        &[GtFeatureId::Coffee, GtFeatureId::Table, GtFeatureId::Laptop],
        vec![0.0, 10.0, 1.0],
    )
    .map_err(err)?;
    let absent = RewardModel::gt(scene.clone(), &[GtFeatureId::Coffee, GtFeatureId::Table], vec![0.0, 10.0]).map_err(err)?;
    let eps = BetaBelief::default().epsilon;
    let seed = 1;
    let k1 = gate_run(&known, seed)?;
    let k2 = gate_run(&known, seed)?;
    let a1 = gate_run(&absent, seed)?;
    let a2 = gate_run(&absent, seed)?;
    let explained = k1.beta_hat >= eps && !k1.learned && k1.theta.len() == 3;
    let missing = a1.beta_hat < eps && a1.learned && a1.theta.len() == 3;
    let deterministic = k1.beta_hat.to_bits() == k2.beta_hat.to_bits()
        && a1.beta_hat.to_bits() == a2.beta_hat.to_bits()
        && k1.theta == k2.theta
        && a1.theta == a2.theta;
    Ok((
        explained && missing && deterministic,
        format!(
            "laptop known: beta {:.3} learned {} |theta| {}; laptop absent: beta {:.3} learned {} |theta| 2 -> {}; eps {eps}; repeat identical {deterministic}",
            k1.beta_hat,
            k1.learned,
            k1.theta.len(),
            a1.beta_hat,
            a1.learned,
            a1.theta.len()
        ),
    ))
}

fn a8_subspace() -> Outcome {
    let scene = Scene::default();
    let position = [
        GtFeatureId::Table,
        GtFeatureId::Laptop,
        GtFeatureId::Proxemics,
        GtFeatureId::BetweenObjects,
        GtFeatureId::TestLaptopLocation,
    ];
    let mut cases: Vec<(GtFeatureId, u64, Encoding)> =
        position.iter().enumerate().map(|(k, &id)| (id, k as u64, Encoding::Pos27)).collect();
    cases.extend((0..5u64).map(|s| (GtFeatureId::Coffee, s, Encoding::Rot9)));
    let mut correct = 0;
    let mut wrong = Vec::new();
    for (id, seed, want) in cases {
        let traces = synth_traces(id, 10, &scene, 0.0, seed).map_err(err)?;
        let choice = subspace_scores(&traces, &TrainConfig { seed, ..TrainConfig::default() }).map_err(err)?.choice();
        if choice == want {
            correct += 1;
        } else {
            wrong.push(format!("{}#{seed}", id.name()));
        }
    }
    Ok((correct >= 8, format!("{correct}/10 correct (need >= 8); missed: [{}]", wrong.join(", "))))
}

fn a9_between_objects() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let pairs = between_objects_study(&Scene::default(), 10, &seeds, 0.0, 10_000, TrainConfig::default().epochs).map_err(err)?;
    let m9 = median(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let m27 = median(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok((m9 < m27, format!("median MSE 9D {m9:.4} vs 27D {m27:.4}, 10 seeds")))
}

fn a10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let small = |kind: ExperimentKind, name: &str| ExperimentConfig {
        kind,
        feature: "laptop".into(),
        max_traces: 2,
        traces: 3,
        demos: 3,
        seeds: vec![4, 5],
        test_states: 300,
        behavior_pairs: 2,
        epochs: 5,
        meirl_iterations: 2,
        output: dir.path().join(name),
        ..ExperimentConfig::default()
    };
    let mut same = Vec::new();
    for kind in [ExperimentKind::FeatureSweep, ExperimentKind::Comparison, ExperimentKind::BetweenObjects] {
        let cfg = small(kind, "r.txt");
        let a = build_report(&cfg).map_err(err)?.to_text();
        let b = build_report(&cfg).map_err(err)?.to_text();
        same.push((kind.name(), a == b));
    }
    let scene = Scene::default();
    let traces = synth_traces(GtFeatureId::Table, 4, &scene, 0.1, 8).map_err(err)?;
    let cfg = TrainConfig { epochs: 20, seed: 8, ..TrainConfig::default() };
    let n1 = net_to_string(&train_feature(&traces, &cfg).map_err(err)?);
    let n2 = net_to_string(&train_feature(&traces, &cfg).map_err(err)?);
    same.push(("feature net", n1 == n2));
    let demos = synth_demos(Task::One, 3, &scene, &PlanConfig::default(), 8).map_err(err)?;
    let mcfg = MeirlConfig { iterations: 3, seed: 8, ..MeirlConfig::default() };
    let known = Task::One.known_features();
    let m1 = meirl_to_string(&train_meirl(&demos, &known, &scene, &mcfg).map_err(err)?);
    let m2 = meirl_to_string(&train_meirl(&demos, &known, &scene, &mcfg).map_err(err)?);
    same.push(("meirl net", m1 == m2));
    let all = same.iter().all(|s| s.1);
    let list: Vec<String> = same.iter().map(|(k, s)| format!("{k} {}", if *s { "identical" } else { "DIFFERS" })).collect();
    Ok((all, list.join(", ")))
}
