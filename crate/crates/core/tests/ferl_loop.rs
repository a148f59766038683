use ferl::arm::JointConfig;
use ferl::gt::GtFeatureId;
use ferl::planner::{plan, Correction, PlanConfig};
use ferl::reward::{ferl_step, BetaBelief, FerlConfig, RewardModel, StoredSource};
use ferl::scene::Scene;
use ferl::teacher::synth_traces;

/// Existing features keep their order whether or not a feature is learned.
#[test]
fn step_never_drops_or_reorders_features() {
    let scene = Scene::default();
    let model = RewardModel::gt(scene.clone(), &[GtFeatureId::Coffee, GtFeatureId::Table], vec![0.0, 10.0]).unwrap();
    let mut goal = JointConfig::HOME;
    goal.0[0] = 1.2;
    let cfg = FerlConfig {
        traces: 3,
        auto_subspace: false,
        plan: PlanConfig { iterations: 40, ..PlanConfig::default() },
        ..FerlConfig::default()
    };
    let traj = plan(&model, &JointConfig::HOME, &goal, &scene, &cfg.plan).unwrap();
    let before: Vec<String> = model.features().iter().map(|f| f.name()).collect();
    for (delta, epsilon) in [(-0.4, 0.5), (-0.4, 0.0), (0.4, 1e6)] {
        let belief = BetaBelief { epsilon, ..BetaBelief::default() };
        let traces = synth_traces(GtFeatureId::Laptop, 3, &scene, 0.0, 1).unwrap();
        let mut d = [0.0; 7];
        d[3] = delta;
        let c = Correction { index: traj.len() / 2, delta: d };
        let out = ferl_step(&model, &belief, &c, &traj, &mut StoredSource(traces), &cfg).unwrap();
        let after: Vec<String> = out.model.features().iter().map(|f| f.name()).collect();
        assert_eq!(&after[..before.len()], &before[..]);
        assert_eq!(after.len(), before.len() + out.learned_feature as usize);
        assert_eq!(out.trajectory.start(), traj.start());
        assert_eq!(out.trajectory.goal(), traj.goal());
        let total: f64 = out.belief.mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
