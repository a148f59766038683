//! Metrics for learned features and rewards.

use crate::arm::{sample_reachable, JointConfig};
use crate::error::{FerlError, Result};
use crate::gt::GtFeatureId;
use std::sync::Arc;

use crate::learner::{train_feature, train_feature_auto, FeatureNet, TrainConfig};
use crate::meirl::{synth_demos, task_pairs, train_meirl, MeirlConfig, MeirlNet, Task, TASK_WEIGHT};
use crate::planner::{plan, PlanConfig, StateCost};
use crate::reward::{RewardFeature, RewardModel};
use crate::scene::Scene;
use crate::state::{raw_state, Encoding, RawState};
use crate::teacher::{feature_scene, synth_traces};

/// Test states used by every feature metric.
pub const TEST_STATES: usize = 10_000;
/// Untrained nets averaged for the random baseline.
pub const RANDOM_BASELINES: usize = 10;

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(FerlError::Empty("test set"));
    }
    if a.len() != b.len() {
        return Err(FerlError::Mismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Error of `learned` relative to the mean error of the random baselines,
/// all measured against `gt` on the same states.
pub fn mse_norm(learned: &[f64], gt: &[f64], random: &[Vec<f64>]) -> Result<f64> {
    if random.is_empty() {
        return Err(FerlError::Empty("random baselines"));
    }
    let num = mse(learned, gt)?;
    let mut den = 0.0;
    for r in random {
        den += mse(r, gt)?;
    }
    den /= random.len() as f64;
    if !(den > 0.0) {
        return Err(FerlError::Numerical("random baseline error is zero".into()));
    }
    Ok(num / den)
}

/// Reachable test states for a feature, with the object slots that
/// feature's traces use.
pub fn feature_test_set(id: GtFeatureId, scene: &Scene, n: usize, seed: u64) -> Result<Vec<RawState>> {
    let state_scene = feature_scene(id, scene);
    sample_reachable(n, scene, seed)?
        .iter()
        .map(|q| raw_state(q, &state_scene))
        .collect()
}

pub fn gt_values(id: GtFeatureId, states: &[RawState], scene: &Scene) -> Vec<f64> {
    states.iter().map(|s| id.eval_state(s, scene)).collect()
}

/// Untrained nets normalized over `states`, the reference for
/// [`mse_norm`].
pub fn random_baselines(encoding: Encoding, hidden: &[usize], states: &[RawState], count: usize, seed: u64) -> Vec<FeatureNet> {
    (0..count as u64)
        .map(|k| {
            let mut net = FeatureNet::new(encoding, hidden, seed.wrapping_mul(1000).wrapping_add(k));
            let x = net.encode(states);
            net.refresh_norm(x.view());
            net
        })
        .collect()
}

/// Feature-learning benchmark on one test set.
pub struct FeatureBench {
    pub id: GtFeatureId,
    pub states: Vec<RawState>,
    pub gt: Vec<f64>,
    pub random: Vec<Vec<f64>>,
}

impl FeatureBench {
    pub fn new(id: GtFeatureId, scene: &Scene, encoding: Encoding, hidden: &[usize], n: usize, seed: u64) -> Result<FeatureBench> {
        let states = feature_test_set(id, scene, n, seed)?;
        let gt = gt_values(id, &states, scene);
        let random = random_baselines(encoding, hidden, &states, RANDOM_BASELINES, seed)
            .iter()
            .map(|net| net.values(&states))
            .collect();
        Ok(FeatureBench { id, states, gt, random })
    }

    pub fn mse(&self, net: &FeatureNet) -> Result<f64> {
        mse(&net.values(&self.states), &self.gt)
    }

    pub fn mse_norm(&self, net: &FeatureNet) -> Result<f64> {
        mse_norm(&net.values(&self.states), &self.gt, &self.random)
    }
}

/// `(x, y, z, value)` at the EE of `n` reachable states, in sample order.
pub fn feature_field(net: &FeatureNet, scene: &Scene, n: usize, seed: u64) -> Result<Vec<[f64; 4]>> {
    let states = reward_test_set(scene, n, seed)?;
    let values = net.values(&states);
    Ok(states
        .iter()
        .zip(values)
        .map(|(s, v)| {
            let p = s.ee_position();
            [p[0], p[1], p[2], v]
        })
        .collect())
}

/// Rescales to [0, 1]; a constant input maps to all zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|v| if range > 0.0 { (v - lo) / range } else { 0.0 })
        .collect()
}

/// MSE between rewards after min-max normalizing each over the test set,
/// so rewards on different scales compare.
pub fn reward_mse(learned: &[f64], gt: &[f64]) -> Result<f64> {
    mse(&min_max(learned), &min_max(gt))
}

/// Reachable test states in the scene as given.
pub fn reward_test_set(scene: &Scene, n: usize, seed: u64) -> Result<Vec<RawState>> {
    sample_reachable(n, scene, seed)?.iter().map(|q| raw_state(q, scene)).collect()
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorAccuracy {
    pub ratios: Vec<f64>,
    pub mean: f64,
}

/// For each pair: GT reward of the trajectory planned under `model`
/// divided by the GT reward of the trajectory planned under `gt_model`.
/// Rewards are negative, so 1 is best and larger is worse.
pub fn behavior_accuracy(
    model: &dyn StateCost,
    gt_model: &RewardModel,
    pairs: &[(JointConfig, JointConfig)],
    plan_cfg: &PlanConfig,
) -> Result<BehaviorAccuracy> {
    if pairs.is_empty() {
        return Err(FerlError::Empty("start-goal pairs"));
    }
    let scene = &gt_model.scene;
    let mut ratios = Vec::with_capacity(pairs.len());
    for (k, (a, b)) in pairs.iter().enumerate() {
        let tau = plan(model, a, b, scene, plan_cfg).map_err(|e| e.in_stage(format!("plan pair {k}")))?;
        let best = plan(gt_model, a, b, scene, plan_cfg).map_err(|e| e.in_stage(format!("gt plan pair {k}")))?;
        let r_best = gt_model.reward_of(&best)?;
        if r_best == 0.0 {
            return Err(FerlError::Numerical(format!("pair {k} has zero optimal reward")));
        }
        ratios.push(gt_model.reward_of(&tau)? / r_best);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(BehaviorAccuracy { ratios, mean })
}

/// Settings for one FERL-vs-ME-IRL comparison seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonConfig {
    pub task: Task,
    pub traces: usize,
    pub demos: usize,
    pub test_states: usize,
    pub behavior_pairs: usize,
    pub auto_subspace: bool,
    pub train: TrainConfig,
    pub meirl: MeirlConfig,
    pub plan: PlanConfig,
    /// Planner used for behavior accuracy, for both models and GT.
    pub behavior_plan: PlanConfig,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            task: Task::One,
            traces: 10,
            demos: 10,
            test_states: TEST_STATES,
            behavior_pairs: 20,
            auto_subspace: false,
            train: TrainConfig {
                encoding: Encoding::Pos27,
                ..TrainConfig::default()
            },
            meirl: MeirlConfig::default(),
            plan: PlanConfig::default(),
            behavior_plan: PlanConfig {
                restarts: BEHAVIOR_RESTARTS,
                ..PlanConfig::default()
            },
        }
    }
}

pub const BEHAVIOR_RESTARTS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub ferl_mse: f64,
    pub meirl_mse: f64,
    pub ferl_ratios: Vec<f64>,
    pub meirl_ratios: Vec<f64>,
}

/// The task reward with its unknown feature replaced by one learned from
/// `n` noiseless traces, weighted as the true one.
pub fn ferl_reward(task: Task, scene: &Scene, n: usize, auto_subspace: bool, train: &TrainConfig, seed: u64) -> Result<RewardModel> {
    let traces = synth_traces(task.unknown(), n, scene, 0.0, seed).map_err(|e| e.in_stage("synthesize traces"))?;
    let cfg = TrainConfig { seed, ..train.clone() };
    let net = if auto_subspace {
        train_feature_auto(&traces, &cfg)
    } else {
        train_feature(&traces, &cfg)
    }
    .map_err(|e| e.in_stage("train feature"))?;
    let [coffee, known] = task.known_features();
    RewardModel::new(
        scene.clone(),
        vec![
            RewardFeature::Gt(coffee),
            RewardFeature::Gt(known),
            RewardFeature::Learned(Arc::new(net)),
        ],
        vec![0.0, TASK_WEIGHT, TASK_WEIGHT],
    )
}

/// ME-IRL reward trained on `m` synthesized demonstrations.
pub fn meirl_reward(task: Task, scene: &Scene, m: usize, cfg: &MeirlConfig, seed: u64) -> Result<MeirlNet> {
    let demos = synth_demos(task, m, scene, &cfg.plan, seed).map_err(|e| e.in_stage("synthesize demos"))?;
    let cfg = MeirlConfig { seed, ..cfg.clone() };
    train_meirl(&demos, &task.known_features(), scene, &cfg).map_err(|e| e.in_stage("train meirl"))
}

/// Start-goal pairs for behavior accuracy, disjoint in seed from the demos.
pub fn behavior_pairs(task: Task, scene: &Scene, count: usize, seed: u64) -> Result<Vec<(JointConfig, JointConfig)>> {
    Ok(task_pairs(task, count, scene, seed ^ 0xbe4a_u64.rotate_left(32))?
        .into_iter()
        .map(|(_, a, b)| (a, b))
        .collect())
}

pub fn compare_seed(cfg: &ComparisonConfig, scene: &Scene, seed: u64) -> Result<SeedComparison> {
    let gt = cfg.task.gt_model(scene)?;
    let ferl = ferl_reward(cfg.task, scene, cfg.traces, cfg.auto_subspace, &cfg.train, seed)?;
    let meirl = meirl_reward(cfg.task, scene, cfg.demos, &cfg.meirl, seed)?;
    let states = reward_test_set(scene, cfg.test_states, seed)?;
    let gt_r = gt.state_rewards(&states);
    let ferl_mse = reward_mse(&ferl.state_rewards(&states), &gt_r)?;
    let meirl_mse = reward_mse(&meirl.rewards(&states), &gt_r)?;
    let (ferl_ratios, meirl_ratios) = if cfg.behavior_pairs > 0 {
        let pairs = behavior_pairs(cfg.task, scene, cfg.behavior_pairs, seed)?;
        (
            behavior_accuracy(&ferl, &gt, &pairs, &cfg.behavior_plan).map_err(|e| e.in_stage("ferl behavior"))?.ratios,
            behavior_accuracy(&meirl, &gt, &pairs, &cfg.behavior_plan).map_err(|e| e.in_stage("meirl behavior"))?.ratios,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(SeedComparison {
        seed,
        ferl_mse,
        meirl_mse,
        ferl_ratios,
        meirl_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let gt = vec![0.1, 0.5, 0.9, 0.0];
        let r = vec![vec![0.9, 0.2, 0.1, 0.4]];
        assert_eq!(mse_norm(&gt, &gt, &r).unwrap(), 0.0);
        assert_eq!(mse_norm(&r[0], &gt, &r).unwrap(), 1.0);
        let shifted: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
        assert!((mse(&shifted, &gt).unwrap() - 0.01).abs() < 1e-15);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn reward_mse_ignores_scale() {
        let gt = vec![-1.0, -3.0, -2.0];
        let scaled: Vec<f64> = gt.iter().map(|v| 7.0 * v - 4.0).collect();
        assert!(reward_mse(&scaled, &gt).unwrap() < 1e-15);
        assert_eq!(min_max(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn summary_statistics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
