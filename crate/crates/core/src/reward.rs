//! Linear reward over known and learned features, the online update from
//! physical corrections, and confidence estimation over the rationality
//! coefficient.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arm::DOF;
use crate::error::{FerlError, Result};
use crate::gt::GtFeatureId;
use crate::learner::{train_feature, train_feature_auto, FeatureNet, TrainConfig};
use crate::planner::{deform, plan, Correction, PlanConfig, StateCost, Trajectory};
use crate::scene::Scene;
use crate::state::{RawState, FULL_DIM};
use crate::teacher::synth_traces;
use crate::traces::FeatureTrace;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const BETA_GRID_POINTS: usize = 16;
pub const BETA_MIN: f64 = 0.01;
pub const BETA_MAX: f64 = 100.0;
pub const CANDIDATES: usize = 32;
pub const DEFAULT_TRACES: usize = 10;

#[derive(Clone, Debug)]
pub enum RewardFeature {
    Gt(GtFeatureId),
    Learned(Arc<FeatureNet>),
}

impl RewardFeature {
    pub fn name(&self) -> String {
        match self {
            RewardFeature::Gt(id) => id.name().to_string(),
            RewardFeature::Learned(net) => format!("learned-{}", net.encoding.tag()),
        }
    }

    pub fn values(&self, states: &[RawState], scene: &Scene) -> Vec<f64> {
        match self {
            RewardFeature::Gt(id) => states.iter().map(|s| id.eval_state(s, scene)).collect(),
            RewardFeature::Learned(net) => net.values(states),
        }
    }

    pub fn values_and_gradients(&self, states: &[RawState], scene: &Scene) -> (Vec<f64>, Vec<[f64; FULL_DIM]>) {
        match self {
            RewardFeature::Gt(id) => (
                states.iter().map(|s| id.eval_state(s, scene)).collect(),
                states.iter().map(|s| id.gradient_state(s, scene)).collect(),
            ),
            RewardFeature::Learned(net) => net.values_and_gradients(states),
        }
    }
}

/// `r(s) = -theta . phi(s)`: every feature is a cost.
#[derive(Clone, Debug)]
pub struct RewardModel {
    pub scene: Scene,
    features: Vec<RewardFeature>,
    theta: Vec<f64>,
}

impl RewardModel {
    pub fn new(scene: Scene, features: Vec<RewardFeature>, theta: Vec<f64>) -> Result<RewardModel> {
        if features.len() != theta.len() {
            return Err(FerlError::Mismatch {
                expected: features.len(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(FerlError::invalid("theta", "non-finite weight"));
        }
        Ok(RewardModel { scene, features, theta })
    }

    pub fn gt(scene: Scene, ids: &[GtFeatureId], theta: Vec<f64>) -> Result<RewardModel> {
        RewardModel::new(scene, ids.iter().map(|&id| RewardFeature::Gt(id)).collect(), theta)
    }

    pub fn features(&self) -> &[RewardFeature] {
        &self.features
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.features.len() {
            return Err(FerlError::Mismatch {
                expected: self.features.len(),
                got: theta.len(),
            });
        }
        self.theta = theta;
        Ok(())
    }

    /// Appends a feature with weight zero.
    pub fn push_feature(&mut self, feature: RewardFeature) {
        self.features.push(feature);
        self.theta.push(0.0);
    }

    /// Per-state feature values, one row per feature.
    pub fn feature_values(&self, states: &[RawState]) -> Vec<Vec<f64>> {
        self.features.iter().map(|f| f.values(states, &self.scene)).collect()
    }

    /// Cumulative feature values over the trajectory's waypoints.
    pub fn feature_counts(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let states = traj.states(&self.scene)?;
        Ok(self.feature_values(&states).iter().map(|v| v.iter().sum()).collect())
    }

    pub fn reward_of(&self, traj: &Trajectory) -> Result<f64> {
        let phi = self.feature_counts(traj)?;
        Ok(-dot(&self.theta, &phi))
    }

    pub fn state_rewards(&self, states: &[RawState]) -> Vec<f64> {
        let mut out = vec![0.0; states.len()];
        for (f, &w) in self.feature_values(states).iter().zip(&self.theta) {
            for (o, v) in out.iter_mut().zip(f) {
                *o -= w * v;
            }
        }
        out
    }
}

impl StateCost for RewardModel {
    fn costs(&self, states: &[RawState]) -> Result<Vec<f64>> {
        Ok(self.state_rewards(states).iter().map(|r| -r).collect())
    }

    fn costs_and_gradients(&self, states: &[RawState]) -> Result<(Vec<f64>, Vec<[f64; FULL_DIM]>)> {
        let mut costs = vec![0.0; states.len()];
        let mut grads = vec![[0.0; FULL_DIM]; states.len()];
        for (f, &w) in self.features.iter().zip(&self.theta) {
            if w == 0.0 {
                continue;
            }
            let (v, g) = f.values_and_gradients(states, &self.scene);
            for i in 0..states.len() {
                costs[i] += w * v[i];
                for (a, b) in grads[i].iter_mut().zip(g[i].iter()) {
                    *a += w * b;
                }
            }
        }
        Ok((costs, grads))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the feature whose per-waypoint change is largest, or `None`
/// when nothing changed. Ties go to the lowest index.
pub fn changed_feature(delta: &[f64], waypoints: usize) -> Option<usize> {
    let scale = 1.0 / waypoints.max(1) as f64;
    let mut best: Option<(usize, f64)> = None;
    for (k, d) in delta.iter().enumerate() {
        let m = (d * scale).abs();
        if m > 0.0 && best.is_none_or(|(_, b)| m > b) {
            best = Some((k, m));
        }
    }
    best.map(|(k, _)| k)
}

/// Gradient step on the single most-changed feature weight.
pub fn update_theta_delta(theta: &[f64], delta: &[f64], alpha: f64, waypoints: usize) -> Result<Vec<f64>> {
    if theta.len() != delta.len() {
        return Err(FerlError::Mismatch {
            expected: theta.len(),
            got: delta.len(),
        });
    }
    let mut out = theta.to_vec();
    if let Some(k) = changed_feature(delta, waypoints) {
        out[k] -= alpha * delta[k];
    }
    Ok(out)
}

pub fn update_theta(model: &RewardModel, traj: &Trajectory, corrected: &Trajectory, alpha: f64) -> Result<RewardModel> {
    if traj.len() != corrected.len() {
        return Err(FerlError::Mismatch {
            expected: traj.len(),
            got: corrected.len(),
        });
    }
    let before = model.feature_counts(traj)?;
    let after = model.feature_counts(corrected)?;
    let delta: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
    let mut out = model.clone();
    out.theta = update_theta_delta(&model.theta, &delta, alpha, traj.len())?;
    Ok(out)
}

/// Discrete belief over the rationality coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaBelief {
    pub grid: Vec<f64>,
    pub mass: Vec<f64>,
    pub epsilon: f64,
}

impl Default for BetaBelief {
    fn default() -> Self {
        BetaBelief::log_grid(BETA_MIN, BETA_MAX, BETA_GRID_POINTS, DEFAULT_EPSILON).expect("valid default grid")
    }
}

impl BetaBelief {
    /// Uniform prior over `grid`.
    pub fn uniform(grid: Vec<f64>, epsilon: f64) -> Result<BetaBelief> {
        if grid.is_empty() {
            return Err(FerlError::Empty("beta grid"));
        }
        if grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(FerlError::invalid("beta grid", "values must be finite and >= 0"));
        }
        let n = grid.len();
        Ok(BetaBelief {
            grid,
            mass: vec![1.0 / n as f64; n],
            epsilon,
        })
    }

    pub fn log_grid(lo: f64, hi: f64, points: usize, epsilon: f64) -> Result<BetaBelief> {
        if !(lo > 0.0 && hi > lo) || points < 2 {
            return Err(FerlError::invalid("beta grid", format!("[{lo}, {hi}] with {points} points")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let grid = (0..points)
            .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
            .collect();
        BetaBelief::uniform(grid, epsilon)
    }

    /// Posterior mean of beta.
    pub fn mean(&self) -> f64 {
        dot(&self.grid, &self.mass)
    }

    pub fn confident(&self) -> bool {
        self.mean() >= self.epsilon
    }
}

/// Boltzmann probability of the reward at index `chosen` among `rewards`.
pub fn boltzmann(rewards: &[f64], chosen: usize, beta: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(FerlError::Empty("candidate set"));
    }
    if chosen >= rewards.len() {
        return Err(FerlError::invalid("candidate index", format!("{chosen} >= {}", rewards.len())));
    }
    let scaled: Vec<f64> = rewards.iter().map(|r| beta * r).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok((scaled[chosen] - log_z).exp())
}

/// Finite stand-in for the trajectory space. The corrected trajectory is
/// always the first member.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub trajectories: Vec<Trajectory>,
}

impl CandidateSet {
    pub fn new(corrected: Trajectory, others: Vec<Trajectory>) -> CandidateSet {
        let mut trajectories = vec![corrected];
        trajectories.extend(others);
        CandidateSet { trajectories }
    }

    /// The corrected trajectory, the robot's own plan, and random
    /// deformations of the plan no larger than the correction, `count`
    /// trajectories in total. Deformations that push the EE into the table
    /// are redrawn.
    pub fn around(
        traj: &Trajectory,
        corrected: &Trajectory,
        magnitude: f64,
        count: usize,
        scene: &Scene,
        seed: u64,
    ) -> Result<CandidateSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut others = vec![traj.clone()];
        let t = traj.len();
        let mut attempts = 0;
        while others.len() + 1 < count {
            attempts += 1;
            if attempts > 100 * count {
                return Err(FerlError::Numerical("no feasible candidate deformations".into()));
            }
            let index = if t > 2 { rng.random_range(1..t - 1) } else { 0 };
            let mut delta = [0.0; DOF];
            for d in delta.iter_mut() {
                *d = rng.sample(StandardNormal);
            }
            let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let size = magnitude * rng.random::<f64>();
            delta.iter_mut().for_each(|d| *d *= size / norm);
            let candidate = deform(traj, &Correction { index, delta })?;
            if above_table(&candidate, scene)? {
                others.push(candidate);
            }
        }
        Ok(CandidateSet::new(corrected.clone(), others))
    }

    pub fn rewards(&self, model: &RewardModel) -> Result<Vec<f64>> {
        self.trajectories.iter().map(|t| model.reward_of(t)).collect()
    }
}

/// Slack below the table surface tolerated for planned trajectories.
const TABLE_SLACK: f64 = 0.01;

fn above_table(traj: &Trajectory, scene: &Scene) -> Result<bool> {
    Ok(traj
        .states(scene)?
        .iter()
        .all(|s| s.ee_position()[2] >= scene.table_height - TABLE_SLACK))
}

/// Likelihood of the set's corrected trajectory under rationality `beta`.
pub fn human_likelihood(model: &RewardModel, beta: f64, candidates: &CandidateSet) -> Result<f64> {
    boltzmann(&candidates.rewards(model)?, 0, beta)
}

pub fn update_belief(belief: &BetaBelief, model: &RewardModel, candidates: &CandidateSet) -> Result<BetaBelief> {
    let rewards = candidates.rewards(model)?;
    update_belief_rewards(belief, &rewards)
}

/// Belief update from candidate rewards, the corrected one first.
pub fn update_belief_rewards(belief: &BetaBelief, rewards: &[f64]) -> Result<BetaBelief> {
    let mut mass = Vec::with_capacity(belief.grid.len());
    for (&b, &m) in belief.grid.iter().zip(&belief.mass) {
        mass.push(m * boltzmann(rewards, 0, b)?);
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(FerlError::Numerical("belief mass vanished".into()));
    }
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(BetaBelief {
        grid: belief.grid.clone(),
        mass,
        epsilon: belief.epsilon,
    })
}

/// Where feature traces come from when the robot asks for them.
pub trait TraceSource {
    fn traces(&mut self, n: usize) -> Result<Vec<FeatureTrace>>;
}

/// Synthetic teacher for one GT feature.
pub struct TeacherSource {
    pub id: GtFeatureId,
    pub scene: Scene,
    pub noise_p: f64,
    pub seed: u64,
}

impl TraceSource for TeacherSource {
    fn traces(&mut self, n: usize) -> Result<Vec<FeatureTrace>> {
        let out = synth_traces(self.id, n, &self.scene, self.noise_p, self.seed)?;
        self.seed = self.seed.wrapping_add(1);
        Ok(out)
    }
}

/// Traces collected elsewhere, handed out once.
pub struct StoredSource(pub Vec<FeatureTrace>);

impl TraceSource for StoredSource {
    fn traces(&mut self, n: usize) -> Result<Vec<FeatureTrace>> {
        let take = n.min(self.0.len());
        Ok(self.0.drain(..take).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FerlConfig {
    pub alpha: f64,
    pub candidates: usize,
    pub traces: usize,
    /// Pick the input subspace with the held-out heuristic before training.
    pub auto_subspace: bool,
    pub train: TrainConfig,
    pub plan: PlanConfig,
    pub seed: u64,
}

impl Default for FerlConfig {
    fn default() -> Self {
        FerlConfig {
            alpha: DEFAULT_ALPHA,
            candidates: CANDIDATES,
            traces: DEFAULT_TRACES,
            auto_subspace: true,
            train: TrainConfig::default(),
            plan: PlanConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FerlOutcome {
    pub model: RewardModel,
    pub belief: BetaBelief,
    pub corrected: Trajectory,
    pub beta_hat: f64,
    pub learned_feature: bool,
    pub trajectory: Trajectory,
}

/// One round of the interaction loop: deform the plan with the correction,
/// update the rationality belief, learn a new feature when confidence is
/// low, update the weights, and replan.
pub fn ferl_step(
    model: &RewardModel,
    belief: &BetaBelief,
    correction: &Correction,
    traj: &Trajectory,
    source: &mut dyn TraceSource,
    cfg: &FerlConfig,
) -> Result<FerlOutcome> {
    let corrected = deform(traj, correction)?;
    let candidates = CandidateSet::around(traj, &corrected, correction.magnitude(), cfg.candidates, &model.scene, cfg.seed)?;
    let belief = update_belief(belief, model, &candidates)?;
    let beta_hat = belief.mean();
    let mut next = model.clone();
    let learned_feature = beta_hat < belief.epsilon;
    if learned_feature {
        let traces = source.traces(cfg.traces)?;
        if traces.is_empty() {
            return Err(FerlError::Empty("feature traces").in_stage("query feature traces"));
        }
        let net = if cfg.auto_subspace {
            train_feature_auto(&traces, &cfg.train)
        } else {
            train_feature(&traces, &cfg.train)
        }
        .map_err(|e| e.in_stage("train feature"))?;
        next.push_feature(RewardFeature::Learned(Arc::new(net)));
    }
    let next = update_theta(&next, traj, &corrected, cfg.alpha)?;
    let trajectory = plan(&next, traj.start(), traj.goal(), &next.scene, &cfg.plan)
        .map_err(|e| e.in_stage("replan"))?;
    Ok(FerlOutcome {
        model: next,
        belief,
        corrected,
        beta_hat,
        learned_feature,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::JointConfig;

    fn model() -> RewardModel {
        RewardModel::gt(
            Scene::default(),
            &[GtFeatureId::Coffee, GtFeatureId::Table, GtFeatureId::Laptop],
            vec![0.0, 10.0, 10.0],
        )
        .unwrap()
    }

    fn traj() -> Trajectory {
        Trajectory::straight(
            &JointConfig([-0.9, 0.6, 0.0, 1.2, 0.0, 0.8, 0.0]),
            &JointConfig([0.9, 0.6, 0.0, 1.2, 0.5, 0.8, 0.3]),
            21,
        )
        .unwrap()
    }

    #[test]
    fn reward_is_linear_and_ignores_zero_weights() {
        let mut m = model();
        let t = traj();
        let r = m.reward_of(&t).unwrap();
        assert!(r < 0.0);
        m.set_theta(vec![5.0, 10.0, 10.0]).unwrap();
        let phi = m.feature_counts(&t).unwrap();
        assert!((m.reward_of(&t).unwrap() - (r - 5.0 * phi[0])).abs() < 1e-9);
        m.set_theta(vec![0.0, 20.0, 20.0]).unwrap();
        assert!((m.reward_of(&t).unwrap() - 2.0 * r).abs() < 1e-9);
        m.set_theta(vec![0.0; 3]).unwrap();
        assert_eq!(m.reward_of(&t).unwrap(), 0.0);
        assert!(m.set_theta(vec![0.0; 2]).is_err());
    }

    #[test]
    fn one_feature_rule() {
        let th = update_theta_delta(&[0.0, 10.0, 10.0], &[0.0, 1.0, 0.0], 0.1, 21).unwrap();
        assert_eq!(th, vec![0.0, 9.9, 10.0]);
        let th = update_theta_delta(&[0.0, 10.0, 10.0], &[0.2, 0.5, -0.1], 0.1, 21).unwrap();
        assert_eq!((th[0], th[2]), (0.0, 10.0));
        assert_ne!(th[1], 10.0);
        let same = update_theta(&model(), &traj(), &traj(), 0.1).unwrap();
        assert_eq!(same.theta(), model().theta());
    }

    #[test]
    fn likelihood_limits() {
        let flat = [-3.0; 5];
        assert!((boltzmann(&flat, 0, 7.0).unwrap() - 0.2).abs() < 1e-15);
        let r = [-1.0, -4.0, -2.0];
        assert!((boltzmann(&r, 0, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(boltzmann(&r, 0, 1e4).unwrap() > 1.0 - 1e-12);
        assert!(boltzmann(&[], 0, 1.0).is_err());
    }

    #[test]
    fn belief_update_direction() {
        let b = BetaBelief::default();
        assert!((b.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let prior = b.mean();
        let flat = update_belief_rewards(&b, &[-2.0; 4]).unwrap();
        for (x, y) in flat.mass.iter().zip(&b.mass) {
            assert!((x - y).abs() < 1e-15);
        }
        let best = update_belief_rewards(&b, &[-1.0, -2.0, -3.0]).unwrap();
        assert!(best.mean() > prior);
        let worst = update_belief_rewards(&b, &[-3.0, -2.0, -1.0]).unwrap();
        assert!(worst.mean() < prior);
        assert!((worst.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_set_contains_corrected() {
        let t = traj();
        let c = deform(&t, &Correction { index: 10, delta: [0.0, -0.2, 0.0, 0.0, 0.0, 0.0, 0.0] }).unwrap();
        let set = CandidateSet::around(&t, &c, 0.2, CANDIDATES, &Scene::default(), 3).unwrap();
        assert_eq!(set.trajectories.len(), CANDIDATES);
        assert_eq!(set.trajectories[0], c);
        assert_eq!(set, CandidateSet::around(&t, &c, 0.2, CANDIDATES, &Scene::default(), 3).unwrap());
    }
}
