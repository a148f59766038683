//! Deep maximum-entropy IRL baseline with access to the known features,
//! and the demonstration synthesizer it trains on.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::JointConfig;
use crate::error::{FerlError, Result};
use crate::gt::{GtFeatureId, LAPTOP_RADIUS};
use crate::ik::planar_ik_search;
use crate::learner::encode_states;
use crate::nn::{sigmoid, softplus, Activation, AdamW, Mlp};
use crate::planner::{plan, PlanConfig, StateCost, Trajectory};
use crate::reward::RewardModel;
use crate::scene::Scene;
use crate::state::{Encoding, RawState, FULL_DIM};

pub const MEIRL_HIDDEN: [usize; 2] = [128, 128];
pub const MEIRL_ITERATIONS: usize = 50;
/// Weight of each non-coffee feature in every task's true reward.
pub const TASK_WEIGHT: f64 = 10.0;

/// Reward-learning task: coffee plus one known and one unknown feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Laptop unknown, table known.
    One,
    /// Table unknown, laptop known.
    Two,
    /// Proxemics unknown, table known.
    Three,
}

impl Task {
    pub fn from_index(i: u32) -> Result<Task> {
        match i {
            1 => Ok(Task::One),
            2 => Ok(Task::Two),
            3 => Ok(Task::Three),
            _ => Err(FerlError::invalid("task", format!("{i} not in 1..=3"))),
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Task::One => 1,
            Task::Two => 2,
            Task::Three => 3,
        }
    }

    pub fn known(self) -> GtFeatureId {
        match self {
            Task::Two => GtFeatureId::Laptop,
            _ => GtFeatureId::Table,
        }
    }

    pub fn unknown(self) -> GtFeatureId {
        match self {
            Task::One => GtFeatureId::Laptop,
            Task::Two => GtFeatureId::Table,
            Task::Three => GtFeatureId::Proxemics,
        }
    }

    /// Features the learner is given: coffee and the known one.
    pub fn known_features(self) -> [GtFeatureId; 2] {
        [GtFeatureId::Coffee, self.known()]
    }

    pub fn gt_model(self, scene: &Scene) -> Result<RewardModel> {
        RewardModel::gt(
            scene.clone(),
            &[GtFeatureId::Coffee, self.known(), self.unknown()],
            vec![0.0, TASK_WEIGHT, TASK_WEIGHT],
        )
    }
}

/// Which feature a start-goal pair is chosen to exercise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Focus {
    Unknown,
    Known,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub trajectories: Vec<Trajectory>,
    pub focus: Vec<Focus>,
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn pairs(&self) -> Vec<(JointConfig, JointConfig)> {
        self.trajectories.iter().map(|t| (*t.start(), *t.goal())).collect()
    }
}

const PREFERRED_PITCH: f64 = 0.75 * PI;
const MAX_DRAWS: usize = 500;

fn reachable(p: [f64; 3], scene: &Scene) -> Option<JointConfig> {
    if !scene.workspace.contains(&p) {
        return None;
    }
    planar_ik_search(&p, PREFERRED_PITCH, 0.0).ok()
}

/// Endpoints on opposite sides of `center`, so the pair's motion crosses it.
fn crossing(center: [f64; 2], half: f64, z: (f64, f64), scene: &Scene, rng: &mut impl Rng) -> Option<(JointConfig, JointConfig)> {
    let psi: f64 = rng.random_range(-PI..PI);
    let u = [psi.cos(), psi.sin()];
    let z0 = scene.table_height + rng.random_range(z.0..z.1);
    let z1 = scene.table_height + rng.random_range(z.0..z.1);
    let a = reachable([center[0] + half * u[0], center[1] + half * u[1], z0], scene)?;
    let b = reachable([center[0] - half * u[0], center[1] - half * u[1], z1], scene)?;
    Some((a, b))
}

/// Endpoints high above the table, away from the laptop and the human.
fn elevated(scene: &Scene, rng: &mut impl Rng) -> Option<(JointConfig, JointConfig)> {
    let point = |rng: &mut dyn rand::RngCore| {
        let az: f64 = rng.random_range(-1.4..1.4);
        let r = rng.random_range(0.3..0.6);
        let z = scene.table_height + rng.random_range(0.45..0.75);
        [r * az.cos(), r * az.sin(), z]
    };
    let p0 = point(rng);
    let p1 = point(rng);
    Some((reachable(p0, scene)?, reachable(p1, scene)?))
}

fn endpoints(feature: GtFeatureId, raised: bool, scene: &Scene, rng: &mut impl Rng) -> Option<(JointConfig, JointConfig)> {
    let low = if raised { (0.3, 0.6) } else { (0.05, 0.25) };
    match feature {
        GtFeatureId::Laptop => crossing(scene.laptop_xy, 0.4, low, scene, rng),
        GtFeatureId::Proxemics => {
            let f = scene.human_facing();
            let c = [scene.human_xy[0] + 0.3 * f[0], scene.human_xy[1] + 0.3 * f[1]];
            crossing(c, 0.4, low, scene, rng)
        }
        _ => elevated(scene, rng),
    }
}

fn focus_of(k: usize) -> Focus {
    match k % 3 {
        0 => Focus::Unknown,
        1 => Focus::Known,
        _ => Focus::Both,
    }
}

/// `m` start-goal pairs for `task`, cycling through unknown-focused,
/// known-focused, and mixed pairs.
pub fn task_pairs(task: Task, m: usize, scene: &Scene, seed: u64) -> Result<Vec<(Focus, JointConfig, JointConfig)>> {
    if m == 0 {
        return Err(FerlError::invalid("pair count", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let focus = focus_of(k);
        let pair = (0..MAX_DRAWS).find_map(|_| match focus {
            Focus::Unknown => endpoints(task.unknown(), false, scene, &mut rng),
            Focus::Known => endpoints(task.known(), false, scene, &mut rng),
            Focus::Both => {
                // The crossing feature, entered from higher up.
                let crossed = if task.unknown() == GtFeatureId::Table { task.known() } else { task.unknown() };
                endpoints(crossed, true, scene, &mut rng)
            }
        });
        let (a, b) = pair.ok_or_else(|| FerlError::Numerical("no reachable start-goal pair".into()))?;
        out.push((focus, a, b));
    }
    Ok(out)
}

/// Demonstrations planned under the task's true reward.
pub fn synth_demos(task: Task, m: usize, scene: &Scene, plan_cfg: &PlanConfig, seed: u64) -> Result<DemoSet> {
    let gt = task.gt_model(scene)?;
    let mut trajectories = Vec::with_capacity(m);
    let mut focus = Vec::with_capacity(m);
    for (f, a, b) in task_pairs(task, m, scene, seed)? {
        trajectories.push(plan(&gt, &a, &b, scene, plan_cfg).map_err(|e| e.in_stage("plan demo"))?);
        focus.push(f);
    }
    Ok(DemoSet { trajectories, focus })
}

/// Smallest EE xy distance to the laptop along the straight joint-space
/// line between the endpoints.
pub fn seed_laptop_distance(start: &JointConfig, goal: &JointConfig, t: usize, scene: &Scene) -> Result<f64> {
    let seed = Trajectory::straight(start, goal, t)?;
    Ok(seed
        .states(scene)?
        .iter()
        .map(|s| {
            let p = s.ee_position();
            (p[0] - scene.laptop_xy[0]).hypot(p[1] - scene.laptop_xy[1])
        })
        .fold(f64::INFINITY, f64::min))
}

/// Passes within the laptop radius.
pub fn crosses_laptop(start: &JointConfig, goal: &JointConfig, t: usize, scene: &Scene) -> Result<bool> {
    Ok(seed_laptop_distance(start, goal, t, scene)? < LAPTOP_RADIUS)
}

/// Learned reward `r(s) = -softplus(w0 h(s) + w . phi_known(s) + b)`
/// where `h` is an MLP over the 36-value raw state.
#[derive(Clone, Debug, PartialEq)]
pub struct MeirlNet {
    pub body: Mlp,
    pub fusion: Vec<f64>,
    pub fusion_bias: f64,
    pub known: Vec<GtFeatureId>,
    pub encoding: Encoding,
    pub scene: Scene,
}

struct Forward {
    cache: crate::nn::Cache,
    known: Vec<Vec<f64>>,
    z: Vec<f64>,
}

impl MeirlNet {
    pub fn new(known: &[GtFeatureId], hidden: &[usize], scene: &Scene, seed: u64) -> MeirlNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoding = Encoding::PosRot36;
        let mut sizes = vec![encoding.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let body = Mlp::new(&sizes, Activation::Relu, Activation::Identity, &mut rng);
        let bound = 1.0 / ((known.len() + 1) as f64).sqrt();
        let fusion = (0..=known.len()).map(|_| rng.random_range(-bound..bound)).collect();
        let fusion_bias = rng.random_range(-bound..bound);
        MeirlNet {
            body,
            fusion,
            fusion_bias,
            known: known.to_vec(),
            encoding,
            scene: scene.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count() + self.fusion.len() + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.body.params_flat();
        p.extend_from_slice(&self.fusion);
        p.push(self.fusion_bias);
        p
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(FerlError::Mismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let n = self.body.param_count();
        self.body.set_params_flat(&params[..n])?;
        let k = self.fusion.len();
        self.fusion.copy_from_slice(&params[n..n + k]);
        self.fusion_bias = params[n + k];
        Ok(())
    }

    fn forward(&self, states: &[RawState]) -> Forward {
        let x = encode_states(states, self.encoding);
        let cache = self.body.forward_cached(x.view());
        let known: Vec<Vec<f64>> = self
            .known
            .iter()
            .map(|id| states.iter().map(|s| id.eval_state(s, &self.scene)).collect())
            .collect();
        let h = cache.output().column(0).to_owned();
        let z = (0..states.len())
            .map(|i| {
                let mut z = self.fusion[0] * h[i] + self.fusion_bias;
                for (k, f) in known.iter().enumerate() {
                    z += self.fusion[k + 1] * f[i];
                }
                z
            })
            .collect();
        Forward { cache, known, z }
    }

    /// Per-state rewards, all negative.
    pub fn rewards(&self, states: &[RawState]) -> Vec<f64> {
        if states.is_empty() {
            return Vec::new();
        }
        self.forward(states).z.iter().map(|&z| -softplus(z)).collect()
    }

    /// Sum of state rewards along the trajectory.
    pub fn trajectory_reward(&self, traj: &Trajectory) -> Result<f64> {
        Ok(self.rewards(&traj.states(&self.scene)?).iter().sum())
    }

    /// Gradient of the summed reward over `states` with respect to the
    /// flattened parameters.
    pub fn reward_gradient(&self, states: &[RawState]) -> Vec<f64> {
        let n = states.len();
        let mut out = vec![0.0; self.param_count()];
        if n == 0 {
            return out;
        }
        let fwd = self.forward(states);
        let h = fwd.cache.output().column(0).to_owned();
        let dz: Vec<f64> = fwd.z.iter().map(|&z| -sigmoid(z)).collect();
        let g_out = Array2::from_shape_fn((n, 1), |(i, _)| dz[i] * self.fusion[0]);
        let (grads, _) = self.body.backward(&fwd.cache, g_out.view());
        let body = grads.flatten();
        let nb = body.len();
        out[..nb].copy_from_slice(&body);
        for i in 0..n {
            out[nb] += dz[i] * h[i];
            for (k, f) in fwd.known.iter().enumerate() {
                out[nb + 1 + k] += dz[i] * f[i];
            }
            out[nb + self.fusion.len()] += dz[i];
        }
        out
    }

    pub fn trajectory_gradient(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        Ok(self.reward_gradient(&traj.states(&self.scene)?))
    }
}

impl StateCost for MeirlNet {
    fn costs(&self, states: &[RawState]) -> Result<Vec<f64>> {
        Ok(self.rewards(states).iter().map(|r| -r).collect())
    }

    fn costs_and_gradients(&self, states: &[RawState]) -> Result<(Vec<f64>, Vec<[f64; FULL_DIM]>)> {
        let n = states.len();
        if n == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let fwd = self.forward(states);
        let ones = Array2::from_elem((n, 1), 1.0);
        let (_, gx) = self.body.backward(&fwd.cache, ones.view());
        let mut costs = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            costs.push(softplus(fwd.z[i]));
            let s = sigmoid(fwd.z[i]);
            let mut g = [0.0; FULL_DIM];
            for (c, &idx) in self.encoding.indices().iter().enumerate() {
                g[idx] = s * self.fusion[0] * gx[(i, c)];
            }
            for (k, id) in self.known.iter().enumerate() {
                let w = s * self.fusion[k + 1];
                if w != 0.0 {
                    for (a, b) in g.iter_mut().zip(id.gradient_state(&states[i], &self.scene).iter()) {
                        *a += w * b;
                    }
                }
            }
            grads.push(g);
        }
        Ok((costs, grads))
    }
}

/// Mean reward gradient over the demonstrations minus the mean over the
/// samples: the ascent direction of the max-ent log-likelihood.
pub fn meirl_gradient(net: &MeirlNet, demos: &[Trajectory], samples: &[Trajectory]) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(FerlError::Empty("demonstration set"));
    }
    if samples.is_empty() {
        return Err(FerlError::Empty("sample set"));
    }
    let mut out = vec![0.0; net.param_count()];
    for (set, sign) in [(demos, 1.0), (samples, -1.0)] {
        let scale = sign / set.len() as f64;
        for t in set {
            for (o, g) in out.iter_mut().zip(net.trajectory_gradient(t)?) {
                *o += scale * g;
            }
        }
    }
    Ok(out)
}

/// The objective whose gradient [`meirl_gradient`] returns with samples
/// held fixed.
pub fn meirl_objective(net: &MeirlNet, demos: &[Trajectory], samples: &[Trajectory]) -> Result<f64> {
    let mean = |set: &[Trajectory]| -> Result<f64> {
        let mut total = 0.0;
        for t in set {
            total += net.trajectory_reward(t)?;
        }
        Ok(total / set.len() as f64)
    };
    Ok(mean(demos)? - mean(samples)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeirlConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub plan: PlanConfig,
    pub seed: u64,
}

impl Default for MeirlConfig {
    fn default() -> Self {
        MeirlConfig {
            iterations: MEIRL_ITERATIONS,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            hidden: MEIRL_HIDDEN.to_vec(),
            plan: PlanConfig::default(),
            seed: 0,
        }
    }
}

/// Each iteration replans one sample per demonstrated start-goal pair
/// under the current reward, then takes one Adam step per pair in a
/// seeded random order.
pub fn train_meirl(demos: &DemoSet, known: &[GtFeatureId], scene: &Scene, cfg: &MeirlConfig) -> Result<MeirlNet> {
    if demos.is_empty() {
        return Err(FerlError::Empty("demonstration set"));
    }
    let mut net = MeirlNet::new(known, &cfg.hidden, scene, cfg.seed);
    let mut adam = AdamW::new(net.param_count(), cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let pairs = demos.pairs();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..cfg.iterations {
        let samples: Vec<Trajectory> = pairs
            .iter()
            .map(|(a, b)| plan(&net, a, b, scene, &cfg.plan))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("replan samples"))?;
        order.shuffle(&mut rng);
        for &i in &order {
            let g = meirl_gradient(&net, &demos.trajectories[i..=i], &samples[i..=i])?;
            let descent: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut params = net.params_flat();
            adam.step(&mut params, &descent);
            net.set_params_flat(&params)?;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(offset: f64) -> Trajectory {
        Trajectory::straight(
            &JointConfig([-0.9 + offset, 0.6, 0.0, 1.2, 0.0, 0.8, 0.0]),
            &JointConfig([0.9, 0.6 + offset, 0.0, 1.2, 0.5, 0.8, 0.3]),
            9,
        )
        .unwrap()
    }

    #[test]
    fn gradient_cancels_and_is_antisymmetric() {
        let scene = Scene::default();
        let net = MeirlNet::new(&[GtFeatureId::Coffee, GtFeatureId::Table], &[8, 8], &scene, 1);
        let a = [traj(0.0)];
        let b = [traj(0.3)];
        assert!(meirl_gradient(&net, &a, &a).unwrap().iter().all(|&g| g == 0.0));
        let ab = meirl_gradient(&net, &a, &b).unwrap();
        let ba = meirl_gradient(&net, &b, &a).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            assert!((x + y).abs() < 1e-12);
        }
        assert!(meirl_gradient(&net, &[], &b).is_err());
    }

    #[test]
    fn rewards_are_negative() {
        let scene = Scene::default();
        let net = MeirlNet::new(&[GtFeatureId::Table], &[16, 16], &scene, 2);
        let states = traj(0.0).states(&scene).unwrap();
        assert!(net.rewards(&states).iter().all(|&r| r < 0.0));
    }

    #[test]
    fn task_pairs_mix() {
        let scene = Scene::default();
        let pairs = task_pairs(Task::One, 6, &scene, 4).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.0 == Focus::Known).count(), 2);
        assert_eq!(pairs, task_pairs(Task::One, 6, &scene, 4).unwrap());
    }

    #[test]
    fn parameter_gradient_matches_differences() {
        let scene = Scene::default();
        let mut net = MeirlNet::new(&[GtFeatureId::Coffee, GtFeatureId::Table], &[6, 5], &scene, 3);
        let states = traj(0.1).states(&scene).unwrap();
        let g = net.reward_gradient(&states);
        let p0 = net.params_flat();
        let total = |net: &MeirlNet| net.rewards(&states).iter().sum::<f64>();
        for k in (0..p0.len()).step_by(7) {
            let mut p = p0.clone();
            p[k] += 1e-6;
            net.set_params_flat(&p).unwrap();
            let up = total(&net);
            p[k] -= 2e-6;
            net.set_params_flat(&p).unwrap();
            let down = total(&net);
            let fd = (up - down) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn state_gradient_matches_differences() {
        let scene = Scene::default();
        let net = MeirlNet::new(&[GtFeatureId::Coffee, GtFeatureId::Table], &[6, 5], &scene, 5);
        let states = traj(0.2).states(&scene).unwrap();
        let (c, g) = net.costs_and_gradients(&states[3..4]).unwrap();
        assert!((c[0] - net.costs(&states[3..4]).unwrap()[0]).abs() < 1e-15);
        for &idx in Encoding::PosRot36.indices() {
            let mut v = *states[3].values();
            v[idx] += 1e-6;
            let up = net.costs(&[RawState::from_values(v)]).unwrap()[0];
            v[idx] -= 2e-6;
            let down = net.costs(&[RawState::from_values(v)]).unwrap()[0];
            let fd = (up - down) / 2e-6;
            assert!((fd - g[0][idx]).abs() < 1e-5 * (1.0 + fd.abs()), "index {idx}: {fd} vs {}", g[0][idx]);
        }
    }
}
