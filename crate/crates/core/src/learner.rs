//! Learned features: the preference loss over tuple datasets, training with
//! output normalization, and held-out subspace selection.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FerlError, Result};
use crate::nn::{sigmoid, softplus, Activation, AdamW, Gradients, Mlp};
use crate::state::{Encoding, RawState, FULL_DIM};
use crate::traces::{build_dataset, FeatureTrace, TupleDataset};

/// Below this output range the normalization is the identity.
pub const MIN_NORM_RANGE: f64 = 1e-8;

/// Probability that `v` is preferred over `v_prime`.
pub fn pref_prob(v: f64, v_prime: f64) -> f64 {
    sigmoid(v - v_prime)
}

/// Weighted cross-entropy of one tuple as a function of the logit gap
/// `d = phi(s) - phi(s')`.
pub fn tuple_loss(d: f64, y: f64, weight: f64) -> f64 {
    weight * (y * softplus(-d) + (1.0 - y) * softplus(d))
}

/// Derivative of [`tuple_loss`] with respect to `d`.
pub fn tuple_loss_grad(d: f64, y: f64, weight: f64) -> f64 {
    weight * (sigmoid(d) - y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet {
    pub mlp: Mlp,
    pub encoding: Encoding,
    pub norm_lo: f64,
    pub norm_hi: f64,
}

impl FeatureNet {
    /// Untrained net with hidden sizes `hidden`, leaky-ReLU hidden layers and
    /// a softplus output.
    pub fn new(encoding: Encoding, hidden: &[usize], seed: u64) -> FeatureNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![encoding.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        FeatureNet {
            mlp: Mlp::new(&sizes, Activation::LeakyRelu, Activation::Softplus, &mut rng),
            encoding,
            norm_lo: 0.0,
            norm_hi: 0.0,
        }
    }

    pub fn encode(&self, states: &[RawState]) -> Array2<f64> {
        encode_states(states, self.encoding)
    }

    /// Raw softplus outputs.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.mlp.forward(x).column(0).to_owned()
    }

    pub fn normalizes(&self) -> bool {
        self.norm_hi - self.norm_lo >= MIN_NORM_RANGE
    }

    /// Scale from normalized output units to logits.
    pub fn norm_scale(&self) -> f64 {
        if self.normalizes() {
            self.norm_hi - self.norm_lo
        } else {
            1.0
        }
    }

    pub fn normalize(&self, logit: f64) -> f64 {
        if self.normalizes() {
            ((logit - self.norm_lo) / (self.norm_hi - self.norm_lo)).clamp(0.0, 1.0)
        } else {
            logit
        }
    }

    /// Sets the normalization bounds to the output range over `x`.
    pub fn refresh_norm(&mut self, x: ArrayView2<f64>) {
        let l = self.logits(x);
        self.norm_lo = l.iter().copied().fold(f64::INFINITY, f64::min);
        self.norm_hi = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }

    pub fn values(&self, states: &[RawState]) -> Vec<f64> {
        if states.is_empty() {
            return Vec::new();
        }
        let x = self.encode(states);
        self.logits(x.view()).iter().map(|&l| self.normalize(l)).collect()
    }

    pub fn value(&self, state: &RawState) -> f64 {
        self.values(std::slice::from_ref(state))[0]
    }

    /// Values and gradients with respect to the full 97-value raw state.
    pub fn values_and_gradients(&self, states: &[RawState]) -> (Vec<f64>, Vec<[f64; FULL_DIM]>) {
        if states.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let x = self.encode(states);
        let cache = self.mlp.forward_cached(x.view());
        let ones = Array2::from_elem((states.len(), 1), 1.0);
        let (_, gx) = self.mlp.backward(&cache, ones.view());
        let scale = self.norm_scale();
        let mut values = Vec::with_capacity(states.len());
        let mut grads = Vec::with_capacity(states.len());
        for (r, &logit) in cache.output().column(0).iter().enumerate() {
            let v = self.normalize(logit);
            values.push(v);
            let mut g = [0.0; FULL_DIM];
            let clamped = self.normalizes() && (v <= 0.0 || v >= 1.0);
            if !clamped {
                for (c, &idx) in self.encoding.indices().iter().enumerate() {
                    g[idx] = gx[(r, c)] / scale;
                }
            }
            grads.push(g);
        }
        (values, grads)
    }
}

pub fn encode_states(states: &[RawState], encoding: Encoding) -> Array2<f64> {
    let d = encoding.dim();
    let mut x = Array2::zeros((states.len(), d));
    for (mut row, s) in x.rows_mut().into_iter().zip(states) {
        s.encode_into(encoding, row.as_slice_mut().expect("row is contiguous"));
    }
    x
}

/// Loss and gradient of `tuples` given the logits of every dataset state.
/// Returns the loss and the gradient with respect to each logit.
fn loss_over<'a>(
    net: &FeatureNet,
    logits: &Array1<f64>,
    tuples: impl Iterator<Item = (&'a crate::traces::Tuple, usize, usize)>,
    n_rows: usize,
) -> (f64, Array1<f64>) {
    let scale = net.norm_scale();
    let mut grad = Array1::zeros(n_rows);
    let mut total = 0.0;
    for (t, i, j) in tuples {
        let a = logits[i] + t.shift_s * scale;
        let b = logits[j] + t.shift_s_prime * scale;
        let d = a - b;
        total += tuple_loss(d, t.y, t.weight);
        let g = tuple_loss_grad(d, t.y, t.weight);
        grad[i] += g;
        grad[j] -= g;
    }
    (total, grad)
}

fn check_dataset(net: &FeatureNet, dataset: &TupleDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(FerlError::Empty("dataset"));
    }
    if net.mlp.input_dim() != net.encoding.dim() {
        return Err(FerlError::Mismatch {
            expected: net.encoding.dim(),
            got: net.mlp.input_dim(),
        });
    }
    Ok(())
}

/// Total weighted cross-entropy over the dataset and its exact gradient
/// with respect to the flattened network parameters.
pub fn dataset_loss(net: &FeatureNet, dataset: &TupleDataset) -> Result<(f64, Vec<f64>)> {
    check_dataset(net, dataset)?;
    let x = net.encode(&dataset.states);
    let cache = net.mlp.forward_cached(x.view());
    let logits = cache.output().column(0).to_owned();
    let (loss, g) = loss_over(
        net,
        &logits,
        dataset.tuples.iter().map(|t| (t, t.s, t.s_prime)),
        dataset.states.len(),
    );
    let g2 = g.insert_axis(ndarray::Axis(1));
    let (grads, _) = net.mlp.backward(&cache, g2.view());
    Ok((loss, grads.flatten()))
}

/// The same total written as monotonicity terms for ordered tuples plus
/// indistinguishability terms for equal tuples.
pub fn decomposed_loss(net: &FeatureNet, dataset: &TupleDataset) -> Result<f64> {
    check_dataset(net, dataset)?;
    let x = net.encode(&dataset.states);
    let logits = net.logits(x.view());
    let scale = net.norm_scale();
    let lse = |a: f64, b: f64| a.max(b) + (-(a - b).abs()).exp().ln_1p();
    let mut total = 0.0;
    for t in &dataset.tuples {
        let a = logits[t.s] + t.shift_s * scale;
        let b = logits[t.s_prime] + t.shift_s_prime * scale;
        let term = if t.y == 0.5 {
            -0.5 * (a + b - 2.0 * lse(a, b))
        } else {
            let (hi, lo) = if t.y == 1.0 { (a, b) } else { (b, a) };
            -(hi - lse(hi, lo))
        };
        total += t.weight * term;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub encoding: Encoding,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            batch_size: 32,
            hidden: vec![64, 64],
            encoding: Encoding::PosRot36,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(FerlError::Config("epochs, batch size and layer sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay > 0.0) {
            return Err(FerlError::Config("learning rate and weight decay must be positive".into()));
        }
        Ok(())
    }
}

/// Training result with the per-epoch mean tuple loss.
#[derive(Clone, Debug)]
pub struct Trained {
    pub net: FeatureNet,
    pub epoch_losses: Vec<f64>,
}

/// Trains on an already built dataset.
pub fn train_on_dataset(dataset: &TupleDataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let mut net = FeatureNet::new(cfg.encoding, &cfg.hidden, cfg.seed);
    check_dataset(&net, dataset)?;
    let x = net.encode(&dataset.states);
    net.refresh_norm(x.view());
    let mut opt = AdamW::new(net.mlp.param_count(), cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..dataset.tuples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let d = x.ncols();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut xb = Array2::zeros((2 * b, d));
            for (k, &ti) in batch.iter().enumerate() {
                let t = &dataset.tuples[ti];
                xb.row_mut(k).assign(&x.row(t.s));
                xb.row_mut(b + k).assign(&x.row(t.s_prime));
            }
            let cache = net.mlp.forward_cached(xb.view());
            let logits = cache.output().column(0).to_owned();
            let (loss, g) = loss_over(
                &net,
                &logits,
                batch.iter().enumerate().map(|(k, &ti)| (&dataset.tuples[ti], k, b + k)),
                2 * b,
            );
            epoch_loss += loss;
            let g = (g / b as f64).insert_axis(ndarray::Axis(1));
            let (grads, _): (Gradients, _) = net.mlp.backward(&cache, g.view());
            opt.step_mlp(&mut net.mlp, &grads);
        }
        net.refresh_norm(x.view());
        epoch_losses.push(epoch_loss / dataset.tuples.len() as f64);
    }
    if !net.norm_lo.is_finite() || !net.norm_hi.is_finite() {
        return Err(FerlError::Numerical("feature outputs diverged".into()));
    }
    Ok(Trained { net, epoch_losses })
}

/// Builds the augmented dataset from `traces` and trains a feature on it.
pub fn train_feature(traces: &[FeatureTrace], cfg: &TrainConfig) -> Result<FeatureNet> {
    let dataset = build_dataset(traces, true)?;
    Ok(train_on_dataset(&dataset, cfg)?.net)
}

/// Epochs used for each candidate by [`select_subspace`].
pub const SUBSPACE_EPOCHS: usize = 10;

/// Mean per-tuple loss of each candidate subspace on held-out traces.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceScores {
    pub position: f64,
    pub rotation: f64,
}

impl SubspaceScores {
    /// Lower held-out loss wins; ties go to positions.
    pub fn choice(&self) -> Encoding {
        if self.rotation < self.position {
            Encoding::Rot9
        } else {
            Encoding::Pos27
        }
    }
}

/// Trains a short run on a random half of the traces for each of the
/// position and rotation subspaces and scores each on the other half.
pub fn subspace_scores(traces: &[FeatureTrace], cfg: &TrainConfig) -> Result<SubspaceScores> {
    if traces.len() < 2 {
        return Err(FerlError::invalid("subspace selection", "needs at least 2 traces"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut idx: Vec<usize> = (0..traces.len()).collect();
    idx.shuffle(&mut rng);
    let half = traces.len() / 2;
    let train: Vec<FeatureTrace> = idx[..half].iter().map(|&i| traces[i].clone()).collect();
    let held: Vec<FeatureTrace> = idx[half..].iter().map(|&i| traces[i].clone()).collect();
    let train_ds = build_dataset(&train, true)?;
    let held_ds = build_dataset(&held, false)?;
    let mut score = |encoding: Encoding| -> Result<f64> {
        let c = TrainConfig {
            epochs: SUBSPACE_EPOCHS,
            encoding,
            seed: rng.random(),
            ..cfg.clone()
        };
        let net = train_on_dataset(&train_ds, &c)?.net;
        let weight: f64 = held_ds.tuples.iter().map(|t| t.weight).sum();
        Ok(dataset_loss(&net, &held_ds)?.0 / weight)
    };
    let position = score(Encoding::Pos27)?;
    let rotation = score(Encoding::Rot9)?;
    Ok(SubspaceScores { position, rotation })
}

pub fn select_subspace(traces: &[FeatureTrace], cfg: &TrainConfig) -> Result<Encoding> {
    Ok(subspace_scores(traces, cfg)?.choice())
}

/// Picks the subspace with [`select_subspace`], then trains on all traces.
pub fn train_feature_auto(traces: &[FeatureTrace], cfg: &TrainConfig) -> Result<FeatureNet> {
    let encoding = select_subspace(traces, cfg)?;
    train_feature(
        traces,
        &TrainConfig {
            encoding,
            ..cfg.clone()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gt::GtFeatureId;
    use crate::scene::Scene;
    use crate::teacher::synth_traces;

    #[test]
    fn reference_probabilities() {
        assert_eq!(pref_prob(0.3, 0.3), 0.5);
        assert!((pref_prob(1.0, 0.0) - 0.731059).abs() < 1e-6);
        assert!((pref_prob(0.7, -2.0) + pref_prob(-2.0, 0.7) - 1.0).abs() < 1e-15);
        assert!((tuple_loss(0.0, 1.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((tuple_loss(0.0, 0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(tuple_loss(800.0, 1.0, 1.0) < 1e-300);
    }

    #[test]
    fn training_is_deterministic_and_orders_two_states() {
        let scene = Scene::default();
        let mut t = synth_traces(GtFeatureId::Table, 1, &scene, 0.0, 4).unwrap();
        let states = vec![t[0].first().clone(), t[0].last().clone()];
        t[0].states = states;
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let ds = build_dataset(&t, true).unwrap();
        let a = train_on_dataset(&ds, &cfg).unwrap();
        let b = train_on_dataset(&ds, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.epoch_losses.last().unwrap().to_bits(), b.epoch_losses.last().unwrap().to_bits());
        let v = a.net.values(&t[0].states);
        assert!(v[0] > v[1]);
    }

    #[test]
    fn gradient_of_values_matches_differences() {
        let scene = Scene::default();
        let traces = synth_traces(GtFeatureId::Laptop, 2, &scene, 0.0, 1).unwrap();
        let net = train_feature(
            &traces,
            &TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let s = traces[0].states[3].clone();
        let (v, g) = net.values_and_gradients(std::slice::from_ref(&s));
        let h = 1e-6;
        for &idx in Encoding::PosRot36.indices() {
            let mut hi = *s.values();
            hi[idx] += h;
            let mut lo = *s.values();
            lo[idx] -= h;
            let fd = (net.value(&RawState::from_values(hi)) - net.value(&RawState::from_values(lo))) / (2.0 * h);
            assert!((fd - g[0][idx]).abs() < 1e-5 * (1.0 + fd.abs()), "index {idx}");
        }
        assert!(v[0] >= 0.0 && v[0] <= 1.0);
    }
}
