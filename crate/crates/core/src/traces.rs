//! Feature traces and the comparison-tuple dataset built from them.

use crate::error::{FerlError, Result};
use crate::state::RawState;

/// Weight carried by augmented indistinguishability tuples.
pub const EQUAL_WEIGHT: f64 = 10.0;
/// Total copies of each indistinguishability tuple when augmenting.
pub const EQUAL_COPIES: usize = 5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceMeta {
    pub feature: String,
    pub seed: u64,
    pub protocol: String,
    pub scene_hash: String,
}

/// Ordered states from high to low feature value.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrace {
    pub states: Vec<RawState>,
    pub label_start: Option<f64>,
    pub label_end: Option<f64>,
    pub meta: TraceMeta,
}

impl FeatureTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &RawState {
        &self.states[0]
    }

    pub fn last(&self) -> &RawState {
        &self.states[self.states.len() - 1]
    }
}

/// Converts a 0-10 rating into a label in [0, 1].
pub fn rating_to_label(rating: f64) -> Result<f64> {
    if !(0.0..=10.0).contains(&rating) {
        return Err(FerlError::invalid("rating", format!("{rating} outside [0, 10]")));
    }
    Ok(rating / 10.0)
}

fn check_label(label: Option<f64>) -> Result<()> {
    match label {
        Some(l) if !(0.0..=1.0).contains(&l) => {
            Err(FerlError::invalid("label", format!("{l} outside [0, 1]")))
        }
        _ => Ok(()),
    }
}

/// Accepts any ordered sequence of at least two states. Monotonicity is not
/// checked since human traces are only noisily monotone.
pub fn validate_trace(
    states: Vec<RawState>,
    label_start: Option<f64>,
    label_end: Option<f64>,
    meta: TraceMeta,
) -> Result<FeatureTrace> {
    if states.len() < 2 {
        return Err(FerlError::invalid(
            "trace",
            format!("needs at least 2 states, got {}", states.len()),
        ));
    }
    check_label(label_start)?;
    check_label(label_end)?;
    Ok(FeatureTrace {
        states,
        label_start,
        label_end,
        meta,
    })
}

/// One comparison between two dataset states.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tuple {
    /// Index of `s` in [`TupleDataset::states`].
    pub s: usize,
    pub s_prime: usize,
    pub y: f64,
    pub weight: f64,
    /// Added to `phi(s)` before the comparison, in normalized output units.
    pub shift_s: f64,
    pub shift_s_prime: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TupleDataset {
    /// All trace states, trace after trace.
    pub states: Vec<RawState>,
    pub tuples: Vec<Tuple>,
    pub trace_lengths: Vec<usize>,
}

impl TupleDataset {
    pub fn trace_count(&self) -> usize {
        self.trace_lengths.len()
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

/// Tuple count before augmentation.
pub fn expected_tuple_count(lengths: &[usize]) -> usize {
    let within: usize = lengths.iter().map(|&n| n * n.saturating_sub(1) / 2).sum();
    let n = lengths.len();
    within + n * n.saturating_sub(1)
}

fn start_shift(t: &FeatureTrace) -> f64 {
    -t.label_start.unwrap_or(1.0)
}

fn end_shift(t: &FeatureTrace) -> f64 {
    1.0 - t.label_end.unwrap_or(0.0)
}

/// Builds every within-trace pair with `y = 1` and every cross-trace
/// start-start and end-end pair with `y = 0.5`. Endpoint labels enter as
/// output shifts on the `y = 0.5` pairs only. With `augment`, each
/// `y = 0.5` tuple appears [`EQUAL_COPIES`] times with weight
/// [`EQUAL_WEIGHT`].
pub fn build_dataset(traces: &[FeatureTrace], augment: bool) -> Result<TupleDataset> {
    if traces.is_empty() {
        return Err(FerlError::Empty("trace set"));
    }
    let mut states = Vec::new();
    let mut offsets = Vec::with_capacity(traces.len());
    let mut tuples = Vec::new();
    for t in traces {
        if t.states.len() < 2 {
            return Err(FerlError::invalid("trace", "fewer than 2 states"));
        }
        let base = states.len();
        offsets.push(base);
        states.extend(t.states.iter().cloned());
        let n = t.states.len();
        for i in 0..n {
            for j in i + 1..n {
                tuples.push(Tuple {
                    s: base + i,
                    s_prime: base + j,
                    y: 1.0,
                    weight: 1.0,
                    shift_s: 0.0,
                    shift_s_prime: 0.0,
                });
            }
        }
    }
    let (copies, weight) = if augment { (EQUAL_COPIES, EQUAL_WEIGHT) } else { (1, 1.0) };
    for i in 0..traces.len() {
        for j in 0..i {
            // Order each pair by content so the multiset is independent of
            // the input order.
            let pairs = [
                (offsets[i], start_shift(&traces[i]), offsets[j], start_shift(&traces[j])),
                (
                    offsets[i] + traces[i].len() - 1,
                    end_shift(&traces[i]),
                    offsets[j] + traces[j].len() - 1,
                    end_shift(&traces[j]),
                ),
            ];
            for (a, sa, b, sb) in pairs {
                let (a, sa, b, sb) = if content_less(&states[b], sb, &states[a], sa) {
                    (b, sb, a, sa)
                } else {
                    (a, sa, b, sb)
                };
                for _ in 0..copies {
                    tuples.push(Tuple {
                        s: a,
                        s_prime: b,
                        y: 0.5,
                        weight,
                        shift_s: sa,
                        shift_s_prime: sb,
                    });
                }
            }
        }
    }
    Ok(TupleDataset {
        states,
        tuples,
        trace_lengths: traces.iter().map(|t| t.len()).collect(),
    })
}

fn content_less(a: &RawState, sa: f64, b: &RawState, sb: f64) -> bool {
    let key = |s: &RawState, shift: f64| {
        s.values()
            .iter()
            .copied()
            .chain(std::iter::once(shift))
            .collect::<Vec<f64>>()
    };
    key(a, sa)
        .iter()
        .zip(key(b, sb).iter())
        .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
        .is_some_and(|o| o.is_lt())
}
