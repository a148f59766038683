//! Line-oriented text formats for traces, trajectories, nets, reward
//! manifests and feature fields.
//!
//! Floats are written in Rust's shortest round-trip form, so every file
//! reads back bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::arm::JointConfig;
use crate::error::{FerlError, Result};
use crate::gt::GtFeatureId;
use crate::learner::FeatureNet;
use crate::meirl::MeirlNet;
use crate::nn::{Activation, Dense, Mlp};
use crate::planner::Trajectory;
use crate::reward::{RewardFeature, RewardModel};
use crate::scene::Scene;
use crate::state::{raw_state_from_stored, Encoding, RawState};
use crate::traces::{validate_trace, FeatureTrace, TraceMeta};

pub const TRACE_HEADER: &str = "ferl-traces v1";
pub const TRAJECTORY_HEADER: &str = "ferl-trajectory v1";
pub const NET_HEADER: &str = "ferl-net v1";
pub const MEIRL_HEADER: &str = "ferl-meirl v1";
pub const REWARD_HEADER: &str = "ferl-reward v1";
pub const FIELD_HEADER: &str = "ferl-field v1";

/// Tolerance when checking stored positions against forward kinematics.
const STORED_TOLERANCE: f64 = 1e-6;

/// Reads a text file into line-numbered, whitespace-split records.
struct Reader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Reader { lines, pos: 0 }
    }

    fn line_no(&self) -> usize {
        self.lines.get(self.pos).map_or_else(|| self.lines.last().map_or(0, |l| l.0), |l| l.0)
    }

    fn err(&self, reason: impl Into<String>) -> FerlError {
        FerlError::parse(self.line_no(), reason)
    }

    fn done(&self) -> bool {
        self.pos >= self.lines.len()
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|l| l.1)
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self.peek().ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(line)
    }

    fn header(&mut self, expected: &str) -> Result<()> {
        let line = self.next()?;
        if line != expected {
            self.pos -= 1;
            return Err(self.err(format!("expected header `{expected}`, found `{line}`")));
        }
        Ok(())
    }

    /// Value after `key` on the next line.
    fn key(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            None if line == key => Ok(""),
            _ => {
                self.pos -= 1;
                Err(self.err(format!("expected `{key}`")))
            }
        }
    }

    fn parsed<T: FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad {what} `{s}`")))
    }

    fn key_parsed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.key(key)?;
        self.pos -= 1;
        let out = self.parsed(v, key);
        self.pos += 1;
        out
    }

    fn floats(&mut self, s: &str) -> Result<Vec<f64>> {
        s.split_whitespace().map(|t| self.parsed(t, "number")).collect()
    }

    fn float_line(&mut self) -> Result<Vec<f64>> {
        let line = self.next()?;
        self.pos -= 1;
        let out = self.floats(line);
        self.pos += 1;
        out
    }
}

fn push_floats(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:?}").unwrap();
    }
    out.push('\n');
}

fn label_text(l: Option<f64>) -> String {
    l.map_or_else(|| "-".to_string(), |v| format!("{v:?}"))
}

fn write_states(out: &mut String, states: &[RawState]) {
    writeln!(out, "states {}", states.len()).unwrap();
    for s in states {
        push_floats(
            out,
            s.joint_config().0.iter().copied().chain(s.encode(Encoding::PosRot36)),
        );
    }
}

/// Rows hold 7 joint angles then the 36 stored values; positions and
/// rotation are checked against forward kinematics.
fn read_states(r: &mut Reader) -> Result<Vec<RawState>> {
    let n: usize = r.key_parsed("states")?;
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        let row = r.float_line()?;
        if row.len() != 43 {
            r.pos -= 1;
            return Err(r.err(format!("state row has {} values, expected 43", row.len())));
        }
        let q = JointConfig::from_slice(&row[..7])?;
        let s = raw_state_from_stored(&q, &row[7..]).map_err(|e| {
            FerlError::parse(r.lines[r.pos - 1].0, e.to_string())
        })?;
        let stored = &row[7..];
        let recomputed = s.encode(Encoding::PosRot36);
        if stored.iter().zip(&recomputed).any(|(a, b)| (a - b).abs() > STORED_TOLERANCE) {
            r.pos -= 1;
            return Err(r.err("stored state disagrees with its joint angles"));
        }
        states.push(s);
    }
    Ok(states)
}

pub fn traces_to_string(traces: &[FeatureTrace]) -> String {
    let mut out = String::new();
    writeln!(out, "{TRACE_HEADER}").unwrap();
    for t in traces {
        writeln!(out, "trace").unwrap();
        writeln!(out, "feature {}", t.meta.feature).unwrap();
        writeln!(out, "scene_hash {}", t.meta.scene_hash).unwrap();
        writeln!(out, "seed {}", t.meta.seed).unwrap();
        writeln!(out, "protocol {}", t.meta.protocol).unwrap();
        writeln!(out, "labels {} {}", label_text(t.label_start), label_text(t.label_end)).unwrap();
        write_states(&mut out, &t.states);
        writeln!(out, "end").unwrap();
    }
    out
}

fn parse_label(r: &Reader, s: &str) -> Result<Option<f64>> {
    if s == "-" {
        Ok(None)
    } else {
        r.parsed(s, "label").map(Some)
    }
}

pub fn traces_from_str(text: &str) -> Result<Vec<FeatureTrace>> {
    let mut r = Reader::new(text);
    r.header(TRACE_HEADER)?;
    let mut out = Vec::new();
    while !r.done() {
        r.key("trace")?;
        let feature = r.key("feature")?.to_string();
        let scene_hash = r.key("scene_hash")?.to_string();
        let seed = r.key_parsed("seed")?;
        let protocol = r.key("protocol")?.to_string();
        let labels: Vec<&str> = r.key("labels")?.split_whitespace().collect();
        if labels.len() != 2 {
            r.pos -= 1;
            return Err(r.err("labels needs a start and an end value"));
        }
        let label_start = parse_label(&r, labels[0])?;
        let label_end = parse_label(&r, labels[1])?;
        let states = read_states(&mut r)?;
        r.key("end")?;
        let meta = TraceMeta {
            feature,
            seed,
            protocol,
            scene_hash,
        };
        out.push(validate_trace(states, label_start, label_end, meta)?);
    }
    Ok(out)
}

pub fn save_traces(path: impl AsRef<Path>, traces: &[FeatureTrace]) -> Result<()> {
    Ok(fs::write(path, traces_to_string(traces))?)
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<FeatureTrace>> {
    traces_from_str(&fs::read_to_string(path)?)
}

/// Every trace in the `.trace` files of a directory, in file-name order.
pub fn load_trace_dir(dir: impl AsRef<Path>) -> Result<Vec<FeatureTrace>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "trace"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_traces(&p).map_err(|e| e.in_stage(format!("read {}", p.display())))?);
    }
    Ok(out)
}

pub fn trajectory_to_string(traj: &Trajectory, scene: &Scene) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{TRAJECTORY_HEADER}").unwrap();
    writeln!(out, "scene_hash {}", scene.hash_hex()).unwrap();
    write_states(&mut out, &traj.states(scene)?);
    writeln!(out, "end").unwrap();
    Ok(out)
}

pub fn trajectory_from_str(text: &str) -> Result<Trajectory> {
    let mut r = Reader::new(text);
    r.header(TRAJECTORY_HEADER)?;
    r.key("scene_hash")?;
    let states = read_states(&mut r)?;
    r.key("end")?;
    Trajectory::new(states.iter().map(|s| s.joint_config()).collect())
}

fn write_mlp(out: &mut String, mlp: &Mlp) {
    let sizes: Vec<String> = mlp.sizes().iter().map(|s| s.to_string()).collect();
    writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
    let acts: Vec<&str> = mlp.layers.iter().map(|l| l.activation.name()).collect();
    writeln!(out, "activations {}", acts.join(" ")).unwrap();
    writeln!(out, "weights {}", mlp.param_count()).unwrap();
    for l in &mlp.layers {
        for row in l.weight.rows() {
            push_floats(out, row.iter().copied());
        }
        push_floats(out, l.bias.iter().copied());
    }
}

fn read_mlp(r: &mut Reader) -> Result<Mlp> {
    let sizes: Vec<usize> = {
        let s = r.key("sizes")?;
        r.pos -= 1;
        let v = s.split_whitespace().map(|t| r.parsed(t, "layer size")).collect::<Result<Vec<usize>>>();
        r.pos += 1;
        v?
    };
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(r.err("need at least two positive layer sizes"));
    }
    let acts: Vec<Activation> = r
        .key("activations")?
        .split_whitespace()
        .map(Activation::from_name)
        .collect::<Result<_>>()?;
    if acts.len() != sizes.len() - 1 {
        return Err(r.err("one activation per layer"));
    }
    let count: usize = r.key_parsed("weights")?;
    let mut layers = Vec::with_capacity(acts.len());
    for (k, act) in acts.into_iter().enumerate() {
        let (n_in, n_out) = (sizes[k], sizes[k + 1]);
        let mut weight = Array2::zeros((n_in, n_out));
        for i in 0..n_in {
            let row = r.float_line()?;
            if row.len() != n_out {
                r.pos -= 1;
                return Err(r.err(format!("weight row has {} values, expected {n_out}", row.len())));
            }
            weight.row_mut(i).assign(&Array1::from(row));
        }
        let bias = r.float_line()?;
        if bias.len() != n_out {
            r.pos -= 1;
            return Err(r.err(format!("bias row has {} values, expected {n_out}", bias.len())));
        }
        layers.push(Dense {
            weight,
            bias: Array1::from(bias),
            activation: act,
        });
    }
    let mlp = Mlp { layers };
    if mlp.param_count() != count {
        return Err(r.err(format!("weights header says {count}, layers hold {}", mlp.param_count())));
    }
    Ok(mlp)
}

pub fn net_to_string(net: &FeatureNet) -> String {
    let mut out = String::new();
    writeln!(out, "{NET_HEADER}").unwrap();
    writeln!(out, "encoding {}", net.encoding.tag()).unwrap();
    writeln!(out, "norm {:?} {:?}", net.norm_lo, net.norm_hi).unwrap();
    write_mlp(&mut out, &net.mlp);
    writeln!(out, "end").unwrap();
    out
}

pub fn net_from_str(text: &str) -> Result<FeatureNet> {
    let mut r = Reader::new(text);
    r.header(NET_HEADER)?;
    let encoding: Encoding = r.key("encoding")?.parse()?;
    let norm = {
        let s = r.key("norm")?;
        r.pos -= 1;
        let v = r.floats(s)?;
        r.pos += 1;
        v
    };
    if norm.len() != 2 {
        return Err(r.err("norm needs two values"));
    }
    let mlp = read_mlp(&mut r)?;
    r.key("end")?;
    if mlp.input_dim() != encoding.dim() || mlp.output_dim() != 1 {
        return Err(FerlError::invalid(
            "net",
            format!("sizes {:?} do not fit encoding {}", mlp.sizes(), encoding.tag()),
        ));
    }
    Ok(FeatureNet {
        mlp,
        encoding,
        norm_lo: norm[0],
        norm_hi: norm[1],
    })
}

pub fn save_net(path: impl AsRef<Path>, net: &FeatureNet) -> Result<()> {
    Ok(fs::write(path, net_to_string(net))?)
}

pub fn load_net(path: impl AsRef<Path>) -> Result<FeatureNet> {
    net_from_str(&fs::read_to_string(path)?)
}

pub fn meirl_to_string(net: &MeirlNet) -> String {
    let mut out = String::new();
    writeln!(out, "{MEIRL_HEADER}").unwrap();
    writeln!(out, "encoding {}", net.encoding.tag()).unwrap();
    writeln!(out, "scene_hash {}", net.scene.hash_hex()).unwrap();
    let known: Vec<&str> = net.known.iter().map(|k| k.name()).collect();
    writeln!(out, "known {}", known.join(" ")).unwrap();
    write_mlp(&mut out, &net.body);
    writeln!(out, "fusion {}", net.fusion.len()).unwrap();
    push_floats(&mut out, net.fusion.iter().copied());
    writeln!(out, "fusion_bias {:?}", net.fusion_bias).unwrap();
    writeln!(out, "end").unwrap();
    out
}

/// The scene must be the one the net was trained in.
pub fn meirl_from_str(text: &str, scene: &Scene) -> Result<MeirlNet> {
    let mut r = Reader::new(text);
    r.header(MEIRL_HEADER)?;
    let encoding: Encoding = r.key("encoding")?.parse()?;
    let hash = r.key("scene_hash")?;
    if hash != scene.hash_hex() {
        return Err(FerlError::Config(format!(
            "net was trained in scene {hash}, given scene {}",
            scene.hash_hex()
        )));
    }
    let known: Vec<GtFeatureId> = r
        .key("known")?
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_>>()?;
    let body = read_mlp(&mut r)?;
    let k: usize = r.key_parsed("fusion")?;
    let fusion = r.float_line()?;
    if k != known.len() + 1 || fusion.len() != k {
        return Err(r.err("fusion layer takes one input per known feature plus the body"));
    }
    let fusion_bias = r.key_parsed("fusion_bias")?;
    r.key("end")?;
    if body.input_dim() != encoding.dim() || body.output_dim() != 1 {
        return Err(FerlError::invalid("meirl net", "body sizes do not fit the encoding"));
    }
    Ok(MeirlNet {
        body,
        fusion,
        fusion_bias,
        known,
        encoding,
        scene: scene.clone(),
    })
}

pub fn save_meirl(path: impl AsRef<Path>, net: &MeirlNet) -> Result<()> {
    Ok(fs::write(path, meirl_to_string(net))?)
}

pub fn load_meirl(path: impl AsRef<Path>, scene: &Scene) -> Result<MeirlNet> {
    meirl_from_str(&fs::read_to_string(path)?, scene)
}

/// Writes the manifest and one net file per learned feature, named
/// `<stem>.f<k>.net` beside it.
pub fn save_reward(path: impl AsRef<Path>, model: &RewardModel) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "reward".into());
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut out = String::new();
    writeln!(out, "{REWARD_HEADER}").unwrap();
    writeln!(out, "scene_hash {}", model.scene.hash_hex()).unwrap();
    for (k, (f, w)) in model.features().iter().zip(model.theta()).enumerate() {
        match f {
            RewardFeature::Gt(id) => writeln!(out, "feature gt {} {w:?}", id.name()).unwrap(),
            RewardFeature::Learned(net) => {
                let name = format!("{stem}.f{k}.net");
                save_net(dir.join(&name), net)?;
                writeln!(out, "feature net {name} {w:?}").unwrap();
            }
        }
    }
    writeln!(out, "end").unwrap();
    Ok(fs::write(path, out)?)
}

/// Net paths are resolved relative to the manifest.
pub fn load_reward(path: impl AsRef<Path>, scene: &Scene) -> Result<RewardModel> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new(""));
    let text = fs::read_to_string(path)?;
    let mut r = Reader::new(&text);
    r.header(REWARD_HEADER)?;
    let hash = r.key("scene_hash")?;
    if hash != scene.hash_hex() {
        return Err(FerlError::Config(format!(
            "reward model was built in scene {hash}, given scene {}",
            scene.hash_hex()
        )));
    }
    let mut features = Vec::new();
    let mut theta = Vec::new();
    while r.peek().is_some_and(|l| l.starts_with("feature")) {
        let parts: Vec<&str> = r.key("feature")?.split_whitespace().collect();
        r.pos -= 1;
        if parts.len() != 3 {
            return Err(r.err("feature line is `feature <gt|net> <name> <weight>`"));
        }
        let w: f64 = r.parsed(parts[2], "weight")?;
        let f = match parts[0] {
            "gt" => RewardFeature::Gt(parts[1].parse()?),
            "net" => RewardFeature::Learned(Arc::new(
                load_net(dir.join(parts[1])).map_err(|e| e.in_stage(format!("read {}", parts[1])))?,
            )),
            other => return Err(r.err(format!("unknown feature kind `{other}`"))),
        };
        r.pos += 1;
        features.push(f);
        theta.push(w);
    }
    r.key("end")?;
    RewardModel::new(scene.clone(), features, theta)
}

/// One `x y z value` row per sample, in sample order.
pub fn field_to_string(points: &[[f64; 4]]) -> String {
    let mut out = String::new();
    writeln!(out, "{FIELD_HEADER}").unwrap();
    writeln!(out, "points {}", points.len()).unwrap();
    for p in points {
        push_floats(&mut out, p.iter().copied());
    }
    out
}

pub fn field_from_str(text: &str) -> Result<Vec<[f64; 4]>> {
    let mut r = Reader::new(text);
    r.header(FIELD_HEADER)?;
    let n: usize = r.key_parsed("points")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let row = r.float_line()?;
        if row.len() != 4 {
            r.pos -= 1;
            return Err(r.err("field rows hold x y z value"));
        }
        out.push([row[0], row[1], row[2], row[3]]);
    }
    if !r.done() {
        return Err(r.err("trailing lines after the last point"));
    }
    Ok(out)
}
