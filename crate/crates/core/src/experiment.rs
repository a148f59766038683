//! Experiment configs, pipelines and the report format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FerlError, Result};
use crate::eval::{compare_seed, mean_se, median, ComparisonConfig, FeatureBench, BEHAVIOR_RESTARTS};
use crate::gt::GtFeatureId;
use crate::learner::{train_feature, TrainConfig};
use crate::meirl::{MeirlConfig, Task};
use crate::planner::PlanConfig;
use crate::scene::Scene;
use crate::state::Encoding;
use crate::teacher::synth_traces;

pub const REPORT_HEADER: &str = "ferl-report v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// MSE_norm over trace counts 1..=max_traces.
    FeatureSweep,
    /// FERL against ME-IRL on one task.
    Comparison,
    /// between_objects on the 9D encoding against the 27D one.
    BetweenObjects,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FeatureSweep => "feature_sweep",
            ExperimentKind::Comparison => "comparison",
            ExperimentKind::BetweenObjects => "between_objects",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = FerlError;

    fn from_str(s: &str) -> Result<ExperimentKind> {
        [ExperimentKind::FeatureSweep, ExperimentKind::Comparison, ExperimentKind::BetweenObjects]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FerlError::Config(format!("unknown experiment kind {s:?}")))
    }
}

/// Parsed from TOML. Relative paths resolve against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub feature: String,
    pub task: u32,
    pub max_traces: usize,
    pub traces: usize,
    pub demos: usize,
    pub seeds: Vec<u64>,
    pub encoding: String,
    pub test_states: usize,
    pub behavior_pairs: usize,
    pub noise: f64,
    pub epochs: usize,
    pub meirl_iterations: usize,
    pub output: PathBuf,
    pub scene: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::FeatureSweep,
            feature: "table".into(),
            task: 1,
            max_traces: 9,
            traces: 10,
            demos: 10,
            seeds: (0..10).collect(),
            encoding: Encoding::Pos27.tag().into(),
            test_states: crate::eval::TEST_STATES,
            behavior_pairs: 20,
            noise: 0.0,
            epochs: TrainConfig::default().epochs,
            meirl_iterations: crate::meirl::MEIRL_ITERATIONS,
            output: PathBuf::from("report.txt"),
            scene: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| FerlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and rebases relative paths onto the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let mut cfg = ExperimentConfig::from_toml_str(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if cfg.output.is_relative() {
            cfg.output = dir.join(&cfg.output);
        }
        if let Some(s) = &cfg.scene {
            if s.is_relative() {
                cfg.scene = Some(dir.join(s));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(FerlError::Config("seeds must not be empty".into()));
        }
        if self.test_states == 0 {
            return Err(FerlError::Config("test_states must be positive".into()));
        }
        self.feature_id()?;
        self.encoding()?;
        Task::from_index(self.task).map_err(|e| FerlError::Config(e.to_string()))?;
        match self.kind {
            ExperimentKind::FeatureSweep if self.max_traces == 0 => {
                Err(FerlError::Config("max_traces must be positive".into()))
            }
            ExperimentKind::Comparison if self.traces == 0 || self.demos == 0 => {
                Err(FerlError::Config("traces and demos must be positive".into()))
            }
            ExperimentKind::BetweenObjects if self.traces == 0 => {
                Err(FerlError::Config("traces must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn feature_id(&self) -> Result<GtFeatureId> {
        self.feature.parse()
    }

    pub fn encoding(&self) -> Result<Encoding> {
        self.encoding.parse()
    }

    pub fn load_scene(&self) -> Result<Scene> {
        match &self.scene {
            Some(p) => Scene::load(p),
            None => Scene::from_env_or_default(),
        }
    }

    fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            encoding: self.encoding()?,
            ..TrainConfig::default()
        })
    }
}

/// Key-value header, a per-seed metrics table and a summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary_columns: Vec<String>,
    pub summary: Vec<Vec<f64>>,
}

impl Report {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn summary_column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.summary_columns.iter().position(|c| c == name)?;
        Some(self.summary.iter().map(|r| r[i]).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{REPORT_HEADER}").unwrap();
        for (k, v) in &self.meta {
            writeln!(out, "{k} {v}").unwrap();
        }
        let table = |out: &mut String, name: &str, cols: &[String], rows: &[Vec<f64>]| {
            writeln!(out, "[{name}]").unwrap();
            writeln!(out, "{}", cols.join(" ")).unwrap();
            for r in rows {
                let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
                writeln!(out, "{}", cells.join(" ")).unwrap();
            }
        };
        table(&mut out, "metrics", &self.columns, &self.rows);
        table(&mut out, "summary", &self.summary_columns, &self.summary);
        writeln!(out, "end").unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Report> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == REPORT_HEADER => {}
            other => return Err(FerlError::parse(other.map_or(1, |o| o.0), format!("expected `{REPORT_HEADER}`"))),
        }
        let mut meta = Vec::new();
        let mut sections: Vec<(Vec<String>, Vec<Vec<f64>>)> = Vec::new();
        let mut ended = false;
        for (n, line) in lines {
            if ended {
                return Err(FerlError::parse(n, "content after `end`"));
            }
            if line == "end" {
                ended = true;
            } else if line.starts_with('[') {
                sections.push((Vec::new(), Vec::new()));
            } else if let Some((cols, rows)) = sections.last_mut() {
                if cols.is_empty() {
                    *cols = line.split_whitespace().map(String::from).collect();
                } else {
                    let row = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|_| FerlError::parse(n, format!("bad number `{t}`"))))
                        .collect::<Result<Vec<f64>>>()?;
                    if row.len() != cols.len() {
                        return Err(FerlError::parse(n, "row width differs from the column header"));
                    }
                    rows.push(row);
                }
            } else {
                let (k, v) = line.split_once(' ').unwrap_or((line, ""));
                meta.push((k.to_string(), v.to_string()));
            }
        }
        if !ended || sections.len() != 2 {
            return Err(FerlError::parse(0, "report needs metrics and summary tables and an `end` line"));
        }
        let (summary_columns, summary) = sections.pop().unwrap();
        let (columns, rows) = sections.pop().unwrap();
        Ok(Report {
            meta,
            columns,
            rows,
            summary_columns,
            summary,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Report> {
        Report::from_text(&std::fs::read_to_string(path)?)
    }
}

fn seeds_text(seeds: &[u64]) -> String {
    seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
}

fn summary_row(key: f64, values: &[f64]) -> Vec<f64> {
    let (mean, se) = mean_se(values);
    vec![key, mean, se, median(values)]
}

/// MSE_norm for every trace count and seed.
pub fn feature_sweep(id: GtFeatureId, scene: &Scene, max_traces: usize, seeds: &[u64], noise: f64, test_states: usize, train: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(seeds.len()); max_traces];
    for &seed in seeds {
        let bench = FeatureBench::new(id, scene, train.encoding, &train.hidden, test_states, seed)
            .map_err(|e| e.in_stage(format!("test set seed {seed}")))?;
        for n in 1..=max_traces {
            let traces = synth_traces(id, n, scene, noise, seed).map_err(|e| e.in_stage(format!("traces n={n} seed {seed}")))?;
            let net = train_feature(&traces, &TrainConfig { seed, ..train.clone() })
                .map_err(|e| e.in_stage(format!("train n={n} seed {seed}")))?;
            out[n - 1].push(bench.mse_norm(&net)?);
        }
    }
    Ok(out)
}

/// Per-seed `(mse_9d, mse_27d)` for between_objects.
pub fn between_objects_study(scene: &Scene, traces: usize, seeds: &[u64], noise: f64, test_states: usize, epochs: usize) -> Result<Vec<(f64, f64)>> {
    let id = GtFeatureId::BetweenObjects;
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let data = synth_traces(id, traces, scene, noise, seed).map_err(|e| e.in_stage(format!("traces seed {seed}")))?;
        let mut pair = [0.0; 2];
        for (slot, encoding) in [Encoding::EeObjects9, Encoding::Pos27].into_iter().enumerate() {
            let train = TrainConfig {
                epochs,
                encoding,
                seed,
                ..TrainConfig::default()
            };
            let bench = FeatureBench::new(id, scene, encoding, &train.hidden, test_states, seed)?;
            let net = train_feature(&data, &train).map_err(|e| e.in_stage(format!("train {} seed {seed}", encoding.tag())))?;
            pair[slot] = bench.mse(&net)?;
        }
        out.push((pair[0], pair[1]));
    }
    Ok(out)
}

pub fn comparison_config(cfg: &ExperimentConfig) -> Result<ComparisonConfig> {
    Ok(ComparisonConfig {
        task: Task::from_index(cfg.task)?,
        traces: cfg.traces,
        demos: cfg.demos,
        test_states: cfg.test_states,
        behavior_pairs: cfg.behavior_pairs,
        auto_subspace: false,
        train: cfg.train()?,
        meirl: MeirlConfig {
            iterations: cfg.meirl_iterations,
            ..MeirlConfig::default()
        },
        plan: PlanConfig::default(),
        behavior_plan: PlanConfig {
            restarts: BEHAVIOR_RESTARTS,
            ..PlanConfig::default()
        },
    })
}

/// Runs the configured pipeline and returns its report without writing it.
pub fn build_report(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let scene = cfg.load_scene().map_err(|e| e.in_stage("load scene"))?;
    let mut meta = vec![
        ("kind".to_string(), cfg.kind.name().to_string()),
        ("scene_hash".to_string(), scene.hash_hex()),
        ("seeds".to_string(), seeds_text(&cfg.seeds)),
        ("test_states".to_string(), cfg.test_states.to_string()),
    ];
    let mut push = |k: &str, v: String| meta.push((k.to_string(), v));
    match cfg.kind {
        ExperimentKind::FeatureSweep => {
            let id = cfg.feature_id()?;
            push("feature", id.name().into());
            push("encoding", cfg.encoding.clone());
            push("noise", format!("{:?}", cfg.noise));
            push("epochs", cfg.epochs.to_string());
            let sweep = feature_sweep(id, &scene, cfg.max_traces, &cfg.seeds, cfg.noise, cfg.test_states, &cfg.train()?)?;
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            for (k, values) in sweep.iter().enumerate() {
                let n = (k + 1) as f64;
                for (&seed, &v) in cfg.seeds.iter().zip(values) {
                    rows.push(vec![n, seed as f64, v]);
                }
                summary.push(summary_row(n, values));
            }
            Ok(Report {
                meta,
                columns: cols(&["n", "seed", "mse_norm"]),
                rows,
                summary_columns: cols(&["n", "mean", "se", "median"]),
                summary,
            })
        }
        ExperimentKind::Comparison => {
            let cc = comparison_config(cfg)?;
            push("task", cfg.task.to_string());
            push("traces", cfg.traces.to_string());
            push("demos", cfg.demos.to_string());
            push("behavior_pairs", cfg.behavior_pairs.to_string());
            push("encoding", cfg.encoding.clone());
            let mut rows = Vec::new();
            let (mut f_mse, mut m_mse, mut f_ratio, mut m_ratio) = (vec![], vec![], vec![], vec![]);
            for &seed in &cfg.seeds {
                let c = compare_seed(&cc, &scene, seed).map_err(|e| e.in_stage(format!("seed {seed}")))?;
                let fr = mean_se(&c.ferl_ratios).0;
                let mr = mean_se(&c.meirl_ratios).0;
                rows.push(vec![seed as f64, c.ferl_mse, c.meirl_mse, fr, mr]);
                f_mse.push(c.ferl_mse);
                m_mse.push(c.meirl_mse);
                f_ratio.push(fr);
                m_ratio.push(mr);
            }
            Ok(Report {
                meta,
                columns: cols(&["seed", "ferl_mse", "meirl_mse", "ferl_ratio", "meirl_ratio"]),
                rows,
                summary_columns: cols(&["metric", "mean", "se", "median"]),
                summary: vec![
                    summary_row(0.0, &f_mse),
                    summary_row(1.0, &m_mse),
                    summary_row(2.0, &f_ratio),
                    summary_row(3.0, &m_ratio),
                ],
            })
        }
        ExperimentKind::BetweenObjects => {
            push("traces", cfg.traces.to_string());
            push("noise", format!("{:?}", cfg.noise));
            push("epochs", cfg.epochs.to_string());
            let pairs = between_objects_study(&scene, cfg.traces, &cfg.seeds, cfg.noise, cfg.test_states, cfg.epochs)?;
            let rows = cfg.seeds.iter().zip(&pairs).map(|(&s, p)| vec![s as f64, p.0, p.1]).collect();
            let d9: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let d27: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            Ok(Report {
                meta,
                columns: cols(&["seed", "mse_9d", "mse_27d"]),
                rows,
                summary_columns: cols(&["dim", "mean", "se", "median"]),
                summary: vec![summary_row(9.0, &d9), summary_row(27.0, &d27)],
            })
        }
    }
}

/// Comparison summary rows, in order.
pub const COMPARISON_METRICS: [&str; 4] = ["ferl_mse", "meirl_mse", "ferl_ratio", "meirl_ratio"];

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Runs the experiment and writes the report to `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let report = build_report(cfg)?;
    report.write(&cfg.output).map_err(|e| e.in_stage("write report"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip() {
        let r = Report {
            meta: vec![("kind".into(), "feature_sweep".into()), ("seeds".into(), "0 1".into())],
            columns: cols(&["n", "seed", "mse_norm"]),
            rows: vec![vec![1.0, 0.0, 0.25], vec![1.0, 1.0, 1.0 / 3.0]],
            summary_columns: cols(&["n", "mean", "se", "median"]),
            summary: vec![summary_row(1.0, &[0.25, 1.0 / 3.0])],
        };
        let text = r.to_text();
        let back = Report::from_text(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.meta_value("seeds"), Some("0 1"));
        assert_eq!(back.column("mse_norm").unwrap()[1], 1.0 / 3.0);
    }

    #[test]
    fn config_validation() {
        let cfg = ExperimentConfig::from_toml_str("kind = \"feature_sweep\"\nfeature = \"laptop\"\n").unwrap();
        assert_eq!(cfg.seeds.len(), 10);
        assert!(ExperimentConfig::from_toml_str("seeds = []\n").is_err());
        assert!(ExperimentConfig::from_toml_str("feature = \"teapot\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("colour = 3\n").is_err());
    }
}
