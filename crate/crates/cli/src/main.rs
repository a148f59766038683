//! `ferl`: teaching, training, planning and experiment runs from the shell.

mod plot;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ferl::arm::JointConfig;
use ferl::eval::feature_field;
use ferl::experiment::{run_experiment, ExperimentConfig, ExperimentKind};
use ferl::gt::GtFeatureId;
use ferl::io::{
    field_to_string, load_meirl, load_net, load_reward, load_trace_dir, load_traces, save_meirl, save_net,
    save_reward, save_traces, trajectory_to_string,
};
use ferl::learner::{train_feature, train_feature_auto, TrainConfig};
use ferl::meirl::{synth_demos, task_pairs, train_meirl, MeirlConfig, Task};
use ferl::planner::{plan, Correction, PlanConfig, StateCost, Trajectory};
use ferl::reward::{ferl_step, BetaBelief, FerlConfig, RewardModel, TeacherSource};
use ferl::scene::Scene;
use ferl::state::Encoding;
use ferl::teacher::synth_traces;

#[derive(Parser)]
#[command(name = "ferl", version, about = "Feature-expansive reward learning on a simulated 7-DoF arm")]
struct Cli {
    /// Scene file; defaults to $FERL_SCENE, then the built-in scene.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic feature traces, one file per trace.
    Teach(TeachArgs),
    /// Train a feature network on trace files.
    TrainFeature(TrainFeatureArgs),
    /// Train the ME-IRL baseline on synthetic demonstrations.
    TrainMeirl(TrainMeirlArgs),
    /// Plan a trajectory under a reward.
    Plan(PlanArgs),
    /// Simulate the correction loop with a synthetic teacher.
    FerlRun(FerlRunArgs),
    /// Run an experiment config and write its report.
    Experiment(ExperimentArgs),
    /// Serve the teaching HTTP interface.
    Serve(ServeArgs),
    /// Sample a feature network over reachable states.
    ExportField(ExportFieldArgs),
    /// Render a report as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TeachArgs {
    #[arg(long)]
    feature: GtFeatureId,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability of swapping adjacent states.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFeatureArgs {
    /// A trace file or a directory of `.trace` files.
    #[arg(long)]
    traces: PathBuf,
    /// Input subspace tag, or `auto` to pick one from the traces.
    #[arg(long, default_value = "auto")]
    encoding: String,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainMeirlArgs {
    #[arg(long, default_value_t = 1)]
    task: u32,
    #[arg(long, default_value_t = 10)]
    demos: usize,
    #[arg(long, default_value_t = ferl::meirl::MEIRL_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RewardArgs {
    /// Reward manifest written by `ferl-run`.
    #[arg(long, conflicts_with_all = ["meirl", "features"])]
    reward: Option<PathBuf>,
    /// ME-IRL network written by `train-meirl`.
    #[arg(long, conflicts_with = "features")]
    meirl: Option<PathBuf>,
    /// Comma-separated GT feature names.
    #[arg(long, value_delimiter = ',')]
    features: Vec<GtFeatureId>,
    /// Comma-separated weights, one per feature.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    reward: RewardArgs,
    /// Seven comma-separated joint angles, or `home`.
    #[arg(long, allow_hyphen_values = true)]
    start: String,
    #[arg(long, allow_hyphen_values = true)]
    goal: String,
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FerlRunArgs {
    #[arg(long, default_value_t = 1)]
    task: u32,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 10)]
    traces: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives `reward.txt`, its nets and `trajectory.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    kind: Option<ExperimentKind>,
    #[arg(long)]
    feature: Option<String>,
    #[arg(long)]
    task: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    traces: Option<usize>,
    #[arg(long)]
    demos: Option<usize>,
    #[arg(long)]
    max_traces: Option<usize>,
    #[arg(long)]
    encoding: Option<String>,
    #[arg(long)]
    test_states: Option<usize>,
    #[arg(long)]
    behavior_pairs: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    meirl_iterations: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Args)]
struct ExportFieldArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the net path with a `.field` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let scene = match &cli.scene {
        Some(p) => Scene::load(p).with_context(|| format!("load scene {}", p.display()))?,
        None => Scene::from_env_or_default().context("load scene")?,
    };
    match cli.command {
        Command::Teach(a) => teach(a, &scene),
        Command::TrainFeature(a) => train_feature_cmd(a),
        Command::TrainMeirl(a) => train_meirl_cmd(a, &scene),
        Command::Plan(a) => plan_cmd(a, &scene),
        Command::FerlRun(a) => ferl_run(a, &scene),
        Command::Experiment(a) => experiment(a, cli.scene),
        Command::Serve(a) => serve(a, scene),
        Command::ExportField(a) => export_field(a, &scene),
        Command::Plot(a) => plot::plot_report(&a.report, &a.out),
    }
}

fn teach(a: TeachArgs, scene: &Scene) -> Result<()> {
    let traces = synth_traces(a.feature, a.n, scene, a.noise, a.seed).context("synthesize traces")?;
    fs::create_dir_all(&a.out).with_context(|| format!("create {}", a.out.display()))?;
    for (k, t) in traces.iter().enumerate() {
        let path = a.out.join(format!("{}_s{}_{:03}.trace", a.feature.name(), a.seed, k));
        save_traces(&path, std::slice::from_ref(t)).with_context(|| format!("write {}", path.display()))?;
    }
    println!("wrote {} traces to {}", traces.len(), a.out.display());
    Ok(())
}

fn read_traces(path: &Path) -> Result<Vec<ferl::traces::FeatureTrace>> {
    let traces = if path.is_dir() {
        load_trace_dir(path)
    } else {
        load_traces(path)
    };
    traces.with_context(|| format!("read traces {}", path.display()))
}

fn train_feature_cmd(a: TrainFeatureArgs) -> Result<()> {
    let traces = read_traces(&a.traces)?;
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let net = if a.encoding == "auto" {
        train_feature_auto(&traces, &cfg)
    } else {
        cfg.encoding = a.encoding.parse::<Encoding>()?;
        train_feature(&traces, &cfg)
    }
    .context("train feature")?;
    save_net(&a.out, &net).with_context(|| format!("write {}", a.out.display()))?;
    println!("trained on {} traces ({}) -> {}", traces.len(), net.encoding.tag(), a.out.display());
    Ok(())
}

fn train_meirl_cmd(a: TrainMeirlArgs, scene: &Scene) -> Result<()> {
    let task = Task::from_index(a.task)?;
    let cfg = MeirlConfig {
        iterations: a.iterations,
        seed: a.seed,
        ..MeirlConfig::default()
    };
    let demos = synth_demos(task, a.demos, scene, &cfg.plan, a.seed).context("synthesize demos")?;
    let net = train_meirl(&demos, &task.known_features(), scene, &cfg).context("train meirl")?;
    save_meirl(&a.out, &net).with_context(|| format!("write {}", a.out.display()))?;
    println!("trained on {} demos -> {}", demos.len(), a.out.display());
    Ok(())
}

fn parse_config(text: &str) -> Result<JointConfig> {
    if text == "home" {
        return Ok(JointConfig::HOME);
    }
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("joint angles {text:?}"))?;
    let q = JointConfig::from_slice(&values)?;
    q.check_limits()?;
    Ok(q)
}

fn load_cost(a: &RewardArgs, scene: &Scene) -> Result<Box<dyn StateCost>> {
    if let Some(p) = &a.reward {
        return Ok(Box::new(load_reward(p, scene).with_context(|| format!("read reward {}", p.display()))?));
    }
    if let Some(p) = &a.meirl {
        return Ok(Box::new(load_meirl(p, scene).with_context(|| format!("read meirl net {}", p.display()))?));
    }
    if a.features.is_empty() {
        bail!("give --reward, --meirl or --features");
    }
    let theta = if a.theta.is_empty() {
        vec![1.0; a.features.len()]
    } else {
        a.theta.clone()
    };
    Ok(Box::new(RewardModel::gt(scene.clone(), &a.features, theta)?))
}

fn plan_cmd(a: PlanArgs, scene: &Scene) -> Result<()> {
    let cost = load_cost(&a.reward, scene)?;
    let start = parse_config(&a.start).context("start")?;
    let goal = parse_config(&a.goal).context("goal")?;
    let cfg = PlanConfig {
        restarts: a.restarts,
        ..PlanConfig::default()
    };
    let traj = plan(cost.as_ref(), &start, &goal, scene, &cfg).context("plan")?;
    fs::write(&a.out, trajectory_to_string(&traj, scene)?).with_context(|| format!("write {}", a.out.display()))?;
    println!("planned {} waypoints -> {}", traj.len(), a.out.display());
    Ok(())
}

/// The simulated human pushes the middle waypoint of the current plan
/// toward the plan that is optimal under the true reward.
fn ferl_run(a: FerlRunArgs, scene: &Scene) -> Result<()> {
    let task = Task::from_index(a.task)?;
    let gt = task.gt_model(scene)?;
    let (_, start, goal) = task_pairs(task, 1, scene, a.seed)?.remove(0);
    let plan_cfg = PlanConfig::default();
    let target = plan(&gt, &start, &goal, scene, &plan_cfg).context("plan under true reward")?;
    let mut model = RewardModel::gt(scene.clone(), &task.known_features(), vec![0.0, 10.0])?;
    let mut belief = BetaBelief::default();
    let mut traj = plan(&model, &start, &goal, scene, &plan_cfg).context("initial plan")?;
    let mut source = TeacherSource {
        id: task.unknown(),
        scene: scene.clone(),
        noise_p: 0.0,
        seed: a.seed,
    };
    let cfg = FerlConfig {
        traces: a.traces,
        plan: plan_cfg,
        seed: a.seed,
        ..FerlConfig::default()
    };
    println!("round beta_hat learned features theta gt_reward");
    for round in 0..a.rounds {
        let mid = traj.len() / 2;
        let mut delta = [0.0; 7];
        for (j, d) in delta.iter_mut().enumerate() {
            *d = target.waypoints[mid].0[j] - traj.waypoints[mid].0[j];
        }
        let correction = Correction { index: mid, delta };
        if correction.magnitude() < 1e-3 {
            println!("plan matches the true optimum, stopping");
            break;
        }
        let out = ferl_step(&model, &belief, &correction, &traj, &mut source, &cfg)
            .with_context(|| format!("round {round}"))?;
        model = out.model;
        belief = out.belief;
        traj = out.trajectory;
        println!(
            "{round} {:.4} {} {} {:?} {:.4}",
            out.beta_hat,
            out.learned_feature,
            model.features().len(),
            model.theta(),
            gt.reward_of(&traj)?
        );
    }
    fs::create_dir_all(&a.out).with_context(|| format!("create {}", a.out.display()))?;
    save_reward(a.out.join("reward.txt"), &model).context("write reward")?;
    write_trajectory(&a.out.join("trajectory.txt"), &traj, scene)?;
    Ok(())
}

fn write_trajectory(path: &Path, traj: &Trajectory, scene: &Scene) -> Result<()> {
    fs::write(path, trajectory_to_string(traj, scene)?).with_context(|| format!("write {}", path.display()))
}

fn experiment(a: ExperimentArgs, scene: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config).with_context(|| format!("read config {}", a.config.display()))?;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { cfg.$field = v; })* };
    }
    set!(kind, feature, task, seeds, traces, demos, max_traces, encoding, test_states, behavior_pairs, noise, epochs, meirl_iterations, output);
    if scene.is_some() {
        cfg.scene = scene;
    }
    let report = run_experiment(&cfg)?;
    println!("{} rows -> {}", report.rows.len(), cfg.output.display());
    Ok(())
}

fn serve(a: ServeArgs, scene: Scene) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().context("start runtime")?;
    println!("listening on http://{}", a.addr);
    rt.block_on(ferl_service::serve(a.addr, scene)).context("serve")
}

fn export_field(a: ExportFieldArgs, scene: &Scene) -> Result<()> {
    let net = load_net(&a.net).with_context(|| format!("read net {}", a.net.display()))?;
    let points = feature_field(&net, scene, a.samples, a.seed).context("sample field")?;
    let out = a.out.unwrap_or_else(|| a.net.with_extension("field"));
    fs::write(&out, field_to_string(&points)).with_context(|| format!("write {}", out.display()))?;
    println!("wrote {} points -> {}", points.len(), out.display());
    Ok(())
}
