//! `mlnav`: terrain generation, training data, training, single drives,
//! Monte Carlo campaigns, reports and renders.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 failed safety audit or report mismatch.

mod manifest;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use mlnav_core::convnet::{self, ModelWeights, Network, NetworkSpec, TrainConfig};
use mlnav_core::heuristic::{self, TrainingPair};
use mlnav_core::sim::{self, Campaign, CampaignReport, CycleRow, DeskCampaign, Outcome, PlannerKind, SimConfig, TrialResult, TrialRow};
use mlnav_core::{generate_terrain, Heightmap, Pose, RoverGeometry, TerrainConfig};

use manifest::Recorder;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("audit failure: {0}")]
    Audit(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Audit(_) => 4,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(name = "mlnav", version, about = "Learned-heuristic rover path planning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate heightmaps from a terrain config.
    Terrain(TerrainArgs),
    /// Build heightmap / collision-map training pairs.
    Dataset(DatasetArgs),
    /// Train the collision-map network on a dataset directory.
    Train(TrainArgs),
    /// Run a single receding-horizon drive.
    Drive(DriveArgs),
    /// Run a Monte Carlo campaign.
    Campaign(CampaignArgs),
    /// Recompute metrics from a trials CSV.
    Report(ReportArgs),
    /// Render a drive trace over its heightmap as SVG.
    Render(RenderArgs),
}

#[derive(Args)]
struct TerrainArgs {
    /// TerrainConfig JSON.
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Base seed; terrain `i` uses `seed + i`. Defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset spec JSON.
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs; overrides the spec's terrain count.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by `mlnav dataset`.
    dataset: PathBuf,
    /// Training hyperparameters JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DriveArgs {
    /// Drive spec JSON.
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CampaignArgs {
    /// Campaign JSON: an explicit trial list or a generator spec.
    campaign: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Overrides a generator spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// trials.csv; cycles.csv and report.json are read from beside it when present.
    trials: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Heightmap stem.
    map: PathBuf,
    /// trial.json written by `mlnav drive`.
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("parsing {}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, json + "\n").map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))
}

/// Resolves `p` against the directory of the file that referenced it.
fn relative_to(file: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn load_model(stem: &Path) -> Result<Network, CliError> {
    let w = ModelWeights::load(stem).map_err(|e| CliError::Config(format!("model {}: {e}", stem.display())))?;
    Network::from_weights(&w).map_err(|e| CliError::Config(e.to_string()))
}

fn cmd_terrain(args: TerrainArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("terrain");
    rec.config(&args.config);
    let base: TerrainConfig = read_json(&args.config)?;
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;
    make_dir(&args.out)?;
    let first = args.seed.unwrap_or(base.rng_seed);
    let mut seeds = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let cfg = TerrainConfig { rng_seed: first.wrapping_add(i as u64), ..base.clone() };
        let map = generate_terrain(&cfg).map_err(runtime)?;
        let stem = args.out.join(format!("terrain_{i:03}"));
        map.save(&stem).map_err(runtime)?;
        rec.output(stem.with_extension("json"));
        rec.output(stem.with_extension("f32"));
        seeds.push(cfg.rng_seed);
    }
    rec.seeds(serde_json::json!({ "terrain": seeds }));
    rec.write(&args.out)
}

/// Training-data generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct DatasetSpec {
    /// Explicit terrains; when absent `terrain_count` are sampled.
    terrains: Option<Vec<TerrainConfig>>,
    terrain_count: usize,
    samples_per_terrain: usize,
    extent: f64,
    geom: RoverGeometry,
    seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { terrains: None, terrain_count: 300, samples_per_terrain: 8, extent: 20.0, geom: RoverGeometry::default(), seed: 0 }
    }
}

fn cmd_dataset(args: DatasetArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("dataset");
    rec.config(&args.config);
    let mut spec: DatasetSpec = read_json(&args.config)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if spec.samples_per_terrain == 0 {
        return Err(CliError::Config("samples_per_terrain must be positive".into()));
    }
    if let Some(n) = args.pairs {
        spec.terrain_count = n.div_ceil(spec.samples_per_terrain);
    }
    let mut configs = spec
        .terrains
        .clone()
        .unwrap_or_else(|| heuristic::desk_terrain_configs(spec.terrain_count, spec.extent, spec.seed));
    if args.pairs.is_some() {
        configs.truncate(spec.terrain_count);
    }
    for (i, c) in configs.iter().enumerate() {
        c.validate().map_err(|e| CliError::Config(format!("terrain {i}: {e}")))?;
    }
    spec.geom.validate().map_err(|e| CliError::Config(format!("geom: {e}")))?;
    let mut pairs = heuristic::build_dataset(&configs, spec.samples_per_terrain, &spec.geom, spec.seed).map_err(|e| match e {
        heuristic::HeuristicError::TileTooLarge { .. } | heuristic::HeuristicError::NoConfigs => CliError::Config(e.to_string()),
        other => runtime(other),
    })?;
    if let Some(n) = args.pairs {
        pairs.truncate(n);
    }
    let dir = args.out.join("pairs");
    make_dir(&dir)?;
    heuristic::save_dataset(&pairs, &dir).map_err(runtime)?;
    rec.output(&dir);
    eprintln!(
        "{} pairs, infeasible fraction {:.3}",
        pairs.len(),
        heuristic::infeasible_fraction(&pairs)
    );
    rec.seeds(serde_json::json!({ "dataset": spec.seed }));
    rec.write(&args.out)
}

/// Splits by source terrain so validation tiles come from unseen terrain.
fn split_pairs(pairs: Vec<TrainingPair>) -> (Vec<convnet::Example>, Vec<convnet::Example>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for p in pairs {
        if p.meta.terrain_index % 5 == 4 {
            val.push(p.example);
        } else {
            train.push(p.example);
        }
    }
    (train, val)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("train");
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => {
            rec.config(p);
            read_json(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    rec.config(&args.dataset);
    let dir = if args.dataset.join("pairs").is_dir() { args.dataset.join("pairs") } else { args.dataset.clone() };
    let pairs = heuristic::load_dataset(&dir).map_err(|e| CliError::Config(e.to_string()))?;
    if pairs.is_empty() {
        return Err(CliError::Config(format!("no training pairs under {}", dir.display())));
    }
    let (train, val) = split_pairs(pairs);
    make_dir(&args.out)?;
    let outcome = convnet::train(&NetworkSpec::unet_small(), &train, &val, &cfg, |e| {
        eprintln!(
            "epoch {:3}  train {:.4}  val {:.4}  acc {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        )
    })
    .map_err(runtime)?;
    let stem = args.out.join("model");
    outcome.weights.save(&stem).map_err(runtime)?;
    let log = args.out.join("training_log.csv");
    convnet::write_training_log(&outcome.log, &log).map_err(runtime)?;
    rec.output(stem.with_extension("json"));
    rec.output(stem.with_extension("f32"));
    rec.output(log);
    rec.seeds(serde_json::json!({ "train": cfg.seed }));
    rec.write(&args.out)
}

/// A single drive: a saved map or a terrain config, start, goal and planner.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriveSpec {
    #[serde(default)]
    map: Option<PathBuf>,
    #[serde(default)]
    terrain: Option<TerrainConfig>,
    start: Pose,
    goal: [f64; 2],
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    model: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

fn cmd_drive(args: DriveArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("drive");
    rec.config(&args.config);
    let mut spec: DriveSpec = read_json(&args.config)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.sim.record_trace = true;
    spec.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let map = match (&spec.map, &spec.terrain) {
        (Some(p), None) => {
            let p = relative_to(&args.config, p);
            rec.config(&p);
            Heightmap::load(&p).map_err(|e| CliError::Config(format!("map {}: {e}", p.display())))?
        }
        (None, Some(cfg)) => {
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            generate_terrain(cfg).map_err(runtime)?
        }
        _ => return Err(CliError::Config("drive spec needs exactly one of `map` or `terrain`".into())),
    };
    let model = match (&spec.model, spec.sim.planner_kind) {
        (Some(p), _) => {
            let p = relative_to(&args.config, p);
            rec.config(&p);
            Some(load_model(&p)?)
        }
        (None, PlannerKind::MlnavLearned) => return Err(CliError::Config("mlnav_learned needs `model`".into())),
        (None, _) => None,
    };
    let start = Pose::new(spec.start.x, spec.start.y, spec.start.heading);
    let result = sim::run_trial(&map, start, (spec.goal[0], spec.goal[1]), &spec.sim, model.as_ref(), spec.seed).map_err(|e| match e {
        sim::SimError::InvalidStart { .. } | sim::SimError::GoalOutside { .. } | sim::SimError::Config(_) => CliError::Config(e.to_string()),
        other => runtime(other),
    })?;
    make_dir(&args.out)?;
    let map_stem = args.out.join("map");
    map.save(&map_stem).map_err(runtime)?;
    rec.output(map_stem.with_extension("json"));
    rec.output(map_stem.with_extension("f32"));
    let trial = args.out.join("trial.json");
    write_json(&result, &trial)?;
    rec.output(&trial);
    let svg_path = args.out.join("drive.svg");
    let trace = result.trace.as_ref().expect("trace was requested");
    fs::write(&svg_path, render::render_svg(&map, trace)).map_err(runtime)?;
    rec.output(&svg_path);
    rec.seeds(serde_json::json!({ "trial": spec.seed, "terrain": spec.terrain.as_ref().map(|t| t.rng_seed) }));
    println!(
        "{}: {} cycles, {:.2} m driven, {} checks",
        result.outcome.as_str(),
        result.cycles(),
        result.driven_length,
        result.per_cycle.iter().map(|c| c.ace_checks).sum::<usize>()
    );
    rec.write(&args.out)?;
    if result.outcome == Outcome::SafetyViolation {
        return Err(CliError::Audit("executed path failed the safety audit".into()));
    }
    Ok(())
}

fn cmd_campaign(args: CampaignArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("campaign");
    rec.config(&args.campaign);
    let raw: serde_json::Value = read_json(&args.campaign)?;
    let parse = |e: serde_json::Error| CliError::Config(format!("parsing {}: {e}", args.campaign.display()));
    let generator_model = raw.get("model").and_then(|v| v.as_str()).map(PathBuf::from);
    let mut campaign: Campaign = if raw.get("trials").is_some() {
        serde_json::from_value(raw).map_err(parse)?
    } else {
        let mut spec: DeskCampaign = serde_json::from_value(raw).map_err(parse)?;
        if let Some(s) = args.seed {
            spec.seed = s;
        }
        rec.seeds(serde_json::json!({ "campaign": spec.seed }));
        let mut c = sim::desk_campaign(&spec).map_err(runtime)?;
        c.model = generator_model;
        c
    };
    if campaign.trials.is_empty() {
        return Err(CliError::Config("campaign has no trials".into()));
    }
    for (i, t) in campaign.trials.iter().enumerate() {
        t.terrain.validate().map_err(|e| CliError::Config(format!("trial {i}: {e}")))?;
        t.sim.validate().map_err(|e| CliError::Config(format!("trial {i}: {e}")))?;
    }
    if let Some(p) = campaign.model.take() {
        campaign.model = Some(relative_to(&args.campaign, &p));
    }
    let model = match &campaign.model {
        Some(p) => {
            rec.config(p);
            Some(load_model(p)?)
        }
        None if campaign.trials.iter().any(|t| t.sim.planner_kind == PlannerKind::MlnavLearned) => {
            return Err(CliError::Config("mlnav_learned trials need a `model`".into()))
        }
        None => None,
    };
    make_dir(&args.out)?;
    let result = sim::run_monte_carlo(&campaign, model.as_ref(), args.parallelism).map_err(runtime)?;
    result.write(&args.out).map_err(runtime)?;
    let resolved = args.out.join("campaign.json");
    campaign.save(&resolved).map_err(runtime)?;
    for f in ["report.json", "trials.csv", "cycles.csv"] {
        rec.output(args.out.join(f));
    }
    rec.output(resolved);
    for (name, m) in &result.report.planners {
        for (class, c) in [("benign", &m.benign), ("complex", &m.complex)] {
            if let Some(c) = c {
                println!(
                    "{name:14} {class:8} n={:3} success {:5.1}%  inefficiency {:>6}  checks {:7.1}  overthink {:5.1}%",
                    c.trials,
                    c.success_rate,
                    c.path_inefficiency.map_or("-".into(), |v| format!("{v:.1}%")),
                    c.mean_collision_checks,
                    c.overthink_rate
                );
            }
        }
    }
    rec.write(&args.out)?;
    if result.report.failed_trials > 0 {
        eprintln!("{} trials failed to run; see trials.csv", result.report.failed_trials);
    }
    if result.report.safety_violations > 0 {
        return Err(CliError::Audit(format!("{} trials violated safety", result.report.safety_violations)));
    }
    Ok(())
}

/// Drops config echoes, which CSV rows do not carry.
fn metrics_only(mut report: CampaignReport) -> CampaignReport {
    for m in report.planners.values_mut() {
        m.config = serde_json::Value::Null;
    }
    report
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("report");
    rec.config(&args.trials);
    let trials: Vec<TrialRow> = sim::read_rows(&args.trials).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = args.trials.parent().unwrap_or(Path::new("."));
    let cycles_path = dir.join("cycles.csv");
    let cycles: Vec<CycleRow> = if cycles_path.is_file() {
        rec.config(&cycles_path);
        sim::read_rows(&cycles_path).map_err(|e| CliError::Config(e.to_string()))?
    } else {
        Vec::new()
    };
    let report = sim::report_from_rows(&trials, &cycles);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    let bundled_path = dir.join("report.json");
    let bundled: Option<CampaignReport> = if bundled_path.is_file() { Some(read_json(&bundled_path)?) } else { None };
    if let Some(out) = &args.out {
        make_dir(out)?;
        let path = out.join("report.json");
        if path == bundled_path || fs::canonicalize(out).ok() == fs::canonicalize(dir).ok() {
            return Err(CliError::Config("--out must differ from the input directory".into()));
        }
        write_json(&report, &path)?;
        rec.output(&path);
        rec.write(out)?;
    }
    if let Some(b) = bundled {
        if metrics_only(b) != report {
            return Err(CliError::Audit(format!("{} disagrees with metrics recomputed from CSV", bundled_path.display())));
        }
        eprintln!("matches {}", bundled_path.display());
    }
    Ok(())
}

/// Accepts either a full trial result or a bare trace.
#[derive(Deserialize)]
#[serde(untagged)]
enum TraceFile {
    Trial(Box<TrialResult>),
    Trace(sim::TrialTrace),
}

fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    let mut rec = Recorder::start("render");
    rec.config(&args.map);
    rec.config(&args.trace);
    let map = Heightmap::load(&args.map).map_err(|e| CliError::Config(format!("map {}: {e}", args.map.display())))?;
    let trace = match read_json::<TraceFile>(&args.trace)? {
        TraceFile::Trial(t) => t.trace.ok_or_else(|| CliError::Config("trial has no trace".into()))?,
        TraceFile::Trace(t) => t,
    };
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    make_dir(&dir)?;
    fs::write(&args.out, render::render_svg(&map, &trace)).map_err(runtime)?;
    rec.output(&args.out);
    rec.write(&dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Terrain(a) => cmd_terrain(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Drive(a) => cmd_drive(a),
        Command::Campaign(a) => cmd_campaign(a),
        Command::Report(a) => cmd_report(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mlnav: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
