//! Receding-horizon drives, Monte Carlo campaigns and their metrics.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ace::{evaluate_path, evaluate_pose, AceChecker, Pose, RoverGeometry, DEFAULT_CHECK_INTERVAL};
use crate::convnet::Network;
use crate::heuristic::{compute_oracle_ace_map, infer_ace_map_window, out_of_bounds_mask, AceMap, HeuristicError};
use crate::planner::{used_length, CostParams, Goal, PlanResult, Planner, RoughnessGrid};
use crate::terrain::{generate_terrain, Heightmap, TerrainClass, TerrainConfig, TerrainError};
use crate::tree::{Primitive, TrajectoryLibrary, TreeError, TreeSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    Config(String),
    #[error("start pose ({x:.2}, {y:.2}) is not feasible")]
    InvalidStart { x: f64, y: f64 },
    #[error("goal ({x:.2}, {y:.2}) lies outside the map")]
    GoalOutside { x: f64, y: f64 },
    #[error("learned planner requires a model")]
    MissingModel,
    #[error("campaign has no trials")]
    EmptyCampaign,
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error("malformed {what}: {reason}")]
    Malformed { what: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Baseline,
    MlnavOracle,
    MlnavLearned,
}

impl PlannerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Baseline => "baseline",
            PlannerKind::MlnavOracle => "mlnav_oracle",
            PlannerKind::MlnavLearned => "mlnav_learned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(PlannerKind::Baseline),
            "mlnav_oracle" => Some(PlannerKind::MlnavOracle),
            "mlnav_learned" => Some(PlannerKind::MlnavLearned),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub planner_kind: PlannerKind,
    pub tree_preset: String,
    pub cost_params: CostParams,
    pub geom: RoverGeometry,
    /// Meters.
    pub goal_tolerance: f64,
    pub max_cycles: usize,
    /// Tree layers executed per cycle. A leading turn-in-place layer is
    /// always executed together with the following layer.
    pub execute_layers: usize,
    /// Consecutive recovery turns allowed before giving up.
    pub max_recoveries: usize,
    /// Half side of the square window the learned map is inferred on each
    /// cycle; `None` means the tree horizon plus 0.5 m.
    pub learned_window_half: Option<f64>,
    /// Learned probabilities are binarized at this level before ranking;
    /// `None` ranks on raw probabilities.
    pub learned_threshold: Option<f64>,
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            planner_kind: PlannerKind::Baseline,
            tree_preset: "default".into(),
            cost_params: CostParams::default(),
            geom: RoverGeometry::default(),
            goal_tolerance: 0.5,
            max_cycles: 200,
            execute_layers: 1,
            max_recoveries: 3,
            learned_window_half: None,
            learned_threshold: Some(0.5),
            record_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.goal_tolerance > 0.0 && self.goal_tolerance.is_finite()) {
            return bad(format!("goal_tolerance must be > 0, got {}", self.goal_tolerance));
        }
        if self.max_cycles == 0 {
            return bad("max_cycles must be >= 1".into());
        }
        if self.execute_layers == 0 {
            return bad("execute_layers must be >= 1".into());
        }
        if let Some(t) = self.learned_threshold {
            if !(0.0..1.0).contains(&t) {
                return bad(format!("learned_threshold must lie in [0, 1), got {t}"));
            }
        }
        if let Some(h) = self.learned_window_half {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("learned_window_half must be > 0, got {h}"));
            }
        }
        self.cost_params.validate().map_err(|m| SimError::Config(format!("cost_params: {m}")))?;
        self.geom.validate().map_err(|e| SimError::Config(format!("geom: {e}")))?;
        TreeSpec::preset(&self.tree_preset)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Timeout,
    NoPathFound,
    SafetyViolation,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Timeout => "timeout",
            Outcome::NoPathFound => "no_path_found",
            Outcome::SafetyViolation => "safety_violation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "success" => Some(Outcome::Success),
            "timeout" => Some(Outcome::Timeout),
            "no_path_found" => Some(Outcome::NoPathFound),
            "safety_violation" => Some(Outcome::SafetyViolation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub ace_checks: usize,
    pub paths_evaluated: usize,
    /// Cost of the chosen leaf; infinite when none was feasible.
    pub chosen_cost: f64,
    pub overthink: bool,
    /// No leaf was feasible; a recovery turn was attempted.
    pub recovery: bool,
}

/// Geometry of one planning cycle, for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub pose: Pose,
    pub executed: Vec<[f64; 2]>,
    pub rejected: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub start: Pose,
    pub goal: [f64; 2],
    pub goal_tolerance: f64,
    pub cycles: Vec<CycleTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub outcome: Outcome,
    pub driven_length: f64,
    pub straight_line: f64,
    pub per_cycle: Vec<CycleStats>,
    pub final_pose: Pose,
    pub seed: u64,
    pub trace: Option<TrialTrace>,
}

impl TrialResult {
    pub fn cycles(&self) -> usize {
        self.per_cycle.len()
    }
}

/// Percentage of extra driving over the straight-line distance, floored at 0.
pub fn path_inefficiency(driven: f64, straight: f64) -> f64 {
    assert!(straight > 0.0, "straight-line distance must be positive");
    (100.0 * (driven - straight) / straight).max(0.0)
}

fn polyline(poses: &[Pose]) -> Vec<[f64; 2]> {
    poses.iter().map(|p| [(p.x * 1000.0).round() / 1000.0, (p.y * 1000.0).round() / 1000.0]).collect()
}

/// Turns tried when no leaf is feasible, in 22.5° steps.
fn recovery_turns() -> Vec<f64> {
    let mut v = Vec::with_capacity(16);
    for k in 1..=8 {
        v.push(k as f64 * PI / 8.0);
        if k < 8 {
            v.push(-(k as f64) * PI / 8.0);
        }
    }
    v
}

enum Provider {
    None,
    Oracle(AceMap),
    Learned { net: Network, mask: AceMap, half: f64 },
}

/// Drives from `start` towards `goal`, replanning every cycle and auditing
/// every executed pose with an independent checker pass. Deterministic:
/// `seed` is only recorded.
pub fn run_trial(
    map: &Heightmap,
    start: Pose,
    goal: (f64, f64),
    config: &SimConfig,
    model: Option<&Network>,
    seed: u64,
) -> Result<TrialResult, SimError> {
    config.validate()?;
    let geom = &config.geom;
    let params = &config.cost_params;
    if !map.contains(goal.0, goal.1) {
        return Err(SimError::GoalOutside { x: goal.0, y: goal.1 });
    }
    if !evaluate_pose(map, &start, geom).feasible {
        return Err(SimError::InvalidStart { x: start.x, y: start.y });
    }
    let goal = Goal::new(goal.0, goal.1, config.goal_tolerance);
    let straight_line = start.distance_to(goal.position());
    if straight_line <= 0.0 {
        return Err(SimError::Config("start coincides with goal".into()));
    }
    let spec = TreeSpec::preset(&config.tree_preset)?;
    let provider = match config.planner_kind {
        PlannerKind::Baseline => Provider::None,
        PlannerKind::MlnavOracle => Provider::Oracle(compute_oracle_ace_map(map, geom)),
        PlannerKind::MlnavLearned => Provider::Learned {
            net: model.ok_or(SimError::MissingModel)?.clone(),
            mask: out_of_bounds_mask(map, geom),
            half: config.learned_window_half.unwrap_or(spec.horizon() + 0.5),
        },
    };
    let roughness = (params.roughness_weight > 0.0).then(|| RoughnessGrid::new(map, RoughnessGrid::DEFAULT_RADIUS));
    let checker = AceChecker::new(map, geom);

    let mut pose = start;
    let mut driven = 0.0;
    let mut recoveries = 0usize;
    let mut per_cycle = Vec::new();
    let mut trace = config.record_trace.then(|| TrialTrace {
        start,
        goal: [goal.x, goal.y],
        goal_tolerance: goal.tolerance,
        cycles: Vec::new(),
    });
    let finish = |outcome, driven, per_cycle, pose, trace| TrialResult {
        outcome,
        driven_length: driven,
        straight_line,
        per_cycle,
        final_pose: pose,
        seed,
        trace,
    };

    for _ in 0..config.max_cycles {
        if goal.reached_by(&pose) {
            return Ok(finish(Outcome::Success, driven, per_cycle, pose, trace));
        }
        let lib = TrajectoryLibrary::build(&spec, pose, DEFAULT_CHECK_INTERVAL)?;
        let planner = Planner::new(&lib, goal, params, roughness.as_ref(), checker);
        let result: PlanResult = match &provider {
            Provider::None => planner.plan_baseline(),
            Provider::Oracle(ace) => planner.plan_mlnav(ace),
            Provider::Learned { net, mask, half } => {
                let mut ace = infer_ace_map_window(net, map, mask, (pose.x, pose.y), *half)?;
                if let Some(t) = config.learned_threshold {
                    ace = ace.binarized(t);
                }
                planner.plan_mlnav(&ace)
            }
        };
        let mut stats = CycleStats {
            ace_checks: result.ace_checks,
            paths_evaluated: result.paths_evaluated,
            chosen_cost: result.chosen_cost,
            overthink: result.overthink,
            recovery: false,
        };
        let (executed, length) = match result.chosen_leaf {
            Some(leaf) => {
                recoveries = 0;
                execution_prefix(&lib, &planner.effective_path(leaf).segments, config.execute_layers)
            }
            None => {
                stats.recovery = true;
                if recoveries >= config.max_recoveries {
                    per_cycle.push(stats);
                    return Ok(finish(Outcome::NoPathFound, driven, per_cycle, pose, trace));
                }
                recoveries += 1;
                let mut best: Option<(f64, Pose)> = None;
                for angle in recovery_turns() {
                    let turned = Pose::new(pose.x, pose.y, pose.heading + angle);
                    let r = evaluate_pose(map, &turned, geom);
                    stats.ace_checks += 1;
                    if r.feasible {
                        let cost = params.alpha * angle.abs() / params.turn_speed + params.beta * r.cost;
                        if best.is_none_or(|(c, _)| cost < c) {
                            best = Some((cost, turned));
                        }
                    }
                }
                stats.overthink = stats.ace_checks > params.overthink_checks;
                match best {
                    Some((_, turned)) => (vec![turned], 0.0),
                    None => {
                        per_cycle.push(stats);
                        return Ok(finish(Outcome::NoPathFound, driven, per_cycle, pose, trace));
                    }
                }
            }
        };
        per_cycle.push(stats);
        if let Some(t) = trace.as_mut() {
            let rejected = result
                .rejected_leaves
                .iter()
                .map(|&(leaf, _)| polyline(&planner.effective_samples(leaf)))
                .collect();
            let mut line = vec![pose];
            line.extend_from_slice(&executed);
            t.cycles.push(CycleTrace { pose, executed: polyline(&line), rejected });
        }
        // Independent audit of everything just driven.
        let audit = evaluate_path(map, &executed, geom, DEFAULT_CHECK_INTERVAL);
        if !matches!(audit, Ok(ref a) if a.feasible) {
            return Ok(finish(Outcome::SafetyViolation, driven, per_cycle, pose, trace));
        }
        driven += length;
        pose = *executed.last().expect("execution is never empty");
    }
    let outcome = if goal.reached_by(&pose) { Outcome::Success } else { Outcome::Timeout };
    Ok(finish(outcome, driven, per_cycle, pose, trace))
}

/// Samples and arc length of the first `layers` layers of an effective
/// path; a leading turn is merged with the next layer.
fn execution_prefix(lib: &TrajectoryLibrary, segments: &[(usize, usize)], layers: usize) -> (Vec<Pose>, f64) {
    let mut take = layers.min(segments.len());
    let leading_turns = segments.iter().take_while(|&&(id, _)| matches!(lib.node(id).primitive, Primitive::Turn { .. })).count();
    if take <= leading_turns && take < segments.len() {
        take = leading_turns + 1;
    }
    let mut samples = Vec::new();
    let mut length = 0.0;
    for &(id, used) in &segments[..take] {
        samples.extend_from_slice(&lib.node_samples(id)[..used]);
        length += used_length(lib, id, used);
    }
    (samples, length)
}

/// Per-class summary in percentages and means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub trials: usize,
    pub cycles: usize,
    pub success_rate: f64,
    /// Mean over successful trials; absent when none succeeded.
    pub path_inefficiency: Option<f64>,
    pub mean_collision_checks: f64,
    pub overthink_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub benign: Option<ClassMetrics>,
    pub complex: Option<ClassMetrics>,
    pub trials: usize,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn class(&self, class: TerrainClass) -> Option<&ClassMetrics> {
        match class {
            TerrainClass::Benign => self.benign.as_ref(),
            TerrainClass::Complex => self.complex.as_ref(),
        }
    }
}

/// The minimal per-trial record the metrics are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub outcome: Outcome,
    pub driven_length: f64,
    pub straight_line: f64,
    pub cycle_checks: Vec<usize>,
    pub cycle_overthink: Vec<bool>,
}

impl From<&TrialResult> for TrialSummary {
    fn from(t: &TrialResult) -> Self {
        Self {
            outcome: t.outcome,
            driven_length: t.driven_length,
            straight_line: t.straight_line,
            cycle_checks: t.per_cycle.iter().map(|c| c.ace_checks).collect(),
            cycle_overthink: t.per_cycle.iter().map(|c| c.overthink).collect(),
        }
    }
}

pub fn class_metrics(trials: &[&TrialSummary]) -> Option<ClassMetrics> {
    if trials.is_empty() {
        return None;
    }
    let n = trials.len();
    let successes: Vec<&&TrialSummary> = trials.iter().filter(|t| t.outcome == Outcome::Success).collect();
    let path_inefficiency = (!successes.is_empty()).then(|| {
        successes.iter().map(|t| path_inefficiency(t.driven_length, t.straight_line)).sum::<f64>() / successes.len() as f64
    });
    let cycles: usize = trials.iter().map(|t| t.cycle_checks.len()).sum();
    let checks: usize = trials.iter().flat_map(|t| &t.cycle_checks).sum();
    let overthinks = trials.iter().flat_map(|t| &t.cycle_overthink).filter(|&&o| o).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Some(ClassMetrics {
        trials: n,
        cycles,
        success_rate: 100.0 * ratio(successes.len(), n),
        path_inefficiency,
        mean_collision_checks: ratio(checks, cycles),
        overthink_rate: 100.0 * ratio(overthinks, cycles),
    })
}

/// Groups trials by terrain class. Empty classes are absent.
pub fn aggregate_metrics(trials: &[TrialSummary], class_labels: &[TerrainClass], config: serde_json::Value) -> MetricsReport {
    assert_eq!(trials.len(), class_labels.len(), "one class label per trial");
    let pick = |class| {
        let subset: Vec<&TrialSummary> = trials.iter().zip(class_labels).filter(|(_, &c)| c == class).map(|(t, _)| t).collect();
        class_metrics(&subset)
    };
    MetricsReport { benign: pick(TerrainClass::Benign), complex: pick(TerrainClass::Complex), trials: trials.len(), config }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignTrial {
    pub terrain: TerrainConfig,
    pub start: Pose,
    pub goal: [f64; 2],
    pub sim: SimConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Campaign {
    /// Weights stem for learned planners, relative to the campaign file.
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub trials: Vec<CampaignTrial>,
}

impl Campaign {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SimError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| SimError::Malformed { what: path.display().to_string(), reason: e.to_string() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("campaign serializes");
        fs::write(path, json).map_err(|source| SimError::Io { path: path.to_path_buf(), source })
    }
}

/// One row of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub planner: String,
    pub terrain_class: String,
    pub terrain_seed: u64,
    pub seed: u64,
    pub outcome: String,
    pub driven_length: f64,
    pub straight_line: f64,
    pub path_inefficiency: f64,
    pub cycles: usize,
    pub total_checks: usize,
    pub error: String,
}

/// One row of `cycles.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRow {
    pub trial: usize,
    pub cycle: usize,
    pub ace_checks: usize,
    pub paths_evaluated: usize,
    pub chosen_cost: f64,
    pub overthink: u8,
    pub recovery: u8,
}

/// Report over all planner kinds in a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub trials: usize,
    pub failed_trials: usize,
    pub safety_violations: usize,
    pub planners: BTreeMap<String, MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub report: CampaignReport,
    pub trials: Vec<TrialRow>,
    pub cycles: Vec<CycleRow>,
    pub results: Vec<Result<TrialResult, String>>,
}

fn run_campaign_trial(t: &CampaignTrial, model: Option<&Network>) -> Result<TrialResult, SimError> {
    let map = generate_terrain(&t.terrain)?;
    run_trial(&map, t.start, (t.goal[0], t.goal[1]), &t.sim, model, t.seed)
}

fn planner_echo(trials: &[&CampaignTrial]) -> serde_json::Value {
    let first = &trials[0].sim;
    serde_json::json!({
        "planner_kind": first.planner_kind,
        "tree_presets": trials.iter().map(|t| t.sim.tree_preset.clone()).collect::<std::collections::BTreeSet<_>>(),
        "min_ace_threshold": first.cost_params.min_ace_threshold,
        "overthink_checks": first.cost_params.overthink_checks,
        "goal_tolerance": first.goal_tolerance,
        "max_cycles": first.max_cycles,
        "execute_layers": first.execute_layers,
    })
}

/// Runs every trial on a pool of `parallelism` threads. Results, rows and
/// report depend only on the campaign, never on scheduling.
pub fn run_monte_carlo(campaign: &Campaign, model: Option<&Network>, parallelism: usize) -> Result<CampaignResult, SimError> {
    if campaign.trials.is_empty() {
        return Err(SimError::EmptyCampaign);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrialResult, String>> = pool.install(|| {
        campaign
            .trials
            .par_iter()
            .map(|t| run_campaign_trial(t, model).map_err(|e| e.to_string()))
            .collect()
    });
    Ok(assemble(campaign, results))
}

fn assemble(campaign: &Campaign, results: Vec<Result<TrialResult, String>>) -> CampaignResult {
    let mut trials = Vec::with_capacity(results.len());
    let mut cycles = Vec::new();
    for (i, (t, r)) in campaign.trials.iter().zip(&results).enumerate() {
        let class = t.terrain.class().as_str().to_string();
        let planner = t.sim.planner_kind.as_str().to_string();
        match r {
            Ok(res) => {
                trials.push(TrialRow {
                    trial: i,
                    planner,
                    terrain_class: class,
                    terrain_seed: t.terrain.rng_seed,
                    seed: t.seed,
                    outcome: res.outcome.as_str().into(),
                    driven_length: res.driven_length,
                    straight_line: res.straight_line,
                    path_inefficiency: path_inefficiency(res.driven_length, res.straight_line),
                    cycles: res.cycles(),
                    total_checks: res.per_cycle.iter().map(|c| c.ace_checks).sum(),
                    error: String::new(),
                });
                cycles.extend(res.per_cycle.iter().enumerate().map(|(k, c)| CycleRow {
                    trial: i,
                    cycle: k,
                    ace_checks: c.ace_checks,
                    paths_evaluated: c.paths_evaluated,
                    chosen_cost: c.chosen_cost,
                    overthink: c.overthink as u8,
                    recovery: c.recovery as u8,
                }));
            }
            Err(e) => trials.push(TrialRow {
                trial: i,
                planner,
                terrain_class: class,
                terrain_seed: t.terrain.rng_seed,
                seed: t.seed,
                outcome: "error".into(),
                driven_length: 0.0,
                straight_line: t.start.distance_to((t.goal[0], t.goal[1])),
                path_inefficiency: 0.0,
                cycles: 0,
                total_checks: 0,
                error: e.clone(),
            }),
        }
    }
    let mut report = report_from_rows(&trials, &cycles);
    for (name, m) in report.planners.iter_mut() {
        let subset: Vec<&CampaignTrial> = campaign.trials.iter().filter(|t| t.sim.planner_kind.as_str() == name).collect();
        if !subset.is_empty() {
            m.config = planner_echo(&subset);
        }
    }
    CampaignResult { report, trials, cycles, results }
}

/// Metrics straight from CSV rows. Errored trials are counted but excluded
/// from the metrics. `config` echoes are left null.
pub fn report_from_rows(trials: &[TrialRow], cycles: &[CycleRow]) -> CampaignReport {
    let mut by_trial: BTreeMap<usize, Vec<&CycleRow>> = BTreeMap::new();
    for c in cycles {
        by_trial.entry(c.trial).or_default().push(c);
    }
    let mut grouped: BTreeMap<String, (Vec<TrialSummary>, Vec<TerrainClass>)> = BTreeMap::new();
    let mut failed = 0;
    let mut violations = 0;
    for row in trials {
        let Some(outcome) = Outcome::parse(&row.outcome) else {
            failed += 1;
            continue;
        };
        if outcome == Outcome::SafetyViolation {
            violations += 1;
        }
        let mut cyc: Vec<&CycleRow> = by_trial.get(&row.trial).cloned().unwrap_or_default();
        cyc.sort_by_key(|c| c.cycle);
        let summary = TrialSummary {
            outcome,
            driven_length: row.driven_length,
            straight_line: row.straight_line,
            cycle_checks: cyc.iter().map(|c| c.ace_checks).collect(),
            cycle_overthink: cyc.iter().map(|c| c.overthink != 0).collect(),
        };
        let class = TerrainClass::parse(&row.terrain_class).unwrap_or(TerrainClass::Complex);
        let entry = grouped.entry(row.planner.clone()).or_default();
        entry.0.push(summary);
        entry.1.push(class);
    }
    let planners = grouped
        .into_iter()
        .map(|(name, (s, c))| (name, aggregate_metrics(&s, &c, serde_json::Value::Null)))
        .collect();
    CampaignReport { trials: trials.len(), failed_trials: failed, safety_violations: violations, planners }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SimError + '_ {
    move |source| SimError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> SimError + '_ {
    move |e| SimError::Malformed { what: path.display().to_string(), reason: e.to_string() }
}

pub fn write_rows<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<(), SimError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>, SimError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

impl CampaignResult {
    /// Writes `report.json`, `trials.csv` and `cycles.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes");
        fs::write(&path, json + "\n").map_err(io_err(&path))?;
        write_rows(&self.trials, dir.join("trials.csv"))?;
        write_rows(&self.cycles, dir.join("cycles.csv"))
    }
}

/// Settings for a generated campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskCampaign {
    pub benign: usize,
    pub complex: usize,
    pub planners: Vec<PlannerKind>,
    /// Straight-line start-to-goal distance, meters.
    pub goal_distance: f64,
    pub extent: f64,
    pub sim: SimConfig,
    pub seed: u64,
}

impl Default for DeskCampaign {
    fn default() -> Self {
        Self {
            benign: 50,
            complex: 50,
            planners: vec![PlannerKind::Baseline, PlannerKind::MlnavOracle],
            goal_distance: 16.0,
            extent: 20.0,
            sim: SimConfig::default(),
            seed: 0,
        }
    }
}

/// Builds a campaign where every planner kind drives the same terrains,
/// starts and goals. Start and goal sit symmetrically about the map center
/// in a random direction; terrains are redrawn until both end poses are
/// feasible.
pub fn desk_campaign(spec: &DeskCampaign) -> Result<Campaign, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trials = Vec::new();
    let classes = std::iter::repeat_n(TerrainClass::Benign, spec.benign).chain(std::iter::repeat_n(TerrainClass::Complex, spec.complex));
    for (i, class) in classes.enumerate() {
        let mut found = None;
        for _ in 0..100 {
            let terrain = TerrainConfig::sample(&mut rng, class, spec.extent);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let c = spec.extent / 2.0;
            let (dx, dy) = (phi.cos() * spec.goal_distance / 2.0, phi.sin() * spec.goal_distance / 2.0);
            let start = Pose::new(c - dx, c - dy, phi);
            let goal_pose = Pose::new(c + dx, c + dy, phi);
            let map = generate_terrain(&terrain)?;
            if evaluate_pose(&map, &start, &spec.sim.geom).feasible && evaluate_pose(&map, &goal_pose, &spec.sim.geom).feasible {
                found = Some((terrain, start, [goal_pose.x, goal_pose.y]));
                break;
            }
        }
        let (terrain, start, goal) = found.ok_or_else(|| SimError::Config(format!("no feasible layout for trial {i}")))?;
        for &kind in &spec.planners {
            trials.push(CampaignTrial {
                terrain: terrain.clone(),
                start,
                goal,
                sim: SimConfig { planner_kind: kind, ..spec.sim.clone() },
                seed: spec.seed.wrapping_add(i as u64),
            });
        }
    }
    Ok(Campaign { model: None, trials })
}
