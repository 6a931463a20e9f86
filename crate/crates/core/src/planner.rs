//! Budgeted greedy search over a trajectory library.
//!
//! Leaves are ranked by a cheap cost (time to goal, optionally plus a proxy
//! collision heuristic), then verified with the clearance checker from the
//! top of the ranking. The search stops once a feasible leaf has been found
//! and the check budget floor is met. Shared tree prefixes are checked once
//! per planning cycle.

use serde::{Deserialize, Serialize};

use crate::ace::{AceChecker, PoseChecker, Pose, RoverGeometry};
use crate::terrain::Heightmap;
use crate::tree::{NodeId, Primitive, TrajectoryLibrary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Weight on the time-to-goal cost.
    pub alpha: f64,
    /// Weight on the checker's finite risk cost when choosing among verified leaves.
    pub beta: f64,
    /// Weight on the proxy heuristic when ranking leaves.
    pub beta_proxy: f64,
    /// m/s
    pub drive_speed: f64,
    /// rad/s
    pub turn_speed: f64,
    /// Seconds per meter of local height deviation.
    pub roughness_weight: f64,
    /// Checks that must be spent before the search may stop on a feasible leaf.
    pub min_ace_threshold: usize,
    /// A cycle "overthinks" when it spends more checks than this. Kept apart
    /// from `min_ace_threshold` so runs with a zero floor stay comparable.
    pub overthink_checks: usize,
    /// Hard ceiling on checks per cycle; `None` means 4× the threshold, or
    /// unlimited when the threshold is 0.
    pub max_ace_checks: Option<usize>,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 10.0,
            beta_proxy: 1e6,
            drive_speed: 0.04,
            turn_speed: 0.05,
            roughness_weight: 500.0,
            min_ace_threshold: 275,
            overthink_checks: 275,
            max_ace_checks: None,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("beta_proxy", self.beta_proxy), ("roughness_weight", self.roughness_weight)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [("drive_speed", self.drive_speed), ("turn_speed", self.turn_speed)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn hard_cap(&self) -> usize {
        match self.max_ace_checks {
            Some(cap) => cap,
            None if self.min_ace_threshold == 0 => usize::MAX,
            None => self.min_ace_threshold.saturating_mul(4),
        }
    }
}

/// Goal position. Sampled poses within `tolerance` count as arriving: the
/// rest of such a path is never driven, so it is neither costed nor checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub x: f64,
    pub y: f64,
    pub tolerance: f64,
}

impl Goal {
    pub fn new(x: f64, y: f64, tolerance: f64) -> Self {
        Self { x, y, tolerance }
    }

    /// A goal that is only reached by passing exactly through it.
    pub fn point(x: f64, y: f64) -> Self {
        Self { x, y, tolerance: 0.0 }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn reached_by(&self, pose: &Pose) -> bool {
        pose.distance_to(self.position()) <= self.tolerance
    }
}

/// Local terrain roughness: standard deviation of height residuals from a
/// least-squares plane over a square window around each cell.
#[derive(Debug, Clone)]
pub struct RoughnessGrid {
    cols: usize,
    rows: usize,
    resolution: f64,
    origin: (f64, f64),
    values: Vec<f32>,
}

impl RoughnessGrid {
    pub const DEFAULT_RADIUS: usize = 2;

    pub fn new(map: &Heightmap, radius: usize) -> Self {
        let (cols, rows) = (map.width_cells(), map.height_cells());
        let r = radius as isize;
        let mut values = vec![0.0f32; cols * rows];
        for row in 0..rows {
            for col in 0..cols {
                let (mut n, mut sz, mut sx, mut sy, mut sxx, mut syy, mut sxz, mut syz, mut szz) =
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    let rr = row as isize + dy;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let cc = col as isize + dx;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        let z = map.cell(cc as usize, rr as usize);
                        let (x, y) = (dx as f64, dy as f64);
                        n += 1.0;
                        sz += z;
                        sx += x;
                        sy += y;
                        sxx += x * x;
                        syy += y * y;
                        sxz += x * z;
                        syz += y * z;
                        szz += z * z;
                    }
                }
                // Centered regressors; clipped windows are not symmetric.
                let (mx, my, mz) = (sx / n, sy / n, sz / n);
                let vxx = sxx - n * mx * mx;
                let vyy = syy - n * my * my;
                let vzz = szz - n * mz * mz;
                let cxz = sxz - n * mx * mz;
                let cyz = syz - n * my * mz;
                let mut explained = 0.0;
                if vxx > 0.0 {
                    explained += cxz * cxz / vxx;
                }
                if vyy > 0.0 {
                    explained += cyz * cyz / vyy;
                }
                values[row * cols + col] = ((vzz - explained).max(0.0) / n).sqrt() as f32;
            }
        }
        Self { cols, rows, resolution: map.resolution(), origin: map.origin(), values }
    }

    /// Nearest-cell roughness; points off the grid clamp to the border.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let c = ((x - self.origin.0) / self.resolution).round().clamp(0.0, (self.cols - 1) as f64) as usize;
        let r = ((y - self.origin.1) / self.resolution).round().clamp(0.0, (self.rows - 1) as f64) as usize;
        self.values[r * self.cols + c] as f64
    }
}

/// A per-pose proxy collision probability, queried in constant time.
pub trait ProxyHeuristic {
    fn proxy(&self, pose: &Pose) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Infeasible,
    OutOfBounds,
    /// Verified feasible but another leaf had lower cost.
    NotSelected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub chosen_leaf: Option<NodeId>,
    /// `alpha·c_goal + beta·risk` of the chosen leaf; infinite when none.
    pub chosen_cost: f64,
    pub ace_checks: usize,
    pub paths_evaluated: usize,
    pub rejected_leaves: Vec<(NodeId, RejectReason)>,
    pub overthink: bool,
}

/// The part of a leaf's path that would actually be driven.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePath {
    /// `(node, samples used from that node)`, root excluded.
    pub segments: Vec<(NodeId, usize)>,
    pub reaches_goal: bool,
}

/// Cheap per-node quantities shared by all leaves below a node.
struct NodeTable {
    /// First sample of the node's own primitive within goal tolerance.
    goal_sample: Vec<Option<usize>>,
    /// Prefix sums of roughness over each node's samples.
    rough_prefix: Vec<Vec<f64>>,
}

impl NodeTable {
    fn build(lib: &TrajectoryLibrary, goal: &Goal, roughness: Option<&RoughnessGrid>, nodes: impl Iterator<Item = NodeId>) -> Self {
        let n = lib.node_count();
        let mut goal_sample = vec![None; n];
        let mut rough_prefix = vec![Vec::new(); n];
        for id in nodes {
            let samples = lib.node_samples(id);
            goal_sample[id] = samples.iter().position(|p| goal.reached_by(p));
            let mut acc = 0.0;
            let mut prefix = Vec::with_capacity(samples.len() + 1);
            prefix.push(0.0);
            for p in samples {
                acc += roughness.map_or(0.0, |g| g.at(p.x, p.y));
                prefix.push(acc);
            }
            rough_prefix[id] = prefix;
        }
        Self { goal_sample, rough_prefix }
    }
}

fn effective_path(lib: &TrajectoryLibrary, goal_sample: &[Option<usize>], leaf: NodeId) -> EffectivePath {
    let mut segments = Vec::with_capacity(lib.depth());
    for id in lib.ancestry(leaf) {
        if let Some(k) = goal_sample[id] {
            segments.push((id, k + 1));
            return EffectivePath { segments, reaches_goal: true };
        }
        segments.push((id, lib.node_samples(id).len()));
    }
    EffectivePath { segments, reaches_goal: false }
}

/// Arc length covered by the first `used` samples of a node.
pub(crate) fn used_length(lib: &TrajectoryLibrary, id: NodeId, used: usize) -> f64 {
    match lib.node(id).primitive {
        Primitive::Arc { length, .. } => {
            if used >= lib.node_samples(id).len() {
                length
            } else {
                (used as f64 * lib.interval()).min(length)
            }
        }
        _ => 0.0,
    }
}

fn goal_cost(lib: &TrajectoryLibrary, table: &NodeTable, goal: &Goal, params: &CostParams, leaf: NodeId) -> f64 {
    let path = effective_path(lib, &table.goal_sample, leaf);
    let (mut length, mut turn, mut rough, mut count) = (0.0, 0.0, 0.0, 0usize);
    for &(id, used) in &path.segments {
        length += used_length(lib, id, used);
        if let Primitive::Turn { angle } = lib.node(id).primitive {
            turn += angle.abs();
        }
        rough += table.rough_prefix[id][used];
        count += used;
    }
    let to_go = if path.reaches_goal {
        0.0
    } else {
        lib.node(leaf).end_pose.distance_to(goal.position())
    };
    let mean_rough = if count > 0 { rough / count as f64 } else { 0.0 };
    (length + to_go) / params.drive_speed + turn / params.turn_speed + params.roughness_weight * mean_rough
}

/// Time-to-goal cost of a single leaf: traversal time, turning time,
/// straight-line time from the leaf end to the goal and a roughness penalty.
pub fn c_goal(lib: &TrajectoryLibrary, leaf: NodeId, goal: &Goal, map: &Heightmap, params: &CostParams) -> f64 {
    let grid = (params.roughness_weight > 0.0).then(|| RoughnessGrid::new(map, RoughnessGrid::DEFAULT_RADIUS));
    let table = NodeTable::build(lib, goal, grid.as_ref(), lib.ancestry(leaf).into_iter());
    goal_cost(lib, &table, goal, params, leaf)
}

#[derive(Debug, Clone, Default)]
struct NodeCheck {
    costs: Vec<f64>,
    failed: bool,
    out_of_bounds: bool,
}

enum LeafVerdict {
    Feasible(f64),
    Rejected(RejectReason),
    /// The check limit was reached part way through the leaf.
    Interrupted,
}

/// Planning for one cycle from a built library.
pub struct Planner<'a, C> {
    lib: &'a TrajectoryLibrary,
    goal: Goal,
    params: &'a CostParams,
    checker: C,
    table: NodeTable,
    goal_costs: Vec<f64>,
}

impl<'a, C: PoseChecker> Planner<'a, C> {
    pub fn new(
        lib: &'a TrajectoryLibrary,
        goal: Goal,
        params: &'a CostParams,
        roughness: Option<&RoughnessGrid>,
        checker: C,
    ) -> Self {
        let roughness = if params.roughness_weight > 0.0 { roughness } else { None };
        let table = NodeTable::build(lib, &goal, roughness, 0..lib.node_count());
        let goal_costs = lib.leaves().iter().map(|&l| goal_cost(lib, &table, &goal, params, l)).collect();
        Self { lib, goal, params, checker, table, goal_costs }
    }

    pub fn checker(&self) -> &C {
        &self.checker
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    /// `c_goal` of every leaf, in library leaf order.
    pub fn goal_costs(&self) -> &[f64] {
        &self.goal_costs
    }

    pub fn effective_path(&self, leaf: NodeId) -> EffectivePath {
        effective_path(self.lib, &self.table.goal_sample, leaf)
    }

    /// Sampled poses of the driven part of a leaf's path.
    pub fn effective_samples(&self, leaf: NodeId) -> Vec<Pose> {
        self.effective_path(leaf)
            .segments
            .iter()
            .flat_map(|&(id, used)| self.lib.node_samples(id)[..used].iter().copied())
            .collect()
    }

    /// Proxy cost of every leaf: the heuristic summed over driven samples.
    pub fn proxy_costs<H: ProxyHeuristic + ?Sized>(&self, heuristic: &H) -> Vec<f64> {
        let mut prefix: Vec<Vec<f64>> = vec![Vec::new(); self.lib.node_count()];
        for (id, slot) in prefix.iter_mut().enumerate().skip(1) {
            let mut acc = 0.0;
            slot.push(0.0);
            for p in self.lib.node_samples(id) {
                acc += heuristic.proxy(p);
                slot.push(acc);
            }
        }
        self.lib
            .leaves()
            .iter()
            .map(|&leaf| self.effective_path(leaf).segments.iter().map(|&(id, used)| prefix[id][used]).sum())
            .collect()
    }

    /// Leaf positions sorted ascending by key, ties by leaf index.
    fn order_by(keys: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
        order
    }

    /// Baseline ordering: ascending `c_goal`.
    pub fn plan_baseline(&self) -> PlanResult {
        let order = Self::order_by(&self.goal_costs);
        self.greedy(&order, false)
    }

    /// MLNav ordering: ascending `alpha·c_goal + beta_proxy·proxy`.
    pub fn plan_mlnav<H: ProxyHeuristic + ?Sized>(&self, heuristic: &H) -> PlanResult {
        let proxy = self.proxy_costs(heuristic);
        let keys: Vec<f64> = self
            .goal_costs
            .iter()
            .zip(&proxy)
            .map(|(g, p)| self.params.alpha * g + self.params.beta_proxy * p)
            .collect();
        let order = Self::order_by(&keys);
        self.greedy(&order, false)
    }

    /// Verifies every leaf and returns the global optimum.
    pub fn exhaustive_plan(&self) -> PlanResult {
        let order: Vec<usize> = (0..self.lib.leaf_count()).collect();
        self.greedy(&order, true)
    }

    fn verify(&self, leaf: NodeId, cache: &mut [NodeCheck], checks: &mut usize, limit: usize) -> LeafVerdict {
        let mut risk = 0.0;
        for (id, used) in self.effective_path(leaf).segments {
            let state = &mut cache[id];
            let samples = self.lib.node_samples(id);
            while state.costs.len() < used && !state.failed {
                if *checks >= limit {
                    return LeafVerdict::Interrupted;
                }
                let r = self.checker.check(&samples[state.costs.len()]);
                *checks += 1;
                if r.feasible {
                    state.costs.push(r.cost);
                } else {
                    state.failed = true;
                    state.out_of_bounds = r.out_of_bounds;
                }
            }
            if state.costs.len() < used {
                return LeafVerdict::Rejected(if state.out_of_bounds {
                    RejectReason::OutOfBounds
                } else {
                    RejectReason::Infeasible
                });
            }
            risk += state.costs[..used].iter().sum::<f64>();
        }
        LeafVerdict::Feasible(risk)
    }

    fn greedy(&self, order: &[usize], exhaustive: bool) -> PlanResult {
        let leaves = self.lib.leaves();
        let threshold = self.params.min_ace_threshold;
        let cap = self.params.hard_cap();
        let mut cache = vec![NodeCheck::default(); self.lib.node_count()];
        let mut checks = 0usize;
        let mut evaluated = 0usize;
        let mut best: Option<(usize, f64)> = None;
        let mut feasible_seen = Vec::new();
        let mut rejected = Vec::new();
        for &pos in order {
            if !exhaustive {
                let budget_met = best.is_some() && checks >= threshold;
                if budget_met || checks >= cap {
                    break;
                }
            }
            let leaf = leaves[pos];
            evaluated += 1;
            // The budget is enforced per check, so a cycle ends exactly at
            // the threshold once a feasible leaf is in hand.
            let limit = match (exhaustive, best) {
                (true, _) => usize::MAX,
                (false, Some(_)) => threshold.min(cap),
                (false, None) => cap,
            };
            match self.verify(leaf, &mut cache, &mut checks, limit) {
                LeafVerdict::Feasible(risk) => {
                    let total = self.params.alpha * self.goal_costs[pos] + self.params.beta * risk;
                    let better = match best {
                        None => true,
                        Some((bp, bc)) => total < bc || (total == bc && pos < bp),
                    };
                    if better {
                        best = Some((pos, total));
                    }
                    feasible_seen.push(pos);
                }
                LeafVerdict::Rejected(reason) => rejected.push((leaf, reason)),
                LeafVerdict::Interrupted => break,
            }
        }
        for pos in feasible_seen {
            if best.map(|(bp, _)| bp) != Some(pos) {
                rejected.push((leaves[pos], RejectReason::NotSelected));
            }
        }
        PlanResult {
            chosen_leaf: best.map(|(pos, _)| leaves[pos]),
            chosen_cost: best.map_or(f64::INFINITY, |(_, c)| c),
            ace_checks: checks,
            paths_evaluated: evaluated,
            rejected_leaves: rejected,
            overthink: checks > self.params.overthink_checks,
        }
    }
}

fn roughness_for(map: &Heightmap, params: &CostParams) -> Option<RoughnessGrid> {
    (params.roughness_weight > 0.0).then(|| RoughnessGrid::new(map, RoughnessGrid::DEFAULT_RADIUS))
}

pub fn plan_baseline(lib: &TrajectoryLibrary, map: &Heightmap, goal: Goal, geom: &RoverGeometry, params: &CostParams) -> PlanResult {
    let grid = roughness_for(map, params);
    Planner::new(lib, goal, params, grid.as_ref(), AceChecker::new(map, geom)).plan_baseline()
}

pub fn plan_mlnav<H: ProxyHeuristic + ?Sized>(
    lib: &TrajectoryLibrary,
    heuristic: &H,
    map: &Heightmap,
    goal: Goal,
    geom: &RoverGeometry,
    params: &CostParams,
) -> PlanResult {
    let grid = roughness_for(map, params);
    Planner::new(lib, goal, params, grid.as_ref(), AceChecker::new(map, geom)).plan_mlnav(heuristic)
}

pub fn exhaustive_plan(lib: &TrajectoryLibrary, map: &Heightmap, goal: Goal, geom: &RoverGeometry, params: &CostParams) -> PlanResult {
    let grid = roughness_for(map, params);
    Planner::new(lib, goal, params, grid.as_ref(), AceChecker::new(map, geom)).exhaustive_plan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, LayerSpec, TreeSpec};

    #[test]
    fn c_goal_straight_leaf_arithmetic() {
        let map = Heightmap::flat(300, 200, 0.1, 0.0);
        let spec = TreeSpec { layers: vec![LayerSpec::arc(1, 3.0), LayerSpec::arc(1, 3.0)] };
        let lib = build_tree(&spec, Pose::new(2.0, 10.0, 0.0)).unwrap();
        let params = CostParams { drive_speed: 0.04, ..CostParams::default() };
        let goal = Goal::point(18.0, 10.0);
        let c = c_goal(&lib, lib.leaves()[0], &goal, &map, &params);
        assert!((c - 400.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn c_goal_counts_turning_time() {
        let map = Heightmap::flat(300, 200, 0.1, 0.0);
        let spec = TreeSpec { layers: vec![LayerSpec::turn(2), LayerSpec::arc(1, 3.0)] };
        let lib = build_tree(&spec, Pose::new(10.0, 10.0, 0.0)).unwrap();
        let params = CostParams { roughness_weight: 0.0, ..CostParams::default() };
        let goal = Goal::point(13.0, 10.0);
        // Leaf 1 turns by π and drives 3 m away: 3/0.04 + π/0.05 + 6/0.04.
        let c = c_goal(&lib, lib.leaves()[1], &goal, &map, &params);
        let expected = 225.0 + std::f64::consts::PI / 0.05;
        assert!((c - expected).abs() < 1e-9);
    }

    #[test]
    fn goal_truncates_path() {
        let map = Heightmap::flat(300, 200, 0.1, 0.0);
        let spec = TreeSpec { layers: vec![LayerSpec::arc(1, 3.0), LayerSpec::arc(1, 3.0)] };
        let lib = build_tree(&spec, Pose::new(2.0, 10.0, 0.0)).unwrap();
        let params = CostParams::default();
        let geom = RoverGeometry::default();
        let goal = Goal::new(6.5, 10.0, 0.3);
        let planner = Planner::new(&lib, goal, &params, None, AceChecker::new(&map, &geom));
        let leaf = lib.leaves()[0];
        let path = planner.effective_path(leaf);
        assert!(path.reaches_goal);
        // First sample within 0.3 m of x = 6.5 is x = 6.25, the 5th sample of the second arc.
        assert_eq!(path.segments.last().unwrap().1, 5);
        assert!((planner.goal_costs()[0] - 4.25 / 0.04).abs() < 1e-9);
        let r = planner.plan_baseline();
        assert_eq!(r.ace_checks, 17);
    }

    #[test]
    fn rough_terrain_costs_more() {
        let smooth = Heightmap::flat(100, 100, 0.1, 0.0);
        let rough = Heightmap::from_fn(100, 100, 0.1, (0.0, 0.0), |x, y| 0.05 * ((x * 31.0).sin() * (y * 17.0).cos()));
        let lib = build_tree(&TreeSpec { layers: vec![LayerSpec::arc(1, 3.0)] }, Pose::new(3.0, 5.0, 0.0)).unwrap();
        let params = CostParams::default();
        let goal = Goal::point(9.0, 5.0);
        let a = c_goal(&lib, lib.leaves()[0], &goal, &smooth, &params);
        let b = c_goal(&lib, lib.leaves()[0], &goal, &rough, &params);
        assert!(b > a);
        let no_rough = CostParams { roughness_weight: 0.0, ..params };
        assert_eq!(c_goal(&lib, lib.leaves()[0], &goal, &rough, &no_rough), a);
    }

    #[test]
    fn roughness_of_a_plane_is_zero() {
        let map = Heightmap::from_fn(20, 20, 0.125, (0.0, 0.0), |x, y| 0.5 * x - 0.25 * y);
        let grid = RoughnessGrid::new(&map, 2);
        assert!(grid.values.iter().all(|&v| v.abs() < 1e-5));
    }

    #[test]
    fn hard_cap_rules() {
        let mut p = CostParams::default();
        assert_eq!(p.hard_cap(), 1100);
        p.min_ace_threshold = 0;
        assert_eq!(p.hard_cap(), usize::MAX);
        p.min_ace_threshold = usize::MAX;
        assert_eq!(p.hard_cap(), usize::MAX);
        p.max_ace_checks = Some(10);
        assert_eq!(p.hard_cap(), 10);
    }

    #[test]
    fn flat_terrain_threshold_zero_evaluates_one_path() {
        let map = Heightmap::flat(200, 200, 0.1, 0.0);
        let lib = build_tree(&TreeSpec::default_tree(), Pose::new(5.0, 10.0, 0.0)).unwrap();
        let params = CostParams { min_ace_threshold: 0, ..CostParams::default() };
        let r = plan_baseline(&lib, &map, Goal::point(18.0, 10.0), &RoverGeometry::default(), &params);
        assert_eq!(r.paths_evaluated, 1);
        assert_eq!(r.ace_checks, 25);
        assert!(!r.overthink);
    }

    #[test]
    fn flat_terrain_spends_the_budget_floor() {
        let map = Heightmap::flat(200, 200, 0.1, 0.0);
        let lib = build_tree(&TreeSpec::default_tree(), Pose::new(5.0, 10.0, 0.0)).unwrap();
        let params = CostParams::default();
        let r = plan_baseline(&lib, &map, Goal::point(18.0, 10.0), &RoverGeometry::default(), &params);
        assert_eq!(r.ace_checks, 275);
        assert!(r.chosen_leaf.is_some());
    }
}
