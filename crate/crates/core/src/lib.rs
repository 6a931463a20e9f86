//! Rover path planning with a learned proxy collision heuristic.
//!
//! A trajectory library ([`tree`]) is ranked by cheap time-to-goal costs,
//! optionally reordered by an 8-heading collision probability map
//! ([`heuristic`]), and verified from the top by an expensive clearance
//! checker ([`ace`]) under a check budget ([`planner`]). [`sim`] drives the
//! planner in a receding-horizon loop over synthetic terrain ([`terrain`])
//! and aggregates Monte Carlo metrics; [`convnet`] is the small
//! encoder-decoder network behind the learned heuristic.

pub mod ace;
pub mod convnet;
pub mod heuristic;
pub mod planner;
pub mod sim;
pub mod terrain;
pub mod tree;

pub use ace::{evaluate_path, evaluate_pose, AceChecker, AceResult, PathAceResult, Pose, PoseChecker, RoverGeometry};
pub use convnet::{ModelWeights, Network, NetworkSpec, Tensor4};
pub use heuristic::{compute_oracle_ace_map, infer_ace_map, AceMap, TrainingPair};
pub use planner::{c_goal, exhaustive_plan, plan_baseline, plan_mlnav, CostParams, Goal, PlanResult, Planner};
pub use sim::{run_monte_carlo, run_trial, Campaign, MetricsReport, Outcome, PlannerKind, SimConfig, TrialResult};
pub use terrain::{generate_terrain, Heightmap, Rock, TerrainClass, TerrainConfig};
pub use tree::{build_tree, LayerSpec, PathNode, TrajectoryLibrary, TreeSpec};
