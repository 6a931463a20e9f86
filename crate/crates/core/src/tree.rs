//! Trajectory libraries: trees of turn-in-place nodes followed by
//! fixed-curvature arcs, with closed-form rollout and pose sampling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ace::{Pose, DEFAULT_CHECK_INTERVAL};

pub const DEFAULT_MAX_CURVATURE: f64 = 0.4;

// Curvatures below this are rolled out as straight segments.
const STRAIGHT_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("tree spec has no layers")]
    NoLayers,
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("sample interval must be > 0, got {0}")]
    InvalidInterval(f64),
    #[error("unknown tree preset {0:?} (expected default, bt, dt or vlt)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `count` headings. With `max_angle >= π` they are spread evenly over
    /// the full circle `[-π, π)` (zero always included, any count); otherwise
    /// `count` must be odd and they span `[-max_angle, max_angle]`.
    Turn { count: usize, max_angle: f64 },
    /// `count` (odd) curvatures evenly spaced in `[-max_curvature, max_curvature]`.
    Arc { count: usize, arc_length: f64, max_curvature: f64 },
}

impl LayerSpec {
    pub fn turn(count: usize) -> Self {
        LayerSpec::Turn { count, max_angle: PI }
    }

    pub fn arc(count: usize, arc_length: f64) -> Self {
        LayerSpec::Arc { count, arc_length, max_curvature: DEFAULT_MAX_CURVATURE }
    }

    pub fn count(&self) -> usize {
        match *self {
            LayerSpec::Turn { count, .. } | LayerSpec::Arc { count, .. } => count,
        }
    }

    fn validate(&self, layer: usize) -> Result<(), TreeError> {
        let bad = |reason: String| Err(TreeError::InvalidLayer { layer, reason });
        match *self {
            LayerSpec::Turn { count, max_angle } => {
                if count == 0 {
                    return bad("turn count must be positive".into());
                }
                if !(max_angle.is_finite() && max_angle >= 0.0) {
                    return bad(format!("max_angle must be >= 0, got {max_angle}"));
                }
                if max_angle < PI && count % 2 == 0 {
                    return bad(format!("partial turn layers need an odd count, got {count}"));
                }
            }
            LayerSpec::Arc { count, arc_length, max_curvature } => {
                if count == 0 || count % 2 == 0 {
                    return bad(format!("arc count must be odd, got {count}"));
                }
                if !(arc_length.is_finite() && arc_length > 0.0) {
                    return bad(format!("arc_length must be > 0, got {arc_length}"));
                }
                if !(max_curvature.is_finite() && max_curvature >= 0.0) {
                    return bad(format!("max_curvature must be >= 0, got {max_curvature}"));
                }
            }
        }
        Ok(())
    }

    fn primitives(&self) -> Vec<Primitive> {
        match *self {
            LayerSpec::Turn { count, max_angle } if max_angle >= PI => (0..count)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / count as f64;
                    Primitive::Turn { angle: if a >= PI { a - 2.0 * PI } else { a } }
                })
                .collect(),
            LayerSpec::Turn { count, max_angle } => {
                symmetric_values(count, max_angle).into_iter().map(|angle| Primitive::Turn { angle }).collect()
            }
            LayerSpec::Arc { count, arc_length, max_curvature } => symmetric_values(count, max_curvature)
                .into_iter()
                .map(|curvature| Primitive::Arc { length: arc_length, curvature })
                .collect(),
        }
    }
}

/// `count` (odd) values evenly spaced in `[-max, max]` with an exact zero center.
fn symmetric_values(count: usize, max: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    let mid = (count / 2) as isize;
    (0..count as isize).map(|i| max * (i - mid) as f64 / mid as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub layers: Vec<LayerSpec>,
}

impl TreeSpec {
    /// 14 turns, then two layers of 11 three-meter arcs: 1694 leaves, 6 m.
    pub fn default_tree() -> Self {
        Self { layers: vec![LayerSpec::turn(14), LayerSpec::arc(11, 3.0), LayerSpec::arc(11, 3.0)] }
    }

    /// Broader tree: 18 turns, two layers of 15 arcs, 4050 leaves.
    pub fn broad_tree() -> Self {
        Self { layers: vec![LayerSpec::turn(18), LayerSpec::arc(15, 3.0), LayerSpec::arc(15, 3.0)] }
    }

    /// Default tree plus a third arc layer: 9 m horizon.
    pub fn deep_tree() -> Self {
        let mut spec = Self::default_tree();
        spec.layers.push(LayerSpec::arc(11, 3.0));
        spec
    }

    /// Variable-length arcs: 11 turns, then 15×1 m, 11×2 m and 7×3 m arcs.
    pub fn variable_length_tree() -> Self {
        Self {
            layers: vec![
                LayerSpec::turn(11),
                LayerSpec::arc(15, 1.0),
                LayerSpec::arc(11, 2.0),
                LayerSpec::arc(7, 3.0),
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self, TreeError> {
        match name {
            "default" => Ok(Self::default_tree()),
            "bt" => Ok(Self::broad_tree()),
            "dt" => Ok(Self::deep_tree()),
            "vlt" => Ok(Self::variable_length_tree()),
            other => Err(TreeError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.layers.is_empty() {
            return Err(TreeError::NoLayers);
        }
        self.layers.iter().enumerate().try_for_each(|(i, l)| l.validate(i))
    }

    pub fn leaf_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::count).product()
    }

    pub fn horizon(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Arc { arc_length, .. } => *arc_length,
                LayerSpec::Turn { .. } => 0.0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    Turn { angle: f64 },
    Arc { length: f64, curvature: f64 },
    /// The root: the start pose itself.
    Start,
}

impl Primitive {
    pub fn length(&self) -> f64 {
        match *self {
            Primitive::Arc { length, .. } => length,
            _ => 0.0,
        }
    }

    pub fn negated(&self) -> Self {
        match *self {
            Primitive::Turn { angle } => Primitive::Turn { angle: -angle },
            Primitive::Arc { length, curvature } => Primitive::Arc { length, curvature: -curvature },
            Primitive::Start => Primitive::Start,
        }
    }
}

/// Exact constant-curvature rollout of `length` meters from `pose`.
pub fn rollout_arc(pose: &Pose, length: f64, curvature: f64) -> Pose {
    let (s0, c0) = pose.heading.sin_cos();
    if curvature.abs() < STRAIGHT_EPS {
        return Pose::new(pose.x + length * c0, pose.y + length * s0, pose.heading);
    }
    let theta1 = pose.heading + curvature * length;
    let (s1, c1) = theta1.sin_cos();
    Pose::new(pose.x + (s1 - s0) / curvature, pose.y - (c1 - c0) / curvature, theta1)
}

pub fn apply_primitive(pose: &Pose, primitive: &Primitive) -> Pose {
    match *primitive {
        Primitive::Turn { angle } => Pose::new(pose.x, pose.y, pose.heading + angle),
        Primitive::Arc { length, curvature } => rollout_arc(pose, length, curvature),
        Primitive::Start => *pose,
    }
}

/// Poses sampled along a single primitive starting at `from`, excluding
/// `from` itself. A turn yields its post-turn pose; an arc yields poses
/// every `interval` meters, always ending exactly at the arc end.
pub fn sample_primitive(from: &Pose, primitive: &Primitive, interval: f64) -> Vec<Pose> {
    match *primitive {
        Primitive::Start => Vec::new(),
        Primitive::Turn { .. } => vec![apply_primitive(from, primitive)],
        Primitive::Arc { length, curvature } => {
            let n = ((length / interval) - 1e-9).ceil().max(1.0) as usize;
            (1..=n)
                .map(|k| rollout_arc(from, (k as f64 * interval).min(length), curvature))
                .collect()
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct PathNode {
    pub parent: Option<NodeId>,
    pub primitive: Primitive,
    pub end_pose: Pose,
    pub cumulative_length: f64,
    /// Sum of |turn angle| from the root to this node.
    pub cumulative_turn: f64,
    pub depth: usize,
}

/// A built tree of candidate paths. Nodes are stored in breadth-first order
/// so shared prefixes are shared nodes.
#[derive(Debug, Clone)]
pub struct TrajectoryLibrary {
    nodes: Vec<PathNode>,
    leaves: Vec<NodeId>,
    /// Poses sampled along each node's own primitive.
    samples: Vec<Vec<Pose>>,
    layer_starts: Vec<NodeId>,
    horizon: f64,
    interval: f64,
}

pub fn build_tree(spec: &TreeSpec, start: Pose) -> Result<TrajectoryLibrary, TreeError> {
    TrajectoryLibrary::build(spec, start, DEFAULT_CHECK_INTERVAL)
}

impl TrajectoryLibrary {
    pub fn build(spec: &TreeSpec, start: Pose, interval: f64) -> Result<Self, TreeError> {
        spec.validate()?;
        if !(interval.is_finite() && interval > 0.0) {
            return Err(TreeError::InvalidInterval(interval));
        }
        let root = PathNode {
            parent: None,
            primitive: Primitive::Start,
            end_pose: start,
            cumulative_length: 0.0,
            cumulative_turn: 0.0,
            depth: 0,
        };
        let mut nodes = vec![root];
        let mut samples = vec![Vec::new()];
        let mut layer_starts = vec![0];
        let mut frontier: Vec<NodeId> = vec![0];
        for layer in &spec.layers {
            let prims = layer.primitives();
            let mut next = Vec::with_capacity(frontier.len() * prims.len());
            layer_starts.push(nodes.len());
            for &parent in &frontier {
                let p = nodes[parent].clone();
                for prim in &prims {
                    let end_pose = apply_primitive(&p.end_pose, prim);
                    let turn = match prim {
                        Primitive::Turn { angle } => angle.abs(),
                        _ => 0.0,
                    };
                    samples.push(sample_primitive(&p.end_pose, prim, interval));
                    next.push(nodes.len());
                    nodes.push(PathNode {
                        parent: Some(parent),
                        primitive: *prim,
                        end_pose,
                        cumulative_length: p.cumulative_length + prim.length(),
                        cumulative_turn: p.cumulative_turn + turn,
                        depth: p.depth + 1,
                    });
                }
            }
            frontier = next;
        }
        Ok(Self { nodes, leaves: frontier, samples, layer_starts, horizon: spec.horizon(), interval })
    }

    pub fn root(&self) -> &PathNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &PathNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[PathNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn depth(&self) -> usize {
        self.layer_starts.len() - 1
    }

    /// Poses along one node's own primitive, at the library interval.
    pub fn node_samples(&self, id: NodeId) -> &[Pose] {
        &self.samples[id]
    }

    /// Node ids from the first layer down to `id` (root excluded).
    pub fn ancestry(&self, id: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::with_capacity(self.depth());
        let mut cur = Some(id);
        while let Some(n) = cur {
            if n == 0 {
                break;
            }
            chain.push(n);
            cur = self.nodes[n].parent;
        }
        chain.reverse();
        chain
    }

    /// Primitive sequence of the path ending at `id`.
    pub fn primitives_of(&self, id: NodeId) -> Vec<Primitive> {
        self.ancestry(id).into_iter().map(|n| self.nodes[n].primitive).collect()
    }

    /// All sampled poses from the root to `id` at the library interval.
    pub fn path_samples(&self, id: NodeId) -> Vec<Pose> {
        self.ancestry(id).into_iter().flat_map(|n| self.samples[n].iter().copied()).collect()
    }

    /// Samples poses from the root to `leaf` at an arbitrary interval.
    pub fn sample_path(&self, leaf: NodeId, interval: f64) -> Result<Vec<Pose>, TreeError> {
        if !(interval.is_finite() && interval > 0.0) {
            return Err(TreeError::InvalidInterval(interval));
        }
        let mut pose = self.nodes[0].end_pose;
        let mut out = Vec::new();
        for prim in self.primitives_of(leaf) {
            out.extend(sample_primitive(&pose, &prim, interval));
            pose = apply_primitive(&pose, &prim);
        }
        Ok(out)
    }
}
