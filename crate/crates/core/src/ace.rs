//! Model-based clearance checker.
//!
//! A pose is evaluated by resting the rover body on a least-squares plane
//! through its four wheel contact heights and measuring tilt, belly
//! clearance and wheel height spread against the geometry's limits. This is
//! the expensive safety oracle the planner budgets; every call is one
//! "check".

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terrain::Heightmap;

/// Measured values within this fraction of a limit start accruing risk cost.
pub const RISK_ONSET: f64 = 0.8;
/// Risk cost of a single pose sitting exactly at a limit.
pub const RISK_SCALE: f64 = 10.0;
pub const DEFAULT_CHECK_INTERVAL: f64 = 0.25;

// Tolerance on squared footprint distances, in cells², so that whole-cell
// translations never flip a cell in or out of a wheel footprint.
const FOOTPRINT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AceError {
    #[error("cannot evaluate an empty path")]
    EmptyPath,
    #[error("invalid rover geometry: {0}")]
    InvalidGeometry(String),
}

/// Planar rover state. Heading is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_heading(heading) }
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        (self.x - p.0).hypot(self.y - p.1)
    }
}

pub fn normalize_heading(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoverGeometry {
    /// Front-to-rear wheel spacing, along the heading.
    pub wheelbase_length: f64,
    /// Left-to-right wheel spacing.
    pub wheelbase_width: f64,
    pub wheel_radius: f64,
    pub nominal_belly_clearance: f64,
    pub wheel_footprint_radius: f64,
    /// Degrees.
    pub max_tilt: f64,
    pub min_clearance: f64,
    pub max_wheel_drop: f64,
    /// Belly sample grid, points along × across the body.
    pub belly_samples: (usize, usize),
}

impl Default for RoverGeometry {
    fn default() -> Self {
        Self {
            wheelbase_length: 2.6,
            wheelbase_width: 2.2,
            wheel_radius: 0.26,
            nominal_belly_clearance: 0.6,
            wheel_footprint_radius: 0.25,
            max_tilt: 20.0,
            min_clearance: 0.25,
            max_wheel_drop: 0.35,
            belly_samples: (5, 3),
        }
    }
}

impl RoverGeometry {
    pub fn validate(&self) -> Result<(), AceError> {
        let lengths = [
            ("wheelbase_length", self.wheelbase_length),
            ("wheelbase_width", self.wheelbase_width),
            ("wheel_radius", self.wheel_radius),
            ("nominal_belly_clearance", self.nominal_belly_clearance),
            ("wheel_footprint_radius", self.wheel_footprint_radius),
            ("max_tilt", self.max_tilt),
            ("min_clearance", self.min_clearance),
            ("max_wheel_drop", self.max_wheel_drop),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(AceError::InvalidGeometry(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.min_clearance >= self.nominal_belly_clearance {
            return Err(AceError::InvalidGeometry(
                "min_clearance must be below nominal_belly_clearance".into(),
            ));
        }
        if self.belly_samples.0 < 2 || self.belly_samples.1 < 2 {
            return Err(AceError::InvalidGeometry("belly_samples needs at least 2x2 points".into()));
        }
        Ok(())
    }

    /// Largest distance from the pose center to any point the checker reads.
    pub fn reach(&self) -> f64 {
        (self.wheelbase_length / 2.0).hypot(self.wheelbase_width / 2.0) + self.wheel_footprint_radius
    }

    /// Wheel centers in the body frame (along, across): FL, FR, RL, RR.
    fn wheel_offsets(&self) -> [(f64, f64); 4] {
        let (a, c) = (self.wheelbase_length / 2.0, self.wheelbase_width / 2.0);
        [(a, c), (a, -c), (-a, c), (-a, -c)]
    }

    /// Belly samples span the wheelbase rectangle inset by the footprint radius.
    fn belly_offsets(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (nu, nv) = self.belly_samples;
        let hu = self.wheelbase_length / 2.0 - self.wheel_footprint_radius;
        let hv = self.wheelbase_width / 2.0 - self.wheel_footprint_radius;
        (0..nu).flat_map(move |i| {
            let u = -hu + 2.0 * hu * i as f64 / (nu - 1) as f64;
            (0..nv).map(move |j| (u, -hv + 2.0 * hv * j as f64 / (nv - 1) as f64))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceResult {
    pub feasible: bool,
    /// The rover footprint left the map; measurements are NaN.
    pub out_of_bounds: bool,
    /// Degrees.
    pub tilt: f64,
    pub belly_clearance: f64,
    pub max_wheel_height_spread: f64,
    pub cost: f64,
}

impl AceResult {
    fn out_of_bounds() -> Self {
        Self {
            feasible: false,
            out_of_bounds: true,
            tilt: f64::NAN,
            belly_clearance: f64::NAN,
            max_wheel_height_spread: f64::NAN,
            cost: f64::INFINITY,
        }
    }
}

/// Anything that can answer a single-pose safety query.
pub trait PoseChecker {
    fn check(&self, pose: &Pose) -> AceResult;
}

/// The checker over a fixed map and rover geometry.
#[derive(Debug, Clone, Copy)]
pub struct AceChecker<'a> {
    pub map: &'a Heightmap,
    pub geom: &'a RoverGeometry,
}

impl<'a> AceChecker<'a> {
    pub fn new(map: &'a Heightmap, geom: &'a RoverGeometry) -> Self {
        Self { map, geom }
    }
}

impl PoseChecker for AceChecker<'_> {
    fn check(&self, pose: &Pose) -> AceResult {
        evaluate_pose(self.map, pose, self.geom)
    }
}

/// Per-pose risk term for a measurement `value` against `limit`.
fn risk(value_over_limit: f64) -> f64 {
    let excess = ((value_over_limit - RISK_ONSET) / (1.0 - RISK_ONSET)).max(0.0);
    RISK_SCALE * excess * excess
}

pub fn evaluate_pose(map: &Heightmap, pose: &Pose, geom: &RoverGeometry) -> AceResult {
    let (sin_h, cos_h) = pose.heading.sin_cos();
    let to_world = |(u, v): (f64, f64)| (pose.x + u * cos_h - v * sin_h, pose.y + u * sin_h + v * cos_h);
    let res = map.resolution();
    let radius_cells = geom.wheel_footprint_radius / res;
    let r2 = radius_cells * radius_cells + FOOTPRINT_EPS;
    let max_col = (map.width_cells() - 1) as f64;
    let max_row = (map.height_cells() - 1) as f64;

    let offsets = geom.wheel_offsets();
    let mut wheel_z = [0.0; 4];
    for (k, &off) in offsets.iter().enumerate() {
        let (wx, wy) = to_world(off);
        let (gx, gy) = map.to_grid(wx, wy);
        if gx - radius_cells < 0.0 || gy - radius_cells < 0.0 || gx + radius_cells > max_col || gy + radius_cells > max_row {
            return AceResult::out_of_bounds();
        }
        let c0 = (gx - radius_cells).ceil() as usize;
        let c1 = (gx + radius_cells).floor() as usize;
        let r0 = (gy - radius_cells).ceil() as usize;
        let r1 = (gy + radius_cells).floor() as usize;
        let mut top = f64::NEG_INFINITY;
        for row in r0..=r1 {
            let dy = row as f64 - gy;
            for col in c0..=c1 {
                let dx = col as f64 - gx;
                if dx * dx + dy * dy <= r2 {
                    top = top.max(map.cell(col, row));
                }
            }
        }
        if top == f64::NEG_INFINITY {
            // Footprint smaller than a cell: fall back to the terrain under the wheel.
            top = map.bilinear_grid(gx, gy);
        }
        wheel_z[k] = top;
    }

    // The wheel rectangle is a symmetric design, so the least-squares plane
    // z = a + b·u + c·v decouples into three independent averages.
    let (mut a, mut b, mut c, mut suu, mut svv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(u, v), &z) in offsets.iter().zip(&wheel_z) {
        a += z;
        b += z * u;
        c += z * v;
        suu += u * u;
        svv += v * v;
    }
    a /= 4.0;
    b /= suu;
    c /= svv;
    let tilt = b.hypot(c).atan().to_degrees();

    let mut clearance = f64::INFINITY;
    for off in geom.belly_offsets() {
        let (bx, by) = to_world(off);
        let (gx, gy) = map.to_grid(bx, by);
        if gx < 0.0 || gy < 0.0 || gx > max_col || gy > max_row {
            return AceResult::out_of_bounds();
        }
        let plane = a + b * off.0 + c * off.1;
        clearance = clearance.min(plane + geom.nominal_belly_clearance - map.bilinear_grid(gx, gy));
    }

    // Wheel heights relative to the body plane: the articulation the
    // suspension has to absorb. Zero on any plane.
    let mut rmax = f64::NEG_INFINITY;
    let mut rmin = f64::INFINITY;
    for (&(u, v), &z) in offsets.iter().zip(&wheel_z) {
        let residual = z - (a + b * u + c * v);
        rmax = rmax.max(residual);
        rmin = rmin.min(residual);
    }
    let spread = rmax - rmin;

    let feasible = tilt <= geom.max_tilt && clearance >= geom.min_clearance && spread <= geom.max_wheel_drop;
    let cost = if feasible {
        risk(tilt / geom.max_tilt) + risk(geom.min_clearance / clearance) + risk(spread / geom.max_wheel_drop)
    } else {
        f64::INFINITY
    };
    AceResult { feasible, out_of_bounds: false, tilt, belly_clearance: clearance, max_wheel_height_spread: spread, cost }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathAceResult {
    pub per_pose: Vec<AceResult>,
    pub checks_run: usize,
    pub feasible: bool,
    pub aggregate_cost: f64,
}

/// Evaluates poses in order, stopping at the first infeasible one.
///
/// `interval` is the arc-length spacing the poses were sampled at; it does
/// not change the evaluation.
pub fn evaluate_path(
    map: &Heightmap,
    path: &[Pose],
    geom: &RoverGeometry,
    interval: f64,
) -> Result<PathAceResult, AceError> {
    evaluate_path_with(&AceChecker::new(map, geom), path, interval)
}

pub fn evaluate_path_with<C: PoseChecker + ?Sized>(
    checker: &C,
    path: &[Pose],
    _interval: f64,
) -> Result<PathAceResult, AceError> {
    if path.is_empty() {
        return Err(AceError::EmptyPath);
    }
    let mut per_pose = Vec::with_capacity(path.len());
    let mut aggregate_cost = 0.0;
    for pose in path {
        let r = checker.check(pose);
        aggregate_cost += r.cost;
        per_pose.push(r);
        if !r.feasible {
            break;
        }
    }
    let feasible = per_pose.len() == path.len() && per_pose.iter().all(|r| r.feasible);
    Ok(PathAceResult { checks_run: per_pose.len(), per_pose, feasible, aggregate_cost })
}
