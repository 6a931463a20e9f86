//! 2.5D terrain: the [`Heightmap`] grid, synthetic Mars-like terrain
//! generation, and the on-disk heightmap format.
//!
//! Cell `(col, row)` has its center at `origin + (col, row) * resolution`;
//! row 0 is the minimum-y row. Heights are stored as `f32` so that the
//! binary payload round-trips bit-exactly.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest grid `generate_terrain` will produce along either axis.
pub const MIN_GRID_CELLS: usize = 16;

/// Slope and rock-density limits separating benign from complex terrain.
pub const BENIGN_MAX_SLOPE_DEG: f64 = 15.0;
pub const BENIGN_MAX_CFA: f64 = 0.07;

const ROCK_MEAN_DIAMETER: f64 = 0.4;
const ROCK_MIN_DIAMETER: f64 = 0.1;
const ROCK_MAX_DIAMETER: f64 = 2.0;
const ROCK_MIN_ASPECT: f64 = 0.35;
const ROCK_MAX_ASPECT: f64 = 0.65;
const NOISE_CELL_M: f64 = 2.0;
const MAX_ROCK_ROUNDS: usize = 200_000;
// Rocks are added until the area fraction reaches the target; a rock that
// would overshoot by more than this relative amount is redrawn.
const CFA_OVERSHOOT: f64 = 0.05;
const GRID_SNAP: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("invalid terrain config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("grid of {cols}x{rows} cells is smaller than the {MIN_GRID_CELLS}x{MIN_GRID_CELLS} minimum")]
    GridTooSmall { cols: usize, rows: usize },
    #[error("could not reach CFA {target} after {rounds} rejection rounds (reached {achieved:.4})")]
    CfaUnreachable { target: f64, achieved: f64, rounds: usize },
    #[error("query ({x:.3}, {y:.3}) lies outside the heightmap")]
    OutOfBounds { x: f64, y: f64 },
    #[error("malformed heightmap header: {0}")]
    MalformedHeader(String),
    #[error("heightmap payload holds {actual} values, header declares {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("heightmap contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid heightmap: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TerrainError + '_ {
    move |source| TerrainError::Io { path: path.to_path_buf(), source }
}

/// A 2.5D grid of terrain heights in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightmap {
    width_cells: usize,
    height_cells: usize,
    resolution: f64,
    origin: (f64, f64),
    heights: Vec<f32>,
}

impl Heightmap {
    pub fn new(
        width_cells: usize,
        height_cells: usize,
        resolution: f64,
        origin: (f64, f64),
        heights: Vec<f32>,
    ) -> Result<Self, TerrainError> {
        if width_cells == 0 || height_cells == 0 {
            return Err(TerrainError::Invalid("grid dimensions must be positive".into()));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(TerrainError::Invalid(format!("resolution must be > 0, got {resolution}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(TerrainError::Invalid("origin must be finite".into()));
        }
        let expected = width_cells * height_cells;
        if heights.len() != expected {
            return Err(TerrainError::SizeMismatch { expected, actual: heights.len() });
        }
        if let Some(index) = heights.iter().position(|h| !h.is_finite()) {
            return Err(TerrainError::NonFinite { index });
        }
        Ok(Self { width_cells, height_cells, resolution, origin, heights })
    }

    /// A map of constant height.
    pub fn flat(width_cells: usize, height_cells: usize, resolution: f64, height: f32) -> Self {
        Self::from_fn(width_cells, height_cells, resolution, (0.0, 0.0), |_, _| height as f64)
    }

    /// Builds a map by evaluating `f(x, y)` at every cell center.
    pub fn from_fn(
        width_cells: usize,
        height_cells: usize,
        resolution: f64,
        origin: (f64, f64),
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Self {
        let mut heights = Vec::with_capacity(width_cells * height_cells);
        for row in 0..height_cells {
            let y = origin.1 + row as f64 * resolution;
            for col in 0..width_cells {
                let x = origin.0 + col as f64 * resolution;
                heights.push(f(x, y) as f32);
            }
        }
        Self::new(width_cells, height_cells, resolution, origin, heights)
            .expect("from_fn produced an invalid heightmap")
    }

    pub fn width_cells(&self) -> usize {
        self.width_cells
    }

    pub fn height_cells(&self) -> usize {
        self.height_cells
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    /// Stored height of cell `(col, row)`.
    #[inline]
    pub fn cell(&self, col: usize, row: usize) -> f64 {
        self.heights[row * self.width_cells + col] as f64
    }

    pub fn set_cell(&mut self, col: usize, row: usize, value: f32) {
        assert!(value.is_finite(), "heights must be finite");
        self.heights[row * self.width_cells + col] = value;
    }

    /// World coordinates of a cell center.
    #[inline]
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin.0 + col as f64 * self.resolution,
            self.origin.1 + row as f64 * self.resolution,
        )
    }

    /// Continuous grid coordinates (fractional column, row) of a world point.
    #[inline]
    pub fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin.0) / self.resolution, (y - self.origin.1) / self.resolution)
    }

    /// World-space extent covered by cell centers: `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let (x1, y1) = self.cell_center(self.width_cells - 1, self.height_cells - 1);
        (self.origin.0, self.origin.1, x1, y1)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (gx, gy) = self.to_grid(x, y);
        gx >= 0.0
            && gy >= 0.0
            && gx <= (self.width_cells - 1) as f64
            && gy <= (self.height_cells - 1) as f64
    }

    /// Bilinear interpolation of the four cell centers around `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let (gx, gy) = self.to_grid(x, y);
        Ok(self.bilinear_grid(gx, gy))
    }

    /// Bilinear lookup in grid coordinates; the caller guarantees bounds.
    #[inline]
    pub(crate) fn bilinear_grid(&self, gx: f64, gy: f64) -> f64 {
        // Undo the rounding of the world-to-grid division so that cell
        // centers read back their stored value exactly.
        let snap = |g: f64| if (g - g.round()).abs() < GRID_SNAP { g.round() } else { g };
        let (gx, gy) = (snap(gx), snap(gy));
        let c0 = (gx.floor() as usize).min(self.width_cells - 1);
        let r0 = (gy.floor() as usize).min(self.height_cells - 1);
        let c1 = (c0 + 1).min(self.width_cells - 1);
        let r1 = (r0 + 1).min(self.height_cells - 1);
        let fx = gx - c0 as f64;
        let fy = gy - r0 as f64;
        let h00 = self.cell(c0, r0);
        let h10 = self.cell(c1, r0);
        let h01 = self.cell(c0, r1);
        let h11 = self.cell(c1, r1);
        if fx == 0.0 && fy == 0.0 {
            return h00;
        }
        let bottom = h00 + (h10 - h00) * fx;
        let top = h01 + (h11 - h01) * fx;
        bottom + (top - bottom) * fy
    }

    /// Copies the rectangular block of cells starting at `(col0, row0)`.
    pub fn crop(&self, col0: usize, row0: usize, cols: usize, rows: usize) -> Result<Heightmap, TerrainError> {
        if col0 + cols > self.width_cells || row0 + rows > self.height_cells {
            return Err(TerrainError::Invalid(format!(
                "crop {cols}x{rows} at ({col0}, {row0}) exceeds {}x{} map",
                self.width_cells, self.height_cells
            )));
        }
        let mut heights = Vec::with_capacity(cols * rows);
        for r in row0..row0 + rows {
            let start = r * self.width_cells + col0;
            heights.extend_from_slice(&self.heights[start..start + cols]);
        }
        Heightmap::new(cols, rows, self.resolution, self.cell_center(col0, row0), heights)
    }

    /// Writes `<stem>.json` and `<stem>.f32`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<(), TerrainError> {
        let (json_path, payload_path) = heightmap_paths(stem.as_ref());
        let header = HeightmapHeader {
            width_cells: self.width_cells,
            height_cells: self.height_cells,
            resolution_m: self.resolution,
            origin_m: [self.origin.0, self.origin.1],
        };
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(&json_path, json).map_err(io_err(&json_path))?;
        let mut bytes = Vec::with_capacity(self.heights.len() * 4);
        for h in &self.heights {
            bytes.extend_from_slice(&h.to_le_bytes());
        }
        fs::write(&payload_path, bytes).map_err(io_err(&payload_path))?;
        Ok(())
    }

    /// Reads a map written by [`Heightmap::save`]. `stem` may name either
    /// file of the pair or omit the extension.
    pub fn load(stem: impl AsRef<Path>) -> Result<Heightmap, TerrainError> {
        let (json_path, payload_path) = heightmap_paths(stem.as_ref());
        let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
        let header: HeightmapHeader =
            serde_json::from_str(&text).map_err(|e| TerrainError::MalformedHeader(e.to_string()))?;
        if header.width_cells == 0 || header.height_cells == 0 {
            return Err(TerrainError::MalformedHeader("grid dimensions must be positive".into()));
        }
        if !(header.resolution_m.is_finite() && header.resolution_m > 0.0) {
            return Err(TerrainError::MalformedHeader(format!(
                "resolution_m must be > 0, got {}",
                header.resolution_m
            )));
        }
        let bytes = fs::read(&payload_path).map_err(io_err(&payload_path))?;
        let expected = header.width_cells * header.height_cells;
        if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
            return Err(TerrainError::SizeMismatch { expected, actual: bytes.len() / 4 });
        }
        let heights: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Heightmap::new(
            header.width_cells,
            header.height_cells,
            header.resolution_m,
            (header.origin_m[0], header.origin_m[1]),
            heights,
        )
    }
}

/// JSON header of the on-disk heightmap format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightmapHeader {
    pub width_cells: usize,
    pub height_cells: usize,
    pub resolution_m: f64,
    pub origin_m: [f64; 2],
}

fn heightmap_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("f32") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (base.with_file_name(format!("{name}.json")), base.with_file_name(format!("{name}.f32")))
}

/// Parameters of the synthetic terrain distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainConfig {
    /// Side length of the square map in meters.
    pub extent: f64,
    pub resolution: f64,
    /// Inclination of the base plane, degrees.
    pub base_slope: f64,
    /// Downhill-to-uphill direction of the base plane, degrees.
    pub slope_azimuth: f64,
    /// Cumulative fraction of area covered by rocks.
    pub cfa: f64,
    pub noise_amplitude: f64,
    pub rng_seed: u64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            extent: 20.0,
            resolution: 0.1,
            base_slope: 0.0,
            slope_azimuth: 0.0,
            cfa: 0.0,
            noise_amplitude: 0.0,
            rng_seed: 0,
        }
    }
}

/// Benign / complex split used in all reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Benign,
    Complex,
}

impl TerrainClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TerrainClass::Benign => "benign",
            TerrainClass::Complex => "complex",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "benign" => Some(TerrainClass::Benign),
            "complex" => Some(TerrainClass::Complex),
            _ => None,
        }
    }
}

impl TerrainConfig {
    pub fn validate(&self) -> Result<(), TerrainError> {
        let bad = |field, reason: String| Err(TerrainError::InvalidConfig { field, reason });
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return bad("extent", format!("must be > 0, got {}", self.extent));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return bad("resolution", format!("must be > 0, got {}", self.resolution));
        }
        if !(0.0..=30.0).contains(&self.base_slope) {
            return bad("base_slope", format!("must lie in [0, 30] degrees, got {}", self.base_slope));
        }
        if !(0.0..360.0).contains(&self.slope_azimuth) {
            return bad("slope_azimuth", format!("must lie in [0, 360) degrees, got {}", self.slope_azimuth));
        }
        if !(0.0..=0.20).contains(&self.cfa) {
            return bad("cfa", format!("must lie in [0, 0.20], got {}", self.cfa));
        }
        if !(self.noise_amplitude.is_finite() && self.noise_amplitude >= 0.0) {
            return bad("noise_amplitude", format!("must be >= 0, got {}", self.noise_amplitude));
        }
        Ok(())
    }

    pub fn class(&self) -> TerrainClass {
        if self.base_slope < BENIGN_MAX_SLOPE_DEG && self.cfa <= BENIGN_MAX_CFA {
            TerrainClass::Benign
        } else {
            TerrainClass::Complex
        }
    }

    /// Draws a configuration from the ranges used for the desk campaigns
    /// and training data. Benign: slope below 10°, cfa 0.01 to 0.06.
    /// Complex: slope 2° to 12°, cfa 0.09 to 0.15.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, class: TerrainClass, extent: f64) -> Self {
        let mut cfg = TerrainConfig {
            extent,
            slope_azimuth: rng.random_range(0.0..360.0),
            noise_amplitude: rng.random_range(0.02..0.06),
            rng_seed: rng.random(),
            ..TerrainConfig::default()
        };
        match class {
            TerrainClass::Benign => {
                cfg.base_slope = rng.random_range(0.0..10.0);
                cfg.cfa = rng.random_range(0.01..0.06);
            }
            TerrainClass::Complex => {
                cfg.base_slope = rng.random_range(2.0..12.0);
                cfg.cfa = rng.random_range(0.09..0.15);
            }
        }
        cfg
    }

    pub fn grid_cells(&self) -> usize {
        (self.extent / self.resolution).round() as usize
    }
}

/// A hemispheroid rock cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rock {
    pub center: (f64, f64),
    pub diameter: f64,
    pub height: f64,
}

impl Rock {
    pub fn area(&self) -> f64 {
        PI * (self.diameter / 2.0).powi(2)
    }

    /// Cap height above the base surface at `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let r = self.diameter / 2.0;
        let d2 = ((x - self.center.0).powi(2) + (y - self.center.1).powi(2)) / (r * r);
        if d2 >= 1.0 {
            0.0
        } else {
            self.height * (1.0 - d2).sqrt()
        }
    }
}

/// Projected rock area divided by map area.
pub fn rock_area_fraction(rocks: &[Rock], map_area: f64) -> f64 {
    rocks.iter().map(Rock::area).sum::<f64>() / map_area
}

/// Generated terrain plus the rock list behind it.
#[derive(Debug, Clone)]
pub struct GeneratedTerrain {
    pub map: Heightmap,
    pub rocks: Vec<Rock>,
}

impl GeneratedTerrain {
    /// Rock-area fraction over the square `extent × extent` region.
    pub fn achieved_cfa(&self, extent: f64) -> f64 {
        rock_area_fraction(&self.rocks, extent * extent)
    }
}

pub fn generate_terrain(config: &TerrainConfig) -> Result<Heightmap, TerrainError> {
    generate_terrain_with_rocks(config).map(|t| t.map)
}

/// Inclined plane + smooth value noise + non-overlapping rock field.
pub fn generate_terrain_with_rocks(config: &TerrainConfig) -> Result<GeneratedTerrain, TerrainError> {
    config.validate()?;
    let n = config.grid_cells();
    if n < MIN_GRID_CELLS {
        return Err(TerrainError::GridTooSmall { cols: n, rows: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let res = config.resolution;
    let side = n as f64 * res;

    let noise = ValueNoise::new(&mut rng, side, NOISE_CELL_M, config.noise_amplitude);
    let rocks = place_rocks(&mut rng, config.cfa, side)?;

    let grad = config.base_slope.to_radians().tan();
    let (sin_az, cos_az) = config.slope_azimuth.to_radians().sin_cos();
    let mut heights = vec![0.0f64; n * n];
    for row in 0..n {
        let y = row as f64 * res;
        for col in 0..n {
            let x = col as f64 * res;
            heights[row * n + col] = grad * (x * cos_az + y * sin_az) + noise.sample(x, y);
        }
    }
    // Rocks are stamped over their bounding box only.
    for rock in &rocks {
        let r = rock.diameter / 2.0;
        let c0 = ((rock.center.0 - r) / res).floor().max(0.0) as usize;
        let c1 = (((rock.center.0 + r) / res).ceil() as usize).min(n - 1);
        let r0 = ((rock.center.1 - r) / res).floor().max(0.0) as usize;
        let r1 = (((rock.center.1 + r) / res).ceil() as usize).min(n - 1);
        for row in r0..=r1 {
            for col in c0..=c1 {
                heights[row * n + col] += rock.height_at(col as f64 * res, row as f64 * res);
            }
        }
    }
    let heights = heights.into_iter().map(|h| h as f32).collect();
    let map = Heightmap::new(n, n, res, (0.0, 0.0), heights)?;
    Ok(GeneratedTerrain { map, rocks })
}

fn place_rocks(rng: &mut ChaCha8Rng, cfa: f64, side: f64) -> Result<Vec<Rock>, TerrainError> {
    let mut rocks: Vec<Rock> = Vec::new();
    if cfa <= 0.0 {
        return Ok(rocks);
    }
    let target_area = cfa * side * side;
    let ceiling = target_area * (1.0 + CFA_OVERSHOOT);
    let size_law = Exp::new(1.0 / ROCK_MEAN_DIAMETER).expect("positive rate");
    let mut area = 0.0;
    let mut rounds = 0;
    while area < target_area {
        rounds += 1;
        if rounds > MAX_ROCK_ROUNDS {
            return Err(TerrainError::CfaUnreachable {
                target: cfa,
                achieved: area / (side * side),
                rounds: MAX_ROCK_ROUNDS,
            });
        }
        let diameter = size_law.sample(rng);
        if !(ROCK_MIN_DIAMETER..=ROCK_MAX_DIAMETER).contains(&diameter) {
            continue;
        }
        let radius = diameter / 2.0;
        let rock_area = PI * radius * radius;
        if area + rock_area > ceiling || 2.0 * radius >= side {
            continue;
        }
        let center = (rng.random_range(radius..side - radius), rng.random_range(radius..side - radius));
        let overlaps = rocks.iter().any(|o| {
            let reach = radius + o.diameter / 2.0;
            (o.center.0 - center.0).powi(2) + (o.center.1 - center.1).powi(2) < reach * reach
        });
        if overlaps {
            continue;
        }
        let height = diameter * rng.random_range(ROCK_MIN_ASPECT..ROCK_MAX_ASPECT);
        rocks.push(Rock { center, diameter, height });
        area += rock_area;
    }
    Ok(rocks)
}

/// Bilinearly interpolated lattice of uniform random values.
struct ValueNoise {
    lattice: Vec<f64>,
    nodes: usize,
    cell: f64,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, side: f64, cell: f64, amplitude: f64) -> Self {
        let nodes = (side / cell).ceil() as usize + 2;
        let lattice = (0..nodes * nodes)
            .map(|_| if amplitude > 0.0 { amplitude * rng.random_range(-1.0..=1.0) } else { 0.0 })
            .collect();
        Self { lattice, nodes, cell }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let gx = x / self.cell;
        let gy = y / self.cell;
        let i = (gx.floor() as usize).min(self.nodes - 2);
        let j = (gy.floor() as usize).min(self.nodes - 2);
        let fx = gx - i as f64;
        let fy = gy - j as f64;
        let at = |i: usize, j: usize| self.lattice[j * self.nodes + i];
        let bottom = at(i, j) + (at(i + 1, j) - at(i, j)) * fx;
        let top = at(i, j + 1) + (at(i + 1, j + 1) - at(i, j + 1)) * fx;
        bottom + (top - bottom) * fy
    }
}

/// Writes the rock list of a generated terrain as JSON for CFA auditing.
pub fn save_rocks(rocks: &[Rock], path: impl AsRef<Path>) -> Result<(), TerrainError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(rocks).expect("rocks serialize");
    fs::write(path, json).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_config_gives_zero_grid() {
        let cfg = TerrainConfig { rng_seed: 7, ..TerrainConfig::default() };
        let map = generate_terrain(&cfg).unwrap();
        assert_eq!((map.width_cells(), map.height_cells()), (200, 200));
        assert!(map.heights().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn inclined_plane_rise_matches_tangent() {
        let cfg = TerrainConfig { base_slope: 15.0, ..TerrainConfig::default() };
        let map = generate_terrain(&cfg).unwrap();
        let n = map.width_cells();
        let rise = map.cell(n - 1, 0) - map.cell(0, 0);
        let run = (n - 1) as f64 * map.resolution();
        let across_extent = rise / run * cfg.extent;
        assert!((across_extent - 20.0 * 15f64.to_radians().tan()).abs() < 1e-4);
        assert!((across_extent - 5.359).abs() < 1e-3);
        // Perpendicular to the azimuth the plane is level.
        assert!((map.cell(0, n - 1) - map.cell(0, 0)).abs() < 1e-6);
    }

    #[test]
    fn cfa_within_ten_percent() {
        let cfg = TerrainConfig { cfa: 0.07, rng_seed: 3, ..TerrainConfig::default() };
        let t = generate_terrain_with_rocks(&cfg).unwrap();
        let achieved = t.achieved_cfa(cfg.extent);
        assert!((0.063..=0.077).contains(&achieved), "achieved {achieved}");
    }

    #[test]
    fn rocks_never_overlap_and_stay_on_map() {
        let cfg = TerrainConfig { cfa: 0.15, rng_seed: 11, ..TerrainConfig::default() };
        let t = generate_terrain_with_rocks(&cfg).unwrap();
        for (i, a) in t.rocks.iter().enumerate() {
            assert!(a.height <= a.diameter && a.height > 0.0);
            let r = a.diameter / 2.0;
            assert!(a.center.0 >= r && a.center.0 <= cfg.extent - r);
            for b in &t.rocks[i + 1..] {
                let d = ((a.center.0 - b.center.0).powi(2) + (a.center.1 - b.center.1).powi(2)).sqrt();
                assert!(d >= r + b.diameter / 2.0);
            }
        }
    }

    #[test]
    fn tiny_grid_rejected() {
        let cfg = TerrainConfig { extent: 1.0, ..TerrainConfig::default() };
        assert!(matches!(generate_terrain(&cfg), Err(TerrainError::GridTooSmall { .. })));
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = TerrainConfig { cfa: 0.5, ..TerrainConfig::default() };
        let err = generate_terrain(&cfg).unwrap_err();
        assert!(err.to_string().contains("cfa"));
        let cfg = TerrainConfig { base_slope: 31.0, ..TerrainConfig::default() };
        assert!(generate_terrain(&cfg).unwrap_err().to_string().contains("base_slope"));
    }

    #[test]
    fn class_thresholds() {
        let mut cfg = TerrainConfig { base_slope: 14.9, cfa: 0.07, ..TerrainConfig::default() };
        assert_eq!(cfg.class(), TerrainClass::Benign);
        cfg.base_slope = 15.0;
        assert_eq!(cfg.class(), TerrainClass::Complex);
        cfg.base_slope = 0.0;
        cfg.cfa = 0.08;
        assert_eq!(cfg.class(), TerrainClass::Complex);
    }

    #[test]
    fn height_at_cell_center_and_midpoint() {
        let mut map = Heightmap::flat(4, 4, 0.5, 0.0);
        map.set_cell(1, 1, 1.0);
        map.set_cell(1, 2, 1.0);
        map.set_cell(1, 0, 1.0);
        map.set_cell(1, 3, 1.0);
        assert_eq!(map.height_at(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(map.height_at(0.25, 0.75).unwrap(), 0.5);
        assert!(matches!(map.height_at(-0.1, 0.0), Err(TerrainError::OutOfBounds { .. })));
        assert!(matches!(map.height_at(0.0, 1.6), Err(TerrainError::OutOfBounds { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        let err = Heightmap::new(2, 1, 1.0, (0.0, 0.0), vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, TerrainError::NonFinite { index: 1 }));
    }

    #[test]
    fn deterministic_generation() {
        let cfg = TerrainConfig { cfa: 0.1, noise_amplitude: 0.1, base_slope: 8.0, rng_seed: 99, ..TerrainConfig::default() };
        assert_eq!(generate_terrain(&cfg).unwrap(), generate_terrain(&cfg).unwrap());
    }

    #[test]
    fn crop_keeps_world_coordinates() {
        let map = Heightmap::from_fn(20, 20, 0.25, (1.0, 2.0), |x, y| x + 10.0 * y);
        let sub = map.crop(3, 4, 5, 6).unwrap();
        assert_eq!(sub.origin(), map.cell_center(3, 4));
        assert_eq!(sub.cell(2, 3), map.cell(5, 7));
        assert!(map.crop(18, 0, 5, 1).is_err());
    }
}
