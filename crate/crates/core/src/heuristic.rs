//! Proxy collision heuristics: 8-heading collision maps from the exact
//! checker or a trained network, constant-time lookup, and training data.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ace::{evaluate_pose, normalize_heading, Pose, RoverGeometry};
use crate::convnet::{ConvError, Example, Network, Tensor4, OUTPUT_CHANNELS};
use crate::planner::ProxyHeuristic;
use crate::terrain::{generate_terrain, Heightmap, TerrainClass, TerrainConfig, TerrainError};

pub const HEADINGS: usize = OUTPUT_CHANNELS;
pub const TILE: usize = 64;
pub const TILE_OVERLAP: usize = 8;
/// Inputs are divided by this after mean subtraction, in meters.
pub const HEIGHT_SCALE: f64 = 1.0;

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HeuristicError {
    #[error("ace map: {0}")]
    Invalid(String),
    #[error("tile of {tile} cells does not fit a {cols}x{rows} map")]
    TileTooLarge { tile: usize, cols: usize, rows: usize },
    #[error("no terrain configs given")]
    NoConfigs,
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Model(#[from] ConvError),
    #[error("malformed dataset entry {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HeuristicError + '_ {
    move |source| HeuristicError::Io { path: path.to_path_buf(), source }
}

pub fn heading_of_channel(k: usize) -> f64 {
    normalize_heading(k as f64 * std::f64::consts::FRAC_PI_4)
}

/// Nearest 45° channel; exact half-way headings go to the lower index.
pub fn channel_of_heading(heading: f64) -> usize {
    let t = normalize_heading(heading) / std::f64::consts::FRAC_PI_4;
    let f = t.floor();
    let frac = t - f;
    let wrap = |v: f64| (v as i64).rem_euclid(HEADINGS as i64) as usize;
    if (frac - 0.5).abs() < TIE_EPS {
        wrap(f).min(wrap(f + 1.0))
    } else {
        wrap(t.round())
    }
}

/// Per-cell, per-heading collision probability aligned with a heightmap.
#[derive(Debug, Clone, PartialEq)]
pub struct AceMap {
    cols: usize,
    rows: usize,
    resolution: f64,
    origin: (f64, f64),
    /// `[channel][row][col]`.
    values: Vec<f32>,
}

impl AceMap {
    pub fn new(cols: usize, rows: usize, resolution: f64, origin: (f64, f64), values: Vec<f32>) -> Result<Self, HeuristicError> {
        if cols == 0 || rows == 0 {
            return Err(HeuristicError::Invalid("empty grid".into()));
        }
        if values.len() != HEADINGS * cols * rows {
            return Err(HeuristicError::Invalid(format!(
                "{} values for {HEADINGS} channels of {cols}x{rows}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(HeuristicError::Invalid(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { cols, rows, resolution, origin, values })
    }

    /// Grid and metadata of `map`, every value set to `fill`.
    pub fn filled_like(map: &Heightmap, fill: f32) -> Self {
        let (cols, rows) = (map.width_cells(), map.height_cells());
        Self { cols, rows, resolution: map.resolution(), origin: map.origin(), values: vec![fill; HEADINGS * cols * rows] }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.cols * self.rows;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, col: usize, row: usize) -> f32 {
        self.values[(k * self.rows + row) * self.cols + col]
    }

    fn set(&mut self, k: usize, col: usize, row: usize, v: f32) {
        self.values[(k * self.rows + row) * self.cols + col] = v;
    }

    /// Nearest cell to a world point, if it lies on the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let gx = ((x - self.origin.0) / self.resolution).round();
        let gy = ((y - self.origin.1) / self.resolution).round();
        if gx < 0.0 || gy < 0.0 || gx >= self.cols as f64 || gy >= self.rows as f64 || !gx.is_finite() || !gy.is_finite() {
            return None;
        }
        Some((gx as usize, gy as usize))
    }

    /// Constant-time nearest-cell, nearest-heading lookup. Off-grid poses
    /// are treated as certain collisions.
    pub fn lookup(&self, pose: &Pose) -> f64 {
        match self.cell_of(pose.x, pose.y) {
            Some((c, r)) => self.get(channel_of_heading(pose.heading), c, r) as f64,
            None => 1.0,
        }
    }

    /// 1 where the value exceeds `threshold`, else 0.
    pub fn binarized(&self, threshold: f64) -> AceMap {
        let values = self.values.iter().map(|&v| if v as f64 > threshold { 1.0 } else { 0.0 }).collect();
        AceMap { values, ..self.clone() }
    }

    /// Fraction of values above 0.5.
    pub fn positive_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v > 0.5).count() as f64 / self.values.len() as f64
    }

    /// Fraction of (cell, channel) pairs on which two maps agree at 0.5.
    pub fn agreement(&self, other: &AceMap) -> Result<f64, HeuristicError> {
        if (self.cols, self.rows) != (other.cols, other.rows) {
            return Err(HeuristicError::Invalid("maps differ in size".into()));
        }
        let same = self.values.iter().zip(&other.values).filter(|(a, b)| (**a > 0.5) == (**b > 0.5)).count();
        Ok(same as f64 / self.values.len() as f64)
    }

    /// Writes one binary PGM per channel, `<stem>_h<k>.pgm`, north up,
    /// 255 = certain collision.
    pub fn export_pgm(&self, stem: impl AsRef<Path>) -> Result<Vec<PathBuf>, HeuristicError> {
        let stem = stem.as_ref();
        let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut written = Vec::with_capacity(HEADINGS);
        for k in 0..HEADINGS {
            let path = stem.with_file_name(format!("{name}_h{k}.pgm"));
            let mut bytes = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
            for row in (0..self.rows).rev() {
                bytes.extend((0..self.cols).map(|c| (self.get(k, c, row).clamp(0.0, 1.0) * 255.0).round() as u8));
            }
            fs::write(&path, bytes).map_err(io_err(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

impl ProxyHeuristic for AceMap {
    fn proxy(&self, pose: &Pose) -> f64 {
        self.lookup(pose)
    }
}

/// Exact map: 0 where the checker accepts the cell-center pose at channel
/// heading, 1 otherwise (including footprints leaving the map).
pub fn compute_oracle_ace_map(map: &Heightmap, geom: &RoverGeometry) -> AceMap {
    let (cols, rows) = (map.width_cells(), map.height_cells());
    let per_row: Vec<Vec<[f32; HEADINGS]>> = (0..rows)
        .into_par_iter()
        .map(|row| {
            (0..cols)
                .map(|col| {
                    let (x, y) = map.cell_center(col, row);
                    let mut v = [1.0f32; HEADINGS];
                    for (k, slot) in v.iter_mut().enumerate() {
                        if evaluate_pose(map, &Pose::new(x, y, heading_of_channel(k)), geom).feasible {
                            *slot = 0.0;
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut out = AceMap::filled_like(map, 1.0);
    for (row, cells) in per_row.iter().enumerate() {
        for (col, v) in cells.iter().enumerate() {
            for (k, &val) in v.iter().enumerate() {
                out.set(k, col, row, val);
            }
        }
    }
    out
}

/// Cells of `map` whose footprint at a channel heading leaves the grid.
/// Depends only on grid size and geometry, not on heights.
pub fn out_of_bounds_mask(map: &Heightmap, geom: &RoverGeometry) -> AceMap {
    let (cols, rows) = (map.width_cells(), map.height_cells());
    let flat = Heightmap::flat(cols, rows, map.resolution(), 0.0);
    let band = (geom.reach() / map.resolution()).ceil() as usize + 2;
    let mut out = AceMap::filled_like(map, 0.0);
    for row in 0..rows {
        for col in 0..cols {
            let near_edge = col < band || row < band || col + band >= cols || row + band >= rows;
            if !near_edge {
                continue;
            }
            let (x, y) = flat.cell_center(col, row);
            for k in 0..HEADINGS {
                if evaluate_pose(&flat, &Pose::new(x, y, heading_of_channel(k)), geom).out_of_bounds {
                    out.set(k, col, row, 1.0);
                }
            }
        }
    }
    out.origin = map.origin();
    out
}

/// Mean-subtracted, scaled heights of a tile.
pub fn normalize_tile(heights: &[f32]) -> Vec<f32> {
    let mean = heights.iter().map(|&h| h as f64).sum::<f64>() / heights.len() as f64;
    heights.iter().map(|&h| ((h as f64 - mean) / HEIGHT_SCALE) as f32).collect()
}

fn tile_heights(map: &Heightmap, col0: usize, row0: usize, size: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(size * size);
    for r in row0..row0 + size {
        let start = r * map.width_cells() + col0;
        out.extend_from_slice(&map.heights()[start..start + size]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileMeta {
    pub terrain_index: usize,
    pub terrain: TerrainConfig,
    /// Grid column and row of the tile's first cell.
    pub tile_origin: (usize, usize),
    pub tile_size: usize,
}

/// Normalized heightmap tile and its binary 8-channel label (1 = infeasible).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub example: Example,
    pub meta: TileMeta,
}

/// Generates each terrain, labels it with the oracle and cuts
/// `samples_per_terrain` random aligned tiles. Tiles avoid the border band
/// where the footprint leaves the map whenever the interior is big enough.
pub fn build_dataset(
    configs: &[TerrainConfig],
    samples_per_terrain: usize,
    geom: &RoverGeometry,
    seed: u64,
) -> Result<Vec<TrainingPair>, HeuristicError> {
    build_dataset_sized(configs, samples_per_terrain, geom, seed, TILE)
}

pub fn build_dataset_sized(
    configs: &[TerrainConfig],
    samples_per_terrain: usize,
    geom: &RoverGeometry,
    seed: u64,
    tile: usize,
) -> Result<Vec<TrainingPair>, HeuristicError> {
    if configs.is_empty() {
        return Err(HeuristicError::NoConfigs);
    }
    let per_terrain: Vec<Result<Vec<TrainingPair>, HeuristicError>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let map = generate_terrain(cfg)?;
            let (cols, rows) = (map.width_cells(), map.height_cells());
            if tile > cols || tile > rows {
                return Err(HeuristicError::TileTooLarge { tile, cols, rows });
            }
            let oracle = compute_oracle_ace_map(&map, geom);
            let band = (geom.reach() / map.resolution()).ceil() as usize;
            let range = |n: usize| if n >= tile + 2 * band { (band, n - tile - band) } else { (0, n - tile) };
            let (c_lo, c_hi) = range(cols);
            let (r_lo, r_hi) = range(rows);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut pairs = Vec::with_capacity(samples_per_terrain);
            for _ in 0..samples_per_terrain {
                let col0 = rng.random_range(c_lo..=c_hi);
                let row0 = rng.random_range(r_lo..=r_hi);
                let input = normalize_tile(&tile_heights(&map, col0, row0, tile));
                let mut target = Vec::with_capacity(HEADINGS * tile * tile);
                for k in 0..HEADINGS {
                    for r in row0..row0 + tile {
                        target.extend((col0..col0 + tile).map(|c| (oracle.get(k, c, r) > 0.5) as u8));
                    }
                }
                pairs.push(TrainingPair {
                    example: Example { rows: tile, cols: tile, input, target },
                    meta: TileMeta { terrain_index: i, terrain: cfg.clone(), tile_origin: (col0, row0), tile_size: tile },
                });
            }
            Ok(pairs)
        })
        .collect();
    let mut out = Vec::with_capacity(configs.len() * samples_per_terrain);
    for r in per_terrain {
        out.extend(r?);
    }
    Ok(out)
}

/// Terrain configs for a training set: alternating benign and complex
/// draws from [`TerrainConfig::sample`].
pub fn desk_terrain_configs(count: usize, extent: f64, seed: u64) -> Vec<TerrainConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let class = if i % 2 == 0 { TerrainClass::Benign } else { TerrainClass::Complex };
            TerrainConfig::sample(&mut rng, class, extent)
        })
        .collect()
}

/// Fraction of label cells marked infeasible.
pub fn infeasible_fraction(pairs: &[TrainingPair]) -> f64 {
    let (ones, total) = pairs.iter().fold((0usize, 0usize), |(o, t), p| {
        (o + p.example.target.iter().filter(|&&v| v == 1).count(), t + p.example.target.len())
    });
    ones as f64 / total.max(1) as f64
}

/// Writes `pair_<i>/{input.f32,label.u8,meta.json}` under `dir`.
pub fn save_dataset(pairs: &[TrainingPair], dir: impl AsRef<Path>) -> Result<(), HeuristicError> {
    let dir = dir.as_ref();
    for (i, p) in pairs.iter().enumerate() {
        let sub = dir.join(format!("pair_{i:05}"));
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let input: Vec<u8> = p.example.input.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = sub.join("input.f32");
        fs::write(&path, input).map_err(io_err(&path))?;
        let path = sub.join("label.u8");
        fs::write(&path, &p.example.target).map_err(io_err(&path))?;
        let path = sub.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&p.meta).expect("meta serializes")).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads every `pair_*` directory under `dir`, in name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<TrainingPair>, HeuristicError> {
    let dir = dir.as_ref();
    let mut subs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("pair_")))
        .collect();
    subs.sort();
    subs.into_iter()
        .map(|sub| {
            let malformed = |reason: String| HeuristicError::Malformed { path: sub.clone(), reason };
            let path = sub.join("meta.json");
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let meta: TileMeta = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
            let n = meta.tile_size * meta.tile_size;
            let path = sub.join("input.f32");
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if bytes.len() != 4 * n {
                return Err(malformed(format!("input holds {} bytes, expected {}", bytes.len(), 4 * n)));
            }
            let input = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let path = sub.join("label.u8");
            let target = fs::read(&path).map_err(io_err(&path))?;
            if target.len() != HEADINGS * n || target.iter().any(|&v| v > 1) {
                return Err(malformed("label must hold 8 binary channels".into()));
            }
            Ok(TrainingPair { example: Example { rows: meta.tile_size, cols: meta.tile_size, input, target }, meta })
        })
        .collect()
}

/// Tile start offsets covering `n` cells with at least `TILE_OVERLAP`
/// overlap between neighbours.
fn tile_starts(n: usize, tile: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let stride = tile - TILE_OVERLAP;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < n).collect();
    starts.push(n - tile);
    starts
}

/// Index of the tile whose center is nearest to cell `i` (ties: earlier tile).
fn owning_tile(starts: &[usize], tile: usize, i: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (t, &s) in starts.iter().enumerate() {
        let d = (i as f64 + 0.5 - (s as f64 + tile as f64 / 2.0)).abs();
        if d < best_d {
            best = t;
            best_d = d;
        }
    }
    best
}

/// Runs the network over the whole map in overlapping 64-cell tiles and
/// stitches each cell from the tile whose center is nearest. Maps smaller
/// than a tile are edge-padded.
pub fn infer_ace_map(net: &Network, map: &Heightmap) -> Result<AceMap, HeuristicError> {
    let (cols, rows) = (map.width_cells(), map.height_cells());
    let (pc, pr) = (cols.max(TILE), rows.max(TILE));
    let padded: Vec<f32> = (0..pr)
        .flat_map(|r| (0..pc).map(move |c| (c.min(cols - 1), r.min(rows - 1))))
        .map(|(c, r)| map.heights()[r * cols + c])
        .collect();
    let col_starts = tile_starts(pc, TILE);
    let row_starts = tile_starts(pr, TILE);
    let mut outputs = Vec::with_capacity(col_starts.len() * row_starts.len());
    for &r0 in &row_starts {
        for &c0 in &col_starts {
            let mut tile = Vec::with_capacity(TILE * TILE);
            for r in r0..r0 + TILE {
                tile.extend_from_slice(&padded[r * pc + c0..r * pc + c0 + TILE]);
            }
            let input = normalize_tile(&tile).into_iter().map(|v| v as f64).collect();
            let out = net.forward(&Tensor4::new([1, 1, TILE, TILE], input)?)?;
            outputs.push(out.into_data());
        }
    }
    let col_owner: Vec<usize> = (0..cols).map(|c| owning_tile(&col_starts, TILE, c)).collect();
    let row_owner: Vec<usize> = (0..rows).map(|r| owning_tile(&row_starts, TILE, r)).collect();
    let mut ace = AceMap::filled_like(map, 0.0);
    for (r, &tr) in row_owner.iter().enumerate() {
        for (c, &tc) in col_owner.iter().enumerate() {
            let out = &outputs[tr * col_starts.len() + tc];
            let (lr, lc) = (r - row_starts[tr], c - col_starts[tc]);
            for k in 0..HEADINGS {
                ace.set(k, c, r, out[(k * TILE + lr) * TILE + lc] as f32);
            }
        }
    }
    Ok(ace)
}

/// Learned map over a square window of `half_size` meters around `(x, y)`,
/// with cells whose footprint leaves the full map forced to 1 using a mask
/// from [`out_of_bounds_mask`].
pub fn infer_ace_map_window(
    net: &Network,
    map: &Heightmap,
    oob_mask: &AceMap,
    center: (f64, f64),
    half_size: f64,
) -> Result<AceMap, HeuristicError> {
    let res = map.resolution();
    let (gx, gy) = map.to_grid(center.0, center.1);
    let half = (half_size / res).ceil() as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize) as usize;
    let c0 = clamp(gx.round() as isize - half, map.width_cells());
    let c1 = clamp(gx.round() as isize + half + 1, map.width_cells());
    let r0 = clamp(gy.round() as isize - half, map.height_cells());
    let r1 = clamp(gy.round() as isize + half + 1, map.height_cells());
    if c1 <= c0 || r1 <= r0 {
        return Err(HeuristicError::Invalid("window lies outside the map".into()));
    }
    let window = map.crop(c0, r0, c1 - c0, r1 - r0)?;
    let mut ace = infer_ace_map(net, &window)?;
    for k in 0..HEADINGS {
        for r in 0..ace.rows {
            for c in 0..ace.cols {
                if oob_mask.get(k, c + c0, r + r0) > 0.5 {
                    ace.set(k, c, r, 1.0);
                }
            }
        }
    }
    Ok(ace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn channel_snapping() {
        assert_eq!(channel_of_heading(PI / 2.0), 2);
        assert_eq!(channel_of_heading(PI / 8.0), 0);
        assert_eq!(channel_of_heading(-PI / 8.0), 0);
        assert_eq!(channel_of_heading(3.0 * PI / 8.0), 1);
        assert_eq!(channel_of_heading(-PI / 4.0), 7);
        assert_eq!(channel_of_heading(PI), 4);
        assert_eq!(channel_of_heading(-PI + 0.1), 4);
        assert_eq!(channel_of_heading(7.0 * PI / 8.0), 3);
        assert_eq!(channel_of_heading(-7.0 * PI / 8.0), 4);
        for k in 0..8 {
            assert_eq!(channel_of_heading(heading_of_channel(k)), k);
        }
    }

    #[test]
    fn lookup_cell_center_and_bounds() {
        let map = Heightmap::flat(10, 10, 0.5, 0.0);
        let mut ace = AceMap::filled_like(&map, 0.0);
        ace.set(2, 3, 4, 0.75);
        assert_eq!(ace.lookup(&Pose::new(1.5, 2.0, PI / 2.0)), 0.75);
        assert_eq!(ace.lookup(&Pose::new(1.6, 2.1, PI / 2.0 + 0.1)), 0.75);
        assert_eq!(ace.lookup(&Pose::new(1.5, 2.0, 0.0)), 0.0);
        assert_eq!(ace.lookup(&Pose::new(-1.0, 2.0, 0.0)), 1.0);
        assert_eq!(ace.lookup(&Pose::new(1.0, 5.0, 0.0)), 1.0);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(AceMap::new(1, 1, 0.1, (0.0, 0.0), vec![0.0; 7]).is_err());
        assert!(AceMap::new(1, 1, 0.1, (0.0, 0.0), vec![1.5; 8]).is_err());
        assert!(AceMap::new(1, 1, 0.1, (0.0, 0.0), vec![0.5; 8]).is_ok());
    }

    #[test]
    fn flat_oracle_border_band() {
        let map = Heightmap::flat(60, 60, 0.1, 0.0);
        let geom = RoverGeometry::default();
        let ace = compute_oracle_ace_map(&map, &geom);
        for k in 0..8 {
            assert_eq!(ace.get(k, 30, 30), 0.0);
            assert_eq!(ace.get(k, 0, 30), 1.0);
            assert_eq!(ace.get(k, 59, 59), 1.0);
        }
        assert_eq!(ace, {
            let mut m = out_of_bounds_mask(&map, &geom);
            m.origin = map.origin();
            m
        });
    }

    #[test]
    fn tiling_covers_with_overlap() {
        assert_eq!(tile_starts(64, 64), vec![0]);
        assert_eq!(tile_starts(130, 64), vec![0, 56, 66]);
        assert_eq!(tile_starts(200, 64), vec![0, 56, 112, 136]);
        let starts = tile_starts(200, 64);
        for i in 0..200 {
            let t = owning_tile(&starts, 64, i);
            assert!(i >= starts[t] && i < starts[t] + 64);
        }
    }

    #[test]
    fn tile_too_large() {
        let cfg = TerrainConfig { extent: 4.0, ..TerrainConfig::default() };
        let err = build_dataset(&[cfg], 1, &RoverGeometry::default(), 0).unwrap_err();
        assert!(matches!(err, HeuristicError::TileTooLarge { .. }));
    }
}
