//! Benchmark fixtures shared by the criterion targets.

use mlnav_core::{generate_terrain, Heightmap, TerrainConfig};

/// A 20 m rocky map on a mild slope.
pub fn complex_map() -> Heightmap {
    let cfg = TerrainConfig { base_slope: 6.0, cfa: 0.12, noise_amplitude: 0.04, rng_seed: 17, ..TerrainConfig::default() };
    generate_terrain(&cfg).expect("valid config")
}
