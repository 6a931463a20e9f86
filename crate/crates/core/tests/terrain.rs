use std::fs;

use mlnav_core::terrain::{generate_terrain_with_rocks, rock_area_fraction, TerrainError};
use mlnav_core::{generate_terrain, Heightmap, TerrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rough_map(seed: u64) -> Heightmap {
    generate_terrain(&TerrainConfig { cfa: 0.05, noise_amplitude: 0.05, base_slope: 4.0, rng_seed: seed, ..Default::default() })
        .unwrap()
}

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let map = rough_map(3);
    map.save(dir.path().join("m")).unwrap();
    let back = Heightmap::load(dir.path().join("m")).unwrap();
    assert_eq!(back, map);
    assert!(back.heights().iter().zip(map.heights()).all(|(a, b)| a.to_bits() == b.to_bits()));
    // Either file of the pair names the map.
    assert_eq!(Heightmap::load(dir.path().join("m.f32")).unwrap(), map);
}

#[test]
fn truncated_payload_is_a_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    Heightmap::flat(20, 20, 0.1, 0.0).save(&stem).unwrap();
    let payload = dir.path().join("m.f32");
    let bytes = fs::read(&payload).unwrap();
    fs::write(&payload, &bytes[..bytes.len() - 8]).unwrap();
    match Heightmap::load(&stem) {
        Err(TerrainError::SizeMismatch { expected: 400, actual: 398 }) => {}
        other => panic!("expected size mismatch, got {other:?}"),
    }
}

#[test]
fn bad_header_and_nan_payload_have_their_own_errors() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    Heightmap::flat(16, 16, 0.1, 0.0).save(&stem).unwrap();

    fs::write(dir.path().join("m.json"), r#"{"width_cells": 16, "height_cells": 16}"#).unwrap();
    assert!(matches!(Heightmap::load(&stem), Err(TerrainError::MalformedHeader(_))));
    fs::write(
        dir.path().join("m.json"),
        r#"{"width_cells": 16, "height_cells": 16, "resolution_m": -1.0, "origin_m": [0, 0]}"#,
    )
    .unwrap();
    assert!(matches!(Heightmap::load(&stem), Err(TerrainError::MalformedHeader(_))));

    Heightmap::flat(16, 16, 0.1, 0.0).save(&stem).unwrap();
    let payload = dir.path().join("m.f32");
    let mut bytes = fs::read(&payload).unwrap();
    bytes[40..44].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&payload, bytes).unwrap();
    assert!(matches!(Heightmap::load(&stem), Err(TerrainError::NonFinite { index: 10 })));
}

#[test]
fn five_centimeter_map_keeps_its_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("dem");
    fs::write(
        dir.path().join("dem.json"),
        r#"{"width_cells": 32, "height_cells": 24, "resolution_m": 0.05, "origin_m": [10.0, -4.0]}"#,
    )
    .unwrap();
    let payload: Vec<u8> = (0..32 * 24).flat_map(|i| (i as f32 * 0.001).to_le_bytes()).collect();
    fs::write(dir.path().join("dem.f32"), payload).unwrap();
    let map = Heightmap::load(&stem).unwrap();
    assert_eq!(map.resolution(), 0.05);
    assert_eq!((map.width_cells(), map.height_cells()), (32, 24));
    // Row 0 is the minimum y.
    assert_eq!(map.height_at(10.0, -4.0).unwrap(), 0.0);
    assert_eq!(map.height_at(10.0 + 0.05, -4.0 + 0.05).unwrap(), (33.0f32 * 0.001) as f64);
}

#[test]
fn plane_interpolation_matches_analytic_heights() {
    // Dyadic slope and resolution keep every stored value exact in f32.
    let (sx, sy) = (0.25, -0.125);
    let plane = |x: f64, y: f64| sx * x + sy * y + 1.0;
    let map = Heightmap::from_fn(64, 64, 0.125, (0.0, 0.0), plane);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let max = 63.0 * 0.125;
    for _ in 0..100 {
        let (x, y) = (rng.random_range(0.0..max), rng.random_range(0.0..max));
        let h = map.height_at(x, y).unwrap();
        assert!((h - plane(x, y)).abs() < 1e-9, "({x}, {y}): {h} vs {}", plane(x, y));
    }
}

#[test]
fn midpoint_and_bounds() {
    let map = Heightmap::from_fn(16, 16, 1.0, (0.0, 0.0), |x, _| if x < 0.5 { 0.0 } else { 1.0 });
    assert_eq!(map.height_at(0.5, 3.0).unwrap(), 0.5);
    assert!(matches!(map.height_at(-0.01, 3.0), Err(TerrainError::OutOfBounds { .. })));
    assert!(matches!(map.height_at(3.0, 15.01), Err(TerrainError::OutOfBounds { .. })));
}

#[test]
fn generation_is_byte_deterministic() {
    let a = rough_map(41);
    let b = rough_map(41);
    let bits = |m: &Heightmap| m.heights().iter().map(|h| h.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&rough_map(42)));
}

#[test]
fn cfa_is_met_within_ten_percent() {
    for (i, cfa) in [0.01, 0.03, 0.07, 0.12, 0.15].into_iter().enumerate() {
        for seed in 0..4 {
            let config = TerrainConfig { cfa, rng_seed: seed * 10 + i as u64, ..Default::default() };
            let generated = generate_terrain_with_rocks(&config).unwrap();
            let achieved = rock_area_fraction(&generated.rocks, config.extent * config.extent);
            assert!((achieved - cfa).abs() <= 0.1 * cfa, "cfa {cfa} seed {seed}: {achieved}");
        }
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let bad = TerrainConfig { cfa: 0.9, ..Default::default() };
    match generate_terrain(&bad) {
        Err(TerrainError::InvalidConfig { field, .. }) => assert_eq!(field, "cfa"),
        other => panic!("expected invalid config, got {other:?}"),
    }
    let tiny = TerrainConfig { extent: 1.0, ..Default::default() };
    assert!(matches!(generate_terrain(&tiny), Err(TerrainError::GridTooSmall { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cell_centers_return_stored_heights(seed in 0u64..1000, col in 0usize..200, row in 0usize..200) {
        let map = generate_terrain(&TerrainConfig { noise_amplitude: 0.05, base_slope: 7.0, slope_azimuth: 33.0, rng_seed: seed, ..Default::default() }).unwrap();
        let (x, y) = map.cell_center(col, row);
        prop_assert_eq!(map.height_at(x, y).unwrap(), map.cell(col, row));
    }
}
