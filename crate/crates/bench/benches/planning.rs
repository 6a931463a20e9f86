use criterion::{black_box, criterion_group, criterion_main, Criterion};

use mlnav_bench::complex_map;
use mlnav_core::convnet::{Network, NetworkSpec, Tensor4};
use mlnav_core::heuristic::compute_oracle_ace_map;
use mlnav_core::{build_tree, evaluate_pose, plan_baseline, plan_mlnav, CostParams, Goal, Pose, RoverGeometry, TreeSpec};

fn checker(c: &mut Criterion) {
    let map = complex_map();
    let geom = RoverGeometry::default();
    let pose = Pose::new(10.0, 10.0, 0.7);
    c.bench_function("evaluate_pose", |b| b.iter(|| evaluate_pose(black_box(&map), black_box(&pose), &geom)));
}

fn planners(c: &mut Criterion) {
    let map = complex_map();
    let geom = RoverGeometry::default();
    let lib = build_tree(&TreeSpec::default_tree(), Pose::new(4.0, 10.0, 0.0)).unwrap();
    let goal = Goal::point(18.0, 10.0);
    let params = CostParams::default();
    c.bench_function("build_tree_default", |b| b.iter(|| build_tree(&TreeSpec::default_tree(), black_box(Pose::new(4.0, 10.0, 0.0)))));
    c.bench_function("plan_baseline_default", |b| b.iter(|| plan_baseline(&lib, &map, goal, &geom, &params)));
    let oracle = compute_oracle_ace_map(&map, &geom);
    c.bench_function("plan_mlnav_oracle_default", |b| b.iter(|| plan_mlnav(&lib, &oracle, &map, goal, &geom, &params)));
}

fn network(c: &mut Criterion) {
    let net = Network::init(NetworkSpec::unet_small(), 0).unwrap();
    let input = Tensor4::new([1, 1, 64, 64], (0..4096).map(|i| (i as f64 * 0.01).sin() * 0.2).collect()).unwrap();
    c.bench_function("forward_64x64", |b| b.iter(|| net.forward(black_box(&input)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = checker, planners, network
}
criterion_main!(benches);
