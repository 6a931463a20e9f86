mod common;

use mlnav_core::convnet::{backward, evaluate, forward, train, ConvError, Example, NetLayer, TrainConfig};
use mlnav_core::{ModelWeights, Network, NetworkSpec, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gradient_check, tiny_spec};

fn random_examples(n: usize, side: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Example {
            rows: side,
            cols: side,
            input: (0..side * side).map(|_| rng.random_range(-0.5f32..0.5)).collect(),
            target: (0..8 * side * side).map(|_| rng.random_range(0..2u8)).collect(),
        })
        .collect()
}

#[test]
fn backprop_matches_central_differences() {
    for seed in [1, 2, 3] {
        let probes = gradient_check(tiny_spec(), seed, 30, 1e-4);
        assert_eq!(probes.len(), 30);
        for p in &probes {
            assert!(p.relative_error() < 1e-3, "seed {seed} param {}: {} vs {}", p.index, p.analytic, p.numeric);
        }
    }
}

#[test]
fn unet_gradients_match_central_differences() {
    // The default architecture exercises pooling, upsampling and skips.
    let probes = gradient_check(NetworkSpec::unet_small(), 9, 30, 1e-4);
    let worst = probes.iter().map(|p| p.relative_error()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn input_gradient_matches_central_differences() {
    let spec = tiny_spec();
    let net = Network::init(spec.clone(), 4).unwrap();
    let weights = net.to_weights(serde_json::Value::Null);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
    let net32 = Network::from_weights(&weights).unwrap();
    let objective = |x: &[f64]| -> f64 {
        let out = net32.forward(&Tensor4::new([1, 1, 8, 8], x.to_vec()).unwrap()).unwrap();
        out.data().iter().zip(&g).map(|(o, g)| o * g).sum()
    };
    let grads = backward(&spec, &weights, &Tensor4::new([1, 1, 8, 8], x.clone()).unwrap(), &Tensor4::new([1, 8, 8, 8], g.clone()).unwrap())
        .unwrap();
    for i in (0..64).step_by(5) {
        let (mut up, mut down) = (x.clone(), x.clone());
        up[i] += 1e-5;
        down[i] -= 1e-5;
        let numeric = (objective(&up) - objective(&down)) / 2e-5;
        let analytic = grads.input.data()[i];
        assert!((analytic - numeric).abs() / analytic.abs().max(1e-8) < 1e-3, "input {i}: {analytic} vs {numeric}");
    }
}

#[test]
fn constant_labels_drive_outputs_high() {
    let mut examples = random_examples(4, 8, 11);
    for ex in &mut examples {
        ex.target.fill(1);
    }
    let cfg = TrainConfig { lr: 0.1, epochs: 60, batch: 2, seed: 3, ..Default::default() };
    let out = train(&tiny_spec(), &examples, &examples, &cfg, |_| {}).unwrap();
    let net = Network::from_weights(&out.weights).unwrap();
    for ex in &examples {
        let input: Vec<f64> = ex.input.iter().map(|&v| v as f64).collect();
        let cache = net.forward_cached(&input, 8, 8).unwrap();
        let lowest = cache.output().iter().copied().fold(1.0, f64::min);
        assert!(lowest > 0.95, "{lowest}");
    }
}

#[test]
fn ten_sample_overfit() {
    // Inputs keep a margin from zero and labels are their sign, so a small
    // net can fit every pixel.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let examples: Vec<Example> = (0..10)
        .map(|_| {
            let input: Vec<f32> = (0..64)
                .map(|_| rng.random_range(0.2f32..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            let target = (0..8).flat_map(|k| input.iter().map(move |&v| u8::from((v > 0.0) == (k % 2 == 0)))).collect();
            Example { rows: 8, cols: 8, input, target }
        })
        .collect();
    let cfg = TrainConfig { lr: 0.05, momentum: 0.9, epochs: 500, batch: 10, seed: 7 };
    let mut reached = None;
    let out = train(&tiny_spec(), &examples, &examples, &cfg, |e| {
        if e.val_loss < 0.05 && reached.is_none() {
            reached = Some(e.epoch);
        }
    })
    .unwrap();
    let losses: Vec<f64> = out.log.iter().map(|e| e.val_loss).collect();
    assert!(reached.is_some(), "final loss {}", losses.last().unwrap());
    println!("loss below 0.05 after {} epochs", reached.unwrap() + 1);
    // Full-batch loss never goes up.
    let rises: Vec<(usize, f64)> = losses.windows(2).enumerate().filter(|(_, w)| w[1] > w[0]).map(|(i, w)| (i, w[1] - w[0])).collect();
    assert!(rises.is_empty(), "{rises:?}");
}

#[test]
fn training_is_deterministic() {
    let examples = random_examples(6, 16, 13);
    let cfg = TrainConfig { epochs: 3, batch: 4, seed: 21, ..Default::default() };
    let spec = NetworkSpec::unet_small();
    let a = train(&spec, &examples, &examples, &cfg, |_| {}).unwrap();
    let b = train(&spec, &examples, &examples, &cfg, |_| {}).unwrap();
    let bits = |w: &ModelWeights| w.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.weights), bits(&b.weights));
    assert_eq!(a.log, b.log);
    let c = train(&spec, &examples, &examples, &TrainConfig { seed: 22, ..cfg }, |_| {}).unwrap();
    assert_ne!(bits(&a.weights), bits(&c.weights));
}

#[test]
fn weights_round_trip_and_reject_foreign_specs() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("model");
    let weights = Network::init(NetworkSpec::unet_small(), 8).unwrap().to_weights(serde_json::json!({"note": "x"}));
    weights.save(&stem).unwrap();
    let back = ModelWeights::load(&stem).unwrap();
    assert_eq!(back, weights);
    assert!(back.values.iter().zip(&weights.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(matches!(ModelWeights::load_for(&stem, &tiny_spec()), Err(ConvError::SpecMismatch { .. })));

    // A manifest whose recorded hash disagrees with its spec is refused.
    let manifest = dir.path().join("model.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["spec_hash"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&manifest, json.to_string()).unwrap();
    assert!(matches!(ModelWeights::load(&stem), Err(ConvError::SpecMismatch { .. })));

    // Truncated payloads are a parameter-count error.
    weights.save(&stem).unwrap();
    let payload = dir.path().join("model.f32");
    let bytes = std::fs::read(&payload).unwrap();
    std::fs::write(&payload, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(ModelWeights::load(&stem), Err(ConvError::ParamCount { .. })));
}

#[test]
fn forward_refuses_mismatched_weights() {
    let weights = Network::init(tiny_spec(), 1).unwrap().to_weights(serde_json::Value::Null);
    let err = forward(&NetworkSpec::unet_small(), &weights, &Tensor4::zeros([1, 1, 8, 8])).unwrap_err();
    assert!(matches!(err, ConvError::SpecMismatch { .. }));
}

#[test]
fn accuracy_counts_thresholded_matches() {
    let spec = NetworkSpec { input_channels: 1, layers: vec![NetLayer::Conv { in_ch: 1, out_ch: 8 }, NetLayer::Sigmoid] };
    let mut params = vec![0.0; spec.parameter_count()];
    // Biases: four channels lean positive, four negative.
    for k in 0..8 {
        params[8 * 9 + k] = if k < 4 { 1.0 } else { -1.0 };
    }
    let net = Network::new(spec, params).unwrap();
    let ex = Example { rows: 4, cols: 4, input: vec![0.0; 16], target: vec![1; 128] };
    let (_, acc) = evaluate(&net, &[ex]);
    assert_eq!(acc, 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn outputs_stay_inside_the_unit_interval(seed in 0u64..1000, side in prop::sample::select(vec![4usize, 8, 12, 20]), scale in 0.01f64..5.0) {
        let net = Network::init(NetworkSpec::unet_small(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input: Vec<f64> = (0..2 * side * side).map(|_| rng.random_range(-scale..scale)).collect();
        let out = net.forward(&Tensor4::new([2, 1, side, side], input).unwrap()).unwrap();
        prop_assert_eq!(out.dims(), [2, 8, side, side]);
        prop_assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
