#![allow(dead_code)]

use mlnav_core::convnet::{bce_with_logits, NetLayer};
use mlnav_core::{Network, NetworkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two 3×3 convolutions with a ReLU between them.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input_channels: 1,
        layers: vec![
            NetLayer::Conv { in_ch: 1, out_ch: 4 },
            NetLayer::Relu,
            NetLayer::Conv { in_ch: 4, out_ch: 8 },
            NetLayer::Sigmoid,
        ],
    }
}

pub struct GradientProbe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientProbe {
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(1e-8)
    }
}

/// Compares backprop against central differences of the mean BCE loss on
/// an 8×8 input for `count` distinct random parameters.
pub fn gradient_check(spec: NetworkSpec, seed: u64, count: usize, eps: f64) -> Vec<GradientProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(spec, seed).unwrap();
    let input: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target: Vec<u8> = (0..8 * 64).map(|_| rng.random_range(0..2)).collect();
    let loss = |net: &Network| bce_with_logits(net.forward_cached(&input, 8, 8).unwrap().logits(), &target).0;

    let cache = net.forward_cached(&input, 8, 8).unwrap();
    let (_, grad_logits) = bce_with_logits(cache.logits(), &target);
    let mut analytic = vec![0.0; net.params().len()];
    net.backward_logits(&cache, &grad_logits, &mut analytic, false);

    let mut indices: Vec<usize> = (0..analytic.len()).collect();
    for i in 0..count.min(indices.len()) {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
        .into_iter()
        .map(|index| {
            let original = net.params()[index];
            net.params_mut()[index] = original + eps;
            let up = loss(&net);
            net.params_mut()[index] = original - eps;
            let down = loss(&net);
            net.params_mut()[index] = original;
            GradientProbe { index, analytic: analytic[index], numeric: (up - down) / (2.0 * eps) }
        })
        .collect()
}

/// Recomputes the campaign metrics from `trials.csv` and `cycles.csv` by
/// reading raw CSV fields, sharing no code with the library's aggregation.
/// Returns the `planners` object of `report.json` with config echoes null.
pub fn recompute_report(dir: &std::path::Path) -> serde_json::Value {
    use std::collections::BTreeMap;

    let read = |name: &str| -> Vec<BTreeMap<String, String>> {
        let mut r = csv::Reader::from_path(dir.join(name)).unwrap();
        let headers = r.headers().unwrap().clone();
        r.records()
            .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
            .collect()
    };
    let trials = read("trials.csv");
    let cycles = read("cycles.csv");
    let mut cycles_of: BTreeMap<String, Vec<&BTreeMap<String, String>>> = BTreeMap::new();
    for c in &cycles {
        cycles_of.entry(c["trial"].clone()).or_default().push(c);
    }

    #[derive(Default)]
    struct Acc {
        trials: usize,
        successes: usize,
        inefficiency_sum: f64,
        cycles: usize,
        checks: usize,
        overthinks: usize,
    }
    let mut acc: BTreeMap<(String, String), Acc> = BTreeMap::new();
    let mut planners: BTreeMap<String, usize> = BTreeMap::new();
    for t in &trials {
        if t["outcome"] == "error" {
            continue;
        }
        *planners.entry(t["planner"].clone()).or_default() += 1;
        let a = acc.entry((t["planner"].clone(), t["terrain_class"].clone())).or_default();
        a.trials += 1;
        if t["outcome"] == "success" {
            a.successes += 1;
            let d: f64 = t["driven_length"].parse().unwrap();
            let s: f64 = t["straight_line"].parse().unwrap();
            a.inefficiency_sum += (100.0 * (d - s) / s).max(0.0);
        }
        let mut rows = cycles_of.get(&t["trial"]).cloned().unwrap_or_default();
        rows.sort_by_key(|c| c["cycle"].parse::<usize>().unwrap());
        for c in rows {
            a.cycles += 1;
            a.checks += c["ace_checks"].parse::<usize>().unwrap();
            a.overthinks += usize::from(c["overthink"] == "1");
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut out = serde_json::Map::new();
    for (planner, n) in planners {
        let class = |name: &str| match acc.get(&(planner.clone(), name.to_string())) {
            None => serde_json::Value::Null,
            Some(a) => serde_json::json!({
                "trials": a.trials,
                "cycles": a.cycles,
                "success_rate": 100.0 * ratio(a.successes, a.trials),
                "path_inefficiency": (a.successes > 0).then(|| a.inefficiency_sum / a.successes as f64),
                "mean_collision_checks": ratio(a.checks, a.cycles),
                "overthink_rate": 100.0 * ratio(a.overthinks, a.cycles),
            }),
        };
        out.insert(
            planner.clone(),
            serde_json::json!({ "benign": class("benign"), "complex": class("complex"), "trials": n, "config": null }),
        );
    }
    serde_json::Value::Object(out)
}

/// `planners` of a written `report.json` with config echoes nulled.
pub fn written_planners(dir: &std::path::Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let mut report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut planners = report["planners"].take();
    for (_, p) in planners.as_object_mut().unwrap() {
        p["config"] = serde_json::Value::Null;
    }
    planners
}
