use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use quick_xml::events::Event;
use quick_xml::Reader;

fn mlnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlnav")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifests(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().file_name() == "manifest.json").count()
}

#[test]
fn terrain_writes_count_pairs_and_reuses_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("terrain.json");
    fs::write(&cfg, r#"{"extent": 8.0, "resolution": 0.1, "base_slope": 5.0, "slope_azimuth": 30.0, "cfa": 0.08, "noise_amplitude": 0.03, "rng_seed": 4}"#).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mlnav(&["terrain", path(&cfg), "--out", path(out), "--count", "5", "--seed", "17"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for i in 0..5 {
        for ext in ["json", "f32"] {
            let name = format!("terrain_{i:03}.{ext}");
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
    assert_ne!(fs::read(a.join("terrain_000.f32")).unwrap(), fs::read(a.join("terrain_001.f32")).unwrap());
    assert_eq!(manifests(&a), 1);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "terrain");
    assert_eq!(m["seeds"]["terrain"], serde_json::json!([17, 18, 19, 20, 21]));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 10);
}

#[test]
fn invalid_terrain_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("terrain.json");
    fs::write(&cfg, r#"{"cfa": 0.9}"#).unwrap();
    let o = mlnav(&["terrain", path(&cfg), "--out", path(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cfa"), "{}", String::from_utf8_lossy(&o.stderr));
}

const TRIALS_HEADER: &str =
    "trial,planner,terrain_class,terrain_seed,seed,outcome,driven_length,straight_line,path_inefficiency,cycles,total_checks,error";

#[test]
fn report_recomputes_success_rate_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.csv");
    fs::write(
        &trials,
        format!(
            "{TRIALS_HEADER}\n\
             0,baseline,benign,1,0,success,17.0,16.0,6.25,3,72,\n\
             1,baseline,benign,2,1,success,16.0,16.0,0.0,3,48,\n\
             2,baseline,benign,3,2,timeout,30.0,16.0,87.5,10,240,\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = mlnav(&["report", path(&trials), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let benign = &report["planners"]["baseline"]["benign"];
    assert_eq!(benign["trials"], 3);
    assert!((benign["success_rate"].as_f64().unwrap() - 200.0 / 3.0).abs() < 1e-9);
    assert!((benign["path_inefficiency"].as_f64().unwrap() - 3.125).abs() < 1e-9);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), [o.stdout.as_slice()].concat());
    assert_eq!(manifests(&out), 1);
}

#[test]
fn report_flags_a_tampered_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.csv");
    fs::write(&trials, format!("{TRIALS_HEADER}\n0,baseline,benign,1,0,success,16.0,16.0,0.0,3,48,\n")).unwrap();
    let o = mlnav(&["report", path(&trials)]);
    assert!(o.status.success());
    let mut report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    fs::write(dir.path().join("report.json"), report.to_string()).unwrap();
    assert!(mlnav(&["report", path(&trials)]).status.success());
    report["planners"]["baseline"]["benign"]["success_rate"] = serde_json::json!(50.0);
    fs::write(dir.path().join("report.json"), report.to_string()).unwrap();
    assert_eq!(mlnav(&["report", path(&trials)]).status.code(), Some(4));
}

#[test]
fn drive_on_flat_terrain_renders_well_formed_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("drive.json");
    fs::write(
        &cfg,
        r#"{"terrain": {"extent": 20.0}, "start": {"x": 2.0, "y": 10.0, "heading": 0.0}, "goal": [18.0, 10.0], "sim": {"planner_kind": "mlnav_oracle"}}"#,
    )
    .unwrap();
    let out = dir.path().join("drive");
    let o = mlnav(&["drive", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("success"));

    let svg = fs::read_to_string(out.join("drive.svg")).unwrap();
    let mut reader = Reader::from_str(&svg);
    let (mut elements, mut root) = (0, None);
    loop {
        match reader.read_event().expect("well-formed XML") {
            Event::Eof => break,
            Event::Start(e) | Event::Empty(e) => {
                elements += 1;
                root.get_or_insert_with(|| String::from_utf8(e.name().as_ref().to_vec()).unwrap());
            }
            _ => {}
        }
    }
    assert_eq!(root.as_deref(), Some("svg"));
    assert!(elements > 3);

    // The driven path runs along y = 10.
    let trial: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("trial.json")).unwrap()).unwrap();
    let y = trial["final_pose"]["y"].as_f64().unwrap();
    assert!((y - 10.0).abs() < 1e-6, "{y}");

    // Rendering again from the written files gives the same picture.
    let again = dir.path().join("render/drive.svg");
    let o = mlnav(&["render", path(&out.join("map")), path(&out.join("trial.json")), "--out", path(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&again).unwrap(), svg);
    assert_eq!(manifests(&out), 1);
}

#[test]
fn campaign_report_ignores_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("campaign.json");
    fs::write(&cfg, r#"{"benign": 2, "complex": 2, "planners": ["baseline", "mlnav_oracle"], "seed": 3}"#).unwrap();
    let run = |p: &str| {
        let out = dir.path().join(format!("p{p}"));
        let o = mlnav(&["campaign", path(&cfg), "--out", path(&out), "--parallelism", p]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(manifests(&out), 1);
        out
    };
    let (one, four) = (run("1"), run("4"));
    for f in ["report.json", "trials.csv", "cycles.csv"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(four.join(f)).unwrap(), "{f}");
    }
    // The bundled report agrees with the CSVs.
    let o = mlnav(&["report", path(&one.join("trials.csv"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn learned_campaign_without_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("campaign.json");
    fs::write(&cfg, r#"{"benign": 1, "complex": 0, "planners": ["mlnav_learned"]}"#).unwrap();
    let o = mlnav(&["campaign", path(&cfg), "--out", path(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
}
