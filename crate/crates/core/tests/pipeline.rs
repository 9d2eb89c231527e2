//! End-to-end smoke tests over the bundled scenarios: load, run, log
//! round-trip and replay verification.

use std::path::{Path, PathBuf};

use stylesim::runtime::config::{RunConfig, ScenarioConfig};
use stylesim::runtime::{replay, run, RunOptions};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("assets/scenarios")
        .join(name)
}

fn load(name: &str, overrides: &[(&str, &str)]) -> RunConfig {
    let pairs: Vec<(String, String)> = overrides
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    ScenarioConfig::load(&scenario_path(name), &pairs).expect("scenario loads")
}

#[test]
fn bundled_scenarios_load_and_validate() {
    for name in [
        "corridor.json",
        "free_flow.json",
        "lead_brake.json",
        "two_lane.json",
        "example.json",
    ] {
        let cfg = load(name, &[]);
        cfg.validate().expect("scenario validates");
    }
}

#[test]
fn two_lane_blockage_forces_a_lane_change() {
    let cfg = load("two_lane.json", &[]);
    let out = run(cfg, RunOptions::default()).expect("run succeeds");
    assert_eq!(out.log.steps.len(), 1201);

    let last = out.log.steps.last().unwrap();
    let rec = &last.agents["v00"];
    assert_eq!(rec.lane.as_deref(), Some("a2"), "agent should sidestep onto a2");
    assert!(rec.pose.x > 160.0, "agent should clear the blockage, got x={}", rec.pose.x);
    assert!(
        (rec.pose.y - 3.5).abs() < 1.5,
        "agent should settle near the a2 centerline, got y={}",
        rec.pose.y
    );

    let events: Vec<_> = out.log.steps.iter().flat_map(|s| &s.events).collect();
    assert!(events.is_empty(), "clean avoidance expected, got {events:?}");
}

#[test]
fn example_run_replays_and_round_trips() {
    let cfg = load("example.json", &[("max_steps", "600")]);
    let out = run(cfg, RunOptions::default()).expect("run succeeds");
    assert_eq!(out.log.steps.len(), 601);

    let report = replay::verify(&out.log).expect("replay walks the log");
    assert!(report.ok(), "replay mismatches: {:?}", &report.first_mismatch);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("example.jsonl");
    out.log.save(&path).expect("save");
    let reread = stylesim::runtime::log::TrajectoryLog::load(&path).expect("load");
    assert_eq!(reread.digest(), out.log.digest());
}

#[test]
fn styled_agents_log_translations_and_diverge() {
    let cfg = load("example.json", &[("max_steps", "400")]);
    let out = run(cfg, RunOptions::default()).expect("run succeeds");

    let first = &out.log.steps[0];
    for (id, rec) in &first.agents {
        assert_eq!(
            rec.translations.len(),
            1,
            "agent {id} should log exactly one init translation at step 0"
        );
    }

    let mut diverged: Vec<&str> = Vec::new();
    for id in ["v01", "v02", "v03", "v04", "v05"] {
        let moved = out
            .log
            .steps
            .iter()
            .any(|s| !s.agents[id].divergence.is_zero());
        if moved {
            diverged.push(id);
        }
    }
    assert_eq!(
        diverged,
        vec!["v01", "v02", "v03", "v04", "v05"],
        "every styled agent should show perception divergence somewhere"
    );

    let v00_clean = out
        .log
        .steps
        .iter()
        .all(|s| s.agents["v00"].divergence.is_zero());
    assert!(v00_clean, "the normal agent must never diverge from truth");
}

#[test]
fn free_flow_platoon_completes_clean() {
    let cfg = load("free_flow.json", &[("max_steps", "1500")]);
    let out = run(cfg, RunOptions::default()).expect("run succeeds");
    let events: Vec<_> = out.log.steps.iter().flat_map(|s| &s.events).collect();
    assert!(events.is_empty(), "free flow should be clean, got {events:?}");

    let report = replay::verify(&out.log).expect("replay walks the log");
    assert!(report.ok(), "replay mismatches: {:?}", &report.first_mismatch);
}
