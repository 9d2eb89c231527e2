//! Release acceptance suite. Each test checks one criterion end to end and
//! prints a single `ACCEPTANCE Cnn <name>: PASS|FAIL` line (visible with
//! `--nocapture`; failing tests always show it). The criteria:
//!
//!  C1  translation schedule and attentional trigger rate
//!  C2  bit-level determinism, replay verification, order independence
//!  C3  non-intrusiveness of the perception modulation layer
//!  C4  log-ratio consistency guard holds across entire runs
//!  C5  directional behavioural effects of every shipped style
//!  C6  style separability of extracted features under k-NN
//!  C7  metric implementations against independent oracles
//!  C8  styled agents stay safe in obstacle-free traffic
//!  C9  per-step cost scaling from 30 to 70 agents
//!  C10 translator robustness against an adversarial provider
//!
//! The heavy criteria drive the bundled scenarios dozens of times; the
//! whole suite finishes in a few minutes on a single laptop core.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stylesim::dcl::DclParams;
use stylesim::geometry::{Obb, Vec2};
use stylesim::map::{MapLane, RoadMap};
use stylesim::metrics::{
    driving_score, feature_windows, macro_f1, wasserstein_1d, FeatureVector, KnnClassifier,
    Penalties,
};
use stylesim::pmbi::{apply_script, ApiCall, ModulationState, Relation, Script, Selector};
use stylesim::runtime::config::AgentConfig;
use stylesim::runtime::log::{
    AgentRecord, EventKind, InfractionEvent, StepRecord, TrajectoryLog,
};
use stylesim::runtime::{replay, run, RunOptions};
use stylesim::scene::{extract_bev, Pose, ViewProvenance};
use stylesim::style::{generate_description, Layer, StyleSchedule, StyleTriplet, TraitRegistry};
use stylesim::translator::{
    CatalogTranslator, CompletionTransport, ProviderTranslator, ScriptCatalog, TranslationMode,
    TranslationRequest, Translator, TranslatorError,
};
use stylesim::{RunConfig, ScenarioConfig};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

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

fn triplet(l1: &str, l2: &str, l3: &str) -> StyleTriplet {
    StyleTriplet {
        l1: l1.to_string(),
        l2: l2.to_string(),
        l3: l3.to_string(),
    }
}

/// Accumulates named check failures for one criterion and prints the
/// verdict line. Panics on finish if anything failed, so the suite's
/// pass/fail state and libtest's agree.
struct Criterion {
    id: &'static str,
    name: &'static str,
    failures: Vec<String>,
}

impl Criterion {
    fn new(id: &'static str, name: &'static str) -> Criterion {
        Criterion {
            id,
            name,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }

    fn finish(self, detail: &str) {
        let suffix = if detail.is_empty() {
            String::new()
        } else {
            format!(" [{detail}]")
        };
        if self.failures.is_empty() {
            println!("ACCEPTANCE {} {}: PASS{}", self.id, self.name, suffix);
        } else {
            println!("ACCEPTANCE {} {}: FAIL{}", self.id, self.name, suffix);
            for f in &self.failures {
                println!("  - {f}");
            }
            panic!(
                "{} {} failed {} check(s): {}",
                self.id,
                self.name,
                self.failures.len(),
                self.failures.join("; ")
            );
        }
    }
}

// ---------------------------------------------------------------------------
// C1: translation schedule and attentional trigger rate
// ---------------------------------------------------------------------------

#[test]
fn c01_translation_schedule_and_trigger_rate() {
    let mut c = Criterion::new("C1", "translation schedule and trigger rate");
    const SEEDS: u64 = 20;
    const EXPECTED_UPDATES: [u64; 3] = [2000, 4000, 6000];

    let mut l3_totals: Vec<f64> = Vec::new();
    let mut max_wall = 0.0f64;
    for i in 0..SEEDS {
        let mut cfg = load("corridor.json", &[]);
        cfg.run_seed = 1000 + i;
        let out = run(cfg, RunOptions::default()).expect("corridor run succeeds");
        max_wall = max_wall.max(out.wall_time.as_secs_f64());
        c.check(out.wall_time.as_secs_f64() <= 300.0, || {
            format!(
                "seed {i}: run took {:.1}s, budget is 300s",
                out.wall_time.as_secs_f64()
            )
        });

        let ids: Vec<String> = out
            .log
            .header
            .run_config
            .scenario
            .agents
            .iter()
            .map(|a| a.id.clone())
            .collect();
        for id in &ids {
            let mut init_steps = Vec::new();
            let mut update_steps = Vec::new();
            let mut l3_total = 0u64;
            for step in &out.log.steps {
                let rec = &step.agents[id];
                l3_total += u64::from(rec.triggers.l3_count);
                for t in &rec.translations {
                    match t.mode {
                        TranslationMode::Init => init_steps.push(step.step),
                        TranslationMode::Update => update_steps.push(step.step),
                        TranslationMode::ReInterpret => {}
                    }
                }
            }
            c.check(init_steps == [0], || {
                format!("seed {i} agent {id}: init translations at {init_steps:?}, want [0]")
            });
            c.check(update_steps == EXPECTED_UPDATES, || {
                format!(
                    "seed {i} agent {id}: update translations at {update_steps:?}, want {EXPECTED_UPDATES:?}"
                )
            });
            l3_totals.push(l3_total as f64);
        }
    }

    // 6000 steps at dt 0.05 is 300 simulated seconds; arrivals at 0.064 Hz
    // give 19.2 expected triggers per agent per run.
    let expectation = 0.064 * 300.0;
    let mean = l3_totals.iter().sum::<f64>() / l3_totals.len() as f64;
    c.check(l3_totals.len() == (30 * SEEDS) as usize, || {
        format!("pooled {} agent-runs, want {}", l3_totals.len(), 30 * SEEDS)
    });
    c.check((mean - expectation).abs() <= 0.05 * expectation, || {
        format!(
            "pooled L3 trigger mean {mean:.3} outside 5% of expectation {expectation}"
        )
    });
    c.finish(&format!(
        "l3 mean {mean:.2} vs {expectation}, worst run {max_wall:.1}s"
    ));
}

// ---------------------------------------------------------------------------
// C2: determinism, replay, evaluation-order independence
// ---------------------------------------------------------------------------

#[test]
fn c02_determinism_and_replay() {
    let mut c = Criterion::new("C2", "determinism and replay");
    let cfg = load("example.json", &[]);

    let first = run(cfg.clone(), RunOptions::default()).expect("run succeeds");
    let second = run(cfg.clone(), RunOptions::default()).expect("run succeeds");
    let bytes = |log: &TrajectoryLog| {
        let mut buf = Vec::new();
        log.write_to(&mut buf).expect("log serialises");
        buf
    };
    c.check(bytes(&first.log) == bytes(&second.log), || {
        "two runs of the same (config, seed) produced different log bytes".to_string()
    });

    let report = replay::verify(&first.log).expect("replay walks the log");
    c.check(report.ok(), || {
        format!("replay mismatch: {:?}", report.first_mismatch)
    });
    c.check(report.steps_checked == 2001, || {
        format!("replay checked {} steps, want 2001", report.steps_checked)
    });

    let ids: Vec<String> = cfg.scenario.agents.iter().map(|a| a.id.clone()).collect();
    let mut reversed = ids.clone();
    reversed.reverse();
    let mut interleaved: Vec<String> = ids.iter().step_by(2).cloned().collect();
    interleaved.extend(ids.iter().skip(1).step_by(2).cloned());
    for (label, order) in [("reversed", reversed), ("interleaved", interleaved)] {
        let opts = RunOptions {
            eval_order: Some(order),
            ..RunOptions::default()
        };
        let shuffled = run(cfg.clone(), opts).expect("run succeeds");
        let digests_match = first
            .log
            .steps
            .iter()
            .zip(&shuffled.log.steps)
            .all(|(a, b)| a.world_digest == b.world_digest);
        c.check(digests_match, || {
            format!("{label} evaluation order changed a per-step world digest")
        });
        c.check(bytes(&first.log) == bytes(&shuffled.log), || {
            format!("{label} evaluation order changed the log bytes")
        });
    }
    c.finish("2001 steps replayed, 2 shuffled orders identical");
}

// ---------------------------------------------------------------------------
// C3: non-intrusiveness
// ---------------------------------------------------------------------------

#[test]
fn c03_non_intrusiveness() {
    let mut c = Criterion::new("C3", "non-intrusiveness");

    // All-normal traffic: the styled pipeline must be bit-identical to a
    // run that skips perception modulation entirely.
    let cfg = load("corridor.json", &[("max_steps", "2000")]);
    let styled = run(cfg.clone(), RunOptions::default()).expect("styled run succeeds");
    let bypassed = run(
        cfg,
        RunOptions {
            bypass_pmbi: true,
            ..RunOptions::default()
        },
    )
    .expect("bypassed run succeeds");
    c.check(styled.log.steps.len() == bypassed.log.steps.len(), || {
        "styled and bypassed runs have different step counts".to_string()
    });
    let mut mismatches = 0usize;
    for (a, b) in styled.log.steps.iter().zip(&bypassed.log.steps) {
        if a.world_digest != b.world_digest {
            mismatches += 1;
            continue;
        }
        for (id, ra) in &a.agents {
            let rb = &b.agents[id];
            if ra.pose != rb.pose || ra.speed != rb.speed || ra.decision != rb.decision {
                mismatches += 1;
            }
        }
    }
    c.check(mismatches == 0, || {
        format!("{mismatches} step/agent records differ between styled and bypassed runs")
    });

    // Fuzzed scripts applied to extracted views must never write through to
    // the objective scene, and must never panic.
    let probe = run(
        load("example.json", &[("max_steps", "100")]),
        RunOptions::default(),
    )
    .expect("probe run succeeds");
    let scene = probe.final_scene;
    let baseline = serde_json::to_vec(&scene).expect("scene serialises");
    let agent_ids: Vec<String> = scene
        .objects
        .iter()
        .filter(|o| o.id.starts_with('v'))
        .map(|o| o.id.clone())
        .collect();

    let apis = [
        "scale_perceived_speed",
        "bias_perceived_heading",
        "freeze_motion_update",
        "drop_object_velocity",
        "scale_perceived_distance",
        "offset_object_position",
        "scale_object_size",
        "occlude_object",
        "shift_signal_phase",
        "delay_signal_perception",
        "stretch_perceived_yellow",
        "misread_signal_state",
        "curve_lane_marks",
        "widen_perceived_lane",
        "shift_lane_center",
        "erase_lane_marking",
        "no_such_api",
        "",
    ];
    let param_names = [
        "factor", "amplitude_m", "wavelength_m", "bias_rad", "hold_steps", "dx_m", "dy_m",
        "delay_steps", "extra_s", "phase_shift_s", "widen_factor", "shift_m", "junk",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut state = ModulationState::default();
    for i in 0..10_000 {
        let ego = &agent_ids[i % agent_ids.len()];
        let view = extract_bev(&scene, ego, 50.0).expect("view extracts");
        let mut script = Script::default();
        for _ in 0..rng.random_range(1..=4) {
            let mut params = BTreeMap::new();
            for _ in 0..rng.random_range(0..=3) {
                let name = param_names[rng.random_range(0..param_names.len())];
                let value = match rng.random_range(0..6) {
                    0 => f64::NAN,
                    1 => f64::INFINITY,
                    2 => -f64::INFINITY,
                    3 => rng.random_range(-1e9..1e9),
                    _ => rng.random_range(-10.0..10.0),
                };
                params.insert(name.to_string(), value);
            }
            let relation = match rng.random_range(0..5) {
                0 => Some(Relation::Lead),
                1 => Some(Relation::SameLane),
                2 => Some(Relation::Oncoming),
                3 => Some(Relation::Any),
                _ => None,
            };
            let target_id = match rng.random_range(0..4) {
                0 => Some(agent_ids[rng.random_range(0..agent_ids.len())].clone()),
                1 => Some("ghost".to_string()),
                _ => None,
            };
            let kind = match rng.random_range(0..4) {
                0 => Some("vehicle".to_string()),
                1 => Some("signal".to_string()),
                2 => Some("gremlin".to_string()),
                _ => None,
            };
            script.calls.push(ApiCall {
                api: apis[rng.random_range(0..apis.len())].to_string(),
                selector: Selector {
                    kind,
                    relation,
                    target_id,
                },
                params,
                layer: [Layer::L1, Layer::L2, Layer::L3][rng.random_range(0..3)],
                call_seed: rng.random(),
            });
        }
        let report = apply_script(&view, &script, &mut state, 0.05);
        c.check(report.view.provenance == ViewProvenance::Subjective, || {
            format!("fuzz iteration {i}: modulated view not marked subjective")
        });
        if !c.failures.is_empty() {
            break;
        }
    }
    let after = serde_json::to_vec(&scene).expect("scene serialises");
    c.check(after == baseline, || {
        "objective scene serialisation changed after fuzzed apply_script calls".to_string()
    });
    c.finish("all-normal bit-identical, 10000 fuzzed scripts harmless");
}

// ---------------------------------------------------------------------------
// C4: consistency guard
// ---------------------------------------------------------------------------

#[test]
fn c04_consistency_guard_bound_holds() {
    let mut c = Criterion::new("C4", "consistency guard bound");
    // The example scenario carries one agent of every shipped style; 6000
    // steps cover three L2 refreshes, the fatigue ramp and many episodic
    // pulses and attentional lapses.
    let cfg = load("example.json", &[("max_steps", "6000")]);
    let delta = cfg.scenario.consistency_delta;
    let out = run(cfg, RunOptions::default()).expect("run succeeds");

    const FLOOR: f64 = 1e-6;
    let mut samples = 0u64;
    let mut violations = 0u64;
    let mut worst = 0.0f64;
    let mut last: BTreeMap<(String, String), f64> = BTreeMap::new();
    for step in &out.log.steps {
        for (id, rec) in &step.agents {
            for (key, value) in &rec.guarded {
                samples += 1;
                let slot = (id.clone(), key.clone());
                if let Some(prev) = last.get(&slot) {
                    let ratio = (value.max(FLOOR) / prev.max(FLOOR)).ln().abs();
                    worst = worst.max(ratio);
                    if ratio > delta + 1e-9 {
                        violations += 1;
                        if violations <= 3 {
                            c.check(false, || {
                                format!(
                                    "step {} agent {id} {key}: |ln({value}/{prev})| = {ratio:.4} > {delta}",
                                    step.step
                                )
                            });
                        }
                    }
                }
                last.insert(slot, *value);
            }
        }
    }
    c.check(violations == 0, || {
        format!("{violations} guard violations across the run")
    });
    c.check(samples > 10_000, || {
        format!("only {samples} guarded samples; expected a styled run to commit thousands")
    });
    c.finish(&format!(
        "{samples} guarded samples, worst |ln ratio| {worst:.4} <= {delta}"
    ));
}

// ---------------------------------------------------------------------------
// C5: directional style effects
// ---------------------------------------------------------------------------

/// Per-run aggregate over the 29 background agents plus the untouched ego.
struct CorridorStats {
    mean_headway: f64,
    mean_speed: f64,
    lateral_rms: f64,
    ego_score: f64,
}

fn corridor_stats(style: Option<&StyleTriplet>, run_seed: u64) -> CorridorStats {
    let mut cfg = load("corridor.json", &[]);
    cfg.run_seed = run_seed;
    let ego = cfg
        .scenario
        .ego_under_test
        .clone()
        .expect("corridor names an ego");
    if let Some(style) = style {
        for a in &mut cfg.scenario.agents {
            if a.id != ego {
                a.style = style.clone();
            }
        }
    }
    let out = run(cfg, RunOptions::default()).expect("corridor run succeeds");
    let window = out.log.steps.len();
    let ids: Vec<String> = out
        .log
        .header
        .run_config
        .scenario
        .agents
        .iter()
        .map(|a| a.id.clone())
        .filter(|id| *id != ego)
        .collect();
    let mut hw = 0.0;
    let mut sp = 0.0;
    let mut lat = 0.0;
    for id in &ids {
        let f = feature_windows(&out.log, id, window, 1);
        assert_eq!(f.len(), 1, "whole-run window for {id}");
        hw += f[0].mean_time_headway;
        sp += f[0].mean_speed;
        lat += f[0].lateral_offset_rms;
    }
    let n = ids.len() as f64;
    CorridorStats {
        mean_headway: hw / n,
        mean_speed: sp / n,
        lateral_rms: lat / n,
        ego_score: driving_score(&out.log, &ego, &Penalties::default()).score,
    }
}

/// Steps from brake onset until the agent commands accel below -1 m/s^2,
/// capped at 400 steps (20 s).
fn brake_latency(log: &TrajectoryLog, agent_id: &str, onset: u64) -> u64 {
    for s in onset..onset + 400 {
        let rec = &log.steps[s as usize].agents[agent_id];
        if rec.decision.accel < -1.0 {
            return s - onset;
        }
    }
    400
}

#[test]
fn c05_directional_style_effects() {
    let mut c = Criterion::new("C5", "directional style effects");
    const SEEDS: u64 = 10;

    let styles: [(&str, Option<StyleTriplet>); 4] = [
        ("normal", None),
        ("aggressive", Some(triplet("aggressive", "normal", "normal"))),
        ("cautious", Some(triplet("cautious", "normal", "normal"))),
        ("drunk", Some(triplet("normal", "drunk", "normal"))),
    ];
    let mut stats: BTreeMap<&str, Vec<CorridorStats>> = BTreeMap::new();
    for (name, style) in &styles {
        for i in 0..SEEDS {
            stats
                .entry(*name)
                .or_default()
                .push(corridor_stats(style.as_ref(), 200 + i));
        }
    }
    let mean = |xs: &[CorridorStats], f: fn(&CorridorStats) -> f64| {
        xs.iter().map(f).sum::<f64>() / xs.len() as f64
    };

    // Aggressive traffic tailgates: strictly shorter headways, seed by seed.
    for i in 0..SEEDS as usize {
        let (agg, norm) = (
            stats["aggressive"][i].mean_headway,
            stats["normal"][i].mean_headway,
        );
        c.check(agg < norm, || {
            format!("seed {i}: aggressive headway {agg:.3} !< normal {norm:.3}")
        });
    }
    let caut_speed = mean(&stats["cautious"], |s| s.mean_speed);
    let norm_speed = mean(&stats["normal"], |s| s.mean_speed);
    c.check(caut_speed < norm_speed, || {
        format!("cautious mean speed {caut_speed:.3} !< normal {norm_speed:.3}")
    });
    let drunk_lat = mean(&stats["drunk"], |s| s.lateral_rms);
    let norm_lat = mean(&stats["normal"], |s| s.lateral_rms);
    c.check(drunk_lat >= 1.5 * norm_lat, || {
        format!("drunk lateral rms {drunk_lat:.3} < 1.5x normal {norm_lat:.3}")
    });

    // The same untouched ego scores strictly worse when surrounded by
    // aggressive traffic instead of normal traffic.
    for i in 0..SEEDS as usize {
        let (agg, norm) = (
            stats["aggressive"][i].ego_score,
            stats["normal"][i].ego_score,
        );
        c.check(agg < norm, || {
            format!("seed {i}: ego DS {agg:.2} in aggressive traffic !< {norm:.2} in normal")
        });
    }

    // Reaction latency on the lead-brake scenario: the lead drops from 10
    // to 2 m/s at steps 500 and 5000.
    let latency_styles: [(&str, Option<StyleTriplet>); 3] = [
        ("normal", None),
        ("distracted", Some(triplet("normal", "normal", "distracted"))),
        ("fatigued", Some(triplet("normal", "fatigued", "normal"))),
    ];
    let mut latencies: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for (name, style) in &latency_styles {
        let (mut early, mut late) = (0.0, 0.0);
        for i in 0..SEEDS {
            let mut cfg = load("lead_brake.json", &[]);
            cfg.run_seed = 300 + i;
            if let Some(style) = style {
                cfg.scenario.agents[0].style = style.clone();
            }
            let out = run(cfg, RunOptions::default()).expect("lead_brake run succeeds");
            early += brake_latency(&out.log, "v00", 500) as f64;
            late += brake_latency(&out.log, "v00", 5000) as f64;
        }
        latencies.insert(*name, (early / SEEDS as f64, late / SEEDS as f64));
    }
    let (norm_early, _) = latencies["normal"];
    let (dis_early, _) = latencies["distracted"];
    c.check(dis_early > norm_early, || {
        format!("distracted latency {dis_early:.1} !> normal {norm_early:.1} steps")
    });
    let (fat_early, fat_late) = latencies["fatigued"];
    c.check(fat_late > fat_early, || {
        format!("fatigued late-run latency {fat_late:.1} !> early-run {fat_early:.1} steps")
    });

    c.finish(&format!(
        "hw {:.2}<{:.2}, speed {caut_speed:.2}<{norm_speed:.2}, lat {drunk_lat:.2}>={:.2}, ego {:.1}<{:.1}, latency {dis_early:.0}>{norm_early:.0} and {fat_late:.0}>{fat_early:.0}",
        mean(&stats["aggressive"], |s| s.mean_headway),
        mean(&stats["normal"], |s| s.mean_headway),
        1.5 * norm_lat,
        mean(&stats["aggressive"], |s| s.ego_score),
        mean(&stats["normal"], |s| s.ego_score),
    ));
}

// ---------------------------------------------------------------------------
// C6: style separability
// ---------------------------------------------------------------------------

fn free_flow_windows(style: Option<&StyleTriplet>, run_seed: u64) -> Vec<FeatureVector> {
    let mut cfg = load("free_flow.json", &[]);
    cfg.run_seed = run_seed;
    if let Some(style) = style {
        for a in &mut cfg.scenario.agents {
            a.style = style.clone();
        }
    }
    let out = run(cfg, RunOptions::default()).expect("free_flow run succeeds");
    let ids: Vec<String> = out
        .log
        .header
        .run_config
        .scenario
        .agents
        .iter()
        .map(|a| a.id.clone())
        .collect();
    let mut all = Vec::new();
    for id in &ids {
        // Skip the first 40 strides so every window starts after step 1200,
        // past the fatigue ramp threshold and the platoon settling phase.
        all.extend(feature_windows(&out.log, id, 400, 30).into_iter().skip(40));
    }
    all
}

#[test]
fn c06_style_separability() {
    let mut c = Criterion::new("C6", "style separability");
    let styles: [(&str, Option<StyleTriplet>); 5] = [
        ("normal", None),
        ("aggressive", Some(triplet("aggressive", "normal", "normal"))),
        ("cautious", Some(triplet("cautious", "normal", "normal"))),
        ("fatigued", Some(triplet("normal", "fatigued", "normal"))),
        ("distracted", Some(triplet("normal", "normal", "distracted"))),
    ];

    let mut train: Vec<(FeatureVector, String)> = Vec::new();
    let mut test: Vec<FeatureVector> = Vec::new();
    let mut truth: Vec<String> = Vec::new();
    for (name, style) in &styles {
        let tr = free_flow_windows(style.as_ref(), 500);
        c.check(tr.len() >= 900, || {
            format!("{name}: only {} training windows, want >= 900", tr.len())
        });
        train.extend(tr.into_iter().map(|f| (f, name.to_string())));
        for f in free_flow_windows(style.as_ref(), 600) {
            truth.push(name.to_string());
            test.push(f);
        }
    }

    let knn = KnnClassifier::fit(5, &train);
    let predicted: Vec<String> = test.iter().map(|f| knn.predict(f)).collect();
    let f1 = macro_f1(&truth, &predicted);
    c.check(f1 >= 0.80, || {
        format!("macro F1 {f1:.4} below 0.80 on held-out windows")
    });
    c.finish(&format!(
        "macro F1 {f1:.4} on {} held-out windows, {} per style trained",
        test.len(),
        train.len() / styles.len()
    ));
}

// ---------------------------------------------------------------------------
// C7: metric oracles
// ---------------------------------------------------------------------------

/// Minimal synthetic log: one 500 m lane, one agent, hand-placed poses and
/// events. Keeps the scorer's inputs fully enumerable.
fn synthetic_log(xs: &[f64], events: Vec<InfractionEvent>) -> TrajectoryLog {
    let map = RoadMap {
        name: "oracle".to_string(),
        lanes: vec![MapLane {
            id: "a".to_string(),
            centerline: vec![Vec2::new(0.0, 0.0), Vec2::new(500.0, 0.0)],
            width: 3.5,
            successors: vec![],
        }],
        signals: vec![],
    };
    let scenario = ScenarioConfig {
        name: "oracle".to_string(),
        map: "inline".to_string(),
        dt: 0.05,
        max_steps: xs.len() as u64 - 1,
        bev_radius: 50.0,
        default_seed: 1,
        dcl: DclParams::default(),
        schedule: StyleSchedule::default(),
        consistency_delta: 0.1,
        ego_under_test: Some("v00".to_string()),
        agents: vec![AgentConfig {
            id: "v00".to_string(),
            spawn: Pose {
                x: xs[0],
                y: 0.0,
                heading: 0.0,
            },
            speed: 0.0,
            route: vec!["a".to_string()],
            style: StyleTriplet::normal(),
            extent: [4.5, 2.0],
        }],
        scripted: vec![],
        static_objects: vec![],
    };
    let mut log = TrajectoryLog::new(RunConfig::new(scenario, map, 1).expect("config builds"));
    for (i, x) in xs.iter().enumerate() {
        let mut agents = BTreeMap::new();
        agents.insert(
            "v00".to_string(),
            AgentRecord {
                pose: Pose {
                    x: *x,
                    y: 0.0,
                    heading: 0.0,
                },
                speed: 0.0,
                lane: Some("a".to_string()),
                decision: Default::default(),
                provenance: ViewProvenance::Objective,
                triggers: Default::default(),
                translations: vec![],
                versions: BTreeMap::new(),
                script_digest: String::new(),
                guarded: BTreeMap::new(),
                divergence: Default::default(),
                skipped_calls: 0,
            },
        );
        log.steps.push(StepRecord {
            step: i as u64,
            world_digest: String::new(),
            agents,
            events: events.iter().filter(|e| e.step == i as u64).cloned().collect(),
        });
    }
    log
}

fn event(step: u64, kind: EventKind, agent_id: &str, other_id: Option<&str>) -> InfractionEvent {
    InfractionEvent {
        step,
        kind,
        agent_id: agent_id.to_string(),
        other_id: other_id.map(|s| s.to_string()),
    }
}

/// Dense point-sampling overlap oracle: grids over both rectangles at the
/// given step, plus the exact corners.
fn sampled_overlap(a: &Obb, b: &Obb, step: f64) -> bool {
    let contains = |r: &Obb, p: Vec2| {
        let rel = p - r.center;
        let u = Vec2::from_heading(r.heading);
        let x = rel.dot(u);
        let y = u.cross(rel);
        x.abs() <= r.half_len && y.abs() <= r.half_wid
    };
    let grid_hits = |from: &Obb, into: &Obb| {
        let u = Vec2::from_heading(from.heading);
        let v = u.perp();
        let ni = (2.0 * from.half_len / step).ceil() as i64;
        let nj = (2.0 * from.half_wid / step).ceil() as i64;
        for i in 0..=ni {
            let du = -from.half_len + 2.0 * from.half_len * i as f64 / ni as f64;
            for j in 0..=nj {
                let dv = -from.half_wid + 2.0 * from.half_wid * j as f64 / nj as f64;
                if contains(into, from.center + u * du + v * dv) {
                    return true;
                }
            }
        }
        false
    };
    grid_hits(a, b) || grid_hits(b, a)
}

/// Smallest absolute separating-axis gap; near zero means the rectangles
/// graze and a sampling oracle cannot decide reliably.
fn sat_margin(a: &Obb, b: &Obb) -> f64 {
    let project = |corners: &[Vec2; 4], axis: Vec2| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in corners {
            let d = c.dot(axis);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    };
    let (ca, cb) = (a.corners(), b.corners());
    let axes = [
        Vec2::from_heading(a.heading),
        Vec2::from_heading(a.heading).perp(),
        Vec2::from_heading(b.heading),
        Vec2::from_heading(b.heading).perp(),
    ];
    let mut max_gap = f64::NEG_INFINITY;
    for axis in axes {
        let (alo, ahi) = project(&ca, axis);
        let (blo, bhi) = project(&cb, axis);
        max_gap = max_gap.max((blo - ahi).max(alo - bhi));
    }
    max_gap.abs()
}

#[test]
fn c07_metric_oracles() {
    let mut c = Criterion::new("C7", "metric oracles");

    // Wasserstein-1 against the sorted-pairing oracle for equal-size
    // equal-weight samples: W1 = mean |a_(i) - b_(i)|.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
    let mut worst_w = 0.0f64;
    for i in 0..1000 {
        let n = rng.random_range(1..=64);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if rng.random_range(0..8) == 0 {
                        rng.random_range(-5..5) as f64
                    } else {
                        rng.random_range(-50.0..50.0)
                    }
                })
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let got = wasserstein_1d(&a, &b);
        let mut sa = a.clone();
        let mut sb = b.clone();
        sa.sort_by(|p, q| p.partial_cmp(q).unwrap());
        sb.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let want: f64 =
            sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
        let err = (got - want).abs();
        worst_w = worst_w.max(err);
        if err > 1e-12 {
            c.check(false, || {
                format!("pair {i} (n={n}): wasserstein {got} vs oracle {want}, err {err:.3e}")
            });
            break;
        }
    }

    // Driving score against hand-multiplied penalty tables. Both event
    // sides count: the scored agent appears as agent_id or other_id.
    let full = [0.0, 250.0, 500.0];
    let table: Vec<(Vec<InfractionEvent>, f64)> = vec![
        (vec![], 100.0),
        (vec![event(1, EventKind::CollisionPedestrian, "v00", None)], 50.0),
        (vec![event(1, EventKind::CollisionVehicle, "v99", Some("v00"))], 60.0),
        (vec![event(1, EventKind::CollisionStatic, "v00", None)], 65.0),
        (vec![event(1, EventKind::RedLightViolation, "v00", None)], 70.0),
        (
            vec![
                event(0, EventKind::CollisionVehicle, "v00", Some("v01")),
                event(2, EventKind::CollisionVehicle, "v01", Some("v00")),
            ],
            36.0,
        ),
        (
            vec![
                event(0, EventKind::CollisionPedestrian, "v00", None),
                event(1, EventKind::CollisionPedestrian, "v00", None),
            ],
            25.0,
        ),
        (
            vec![
                event(0, EventKind::CollisionPedestrian, "v00", None),
                event(1, EventKind::CollisionVehicle, "v00", Some("v01")),
                event(1, EventKind::CollisionStatic, "v00", None),
                event(2, EventKind::RedLightViolation, "v00", None),
            ],
            13.65,
        ),
        (
            vec![
                event(0, EventKind::CollisionVehicle, "v00", Some("v01")),
                event(1, EventKind::CollisionVehicle, "v00", Some("v01")),
                event(1, EventKind::CollisionVehicle, "v00", Some("v01")),
                event(2, EventKind::RedLightViolation, "v00", None),
                event(2, EventKind::RedLightViolation, "v00", None),
            ],
            10.584,
        ),
        // Events involving only other agents leave the score untouched.
        (vec![event(1, EventKind::CollisionVehicle, "v01", Some("v02"))], 100.0),
    ];
    for (i, (events, want)) in table.iter().enumerate() {
        let log = synthetic_log(&full, events.clone());
        let got = driving_score(&log, "v00", &Penalties::default()).score;
        c.check((got - want).abs() < 1e-9, || {
            format!("score row {i}: got {got}, hand-computed {want}")
        });
    }
    // A route deviation truncates completion at the deviation step instead
    // of multiplying: progress 250/500 at step 1, collision still counted.
    let dev = synthetic_log(
        &full,
        vec![
            event(1, EventKind::RouteDeviation, "v00", None),
            event(2, EventKind::CollisionVehicle, "v00", Some("v01")),
        ],
    );
    let got = driving_score(&dev, "v00", &Penalties::default());
    c.check((got.route_completion - 50.0).abs() < 1e-9, || {
        format!("deviation: completion {}, want 50", got.route_completion)
    });
    c.check((got.score - 30.0).abs() < 1e-9, || {
        format!("deviation: score {}, hand-computed 30", got.score)
    });

    // Rectangle overlap against the dense sampling oracle. Grazing pairs
    // below the sampling resolution are re-drawn; the oracle cannot decide
    // them and the SAT answer is exact there by construction.
    let mut overlapping = 0usize;
    for i in 0..1000 {
        let (a, b) = loop {
            let obb = |rng: &mut ChaCha8Rng| Obb {
                center: Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
                half_len: rng.random_range(0.4..1.2),
                half_wid: rng.random_range(0.3..0.8),
                heading: rng.random_range(-3.2..3.2),
            };
            let a = obb(&mut rng);
            let b = obb(&mut rng);
            if sat_margin(&a, &b) > 0.08 {
                break (a, b);
            }
        };
        let got = a.overlaps(&b);
        let want = sampled_overlap(&a, &b, 0.01);
        overlapping += usize::from(got);
        if got != want {
            c.check(false, || {
                format!("rect pair {i}: overlaps() = {got}, sampling oracle = {want}")
            });
            break;
        }
    }
    c.check(overlapping > 100 && overlapping < 900, || {
        format!("degenerate rectangle sample: {overlapping}/1000 overlapping")
    });
    c.finish(&format!(
        "wasserstein err <= {worst_w:.1e}, {} score rows, 1000 rect pairs ({overlapping} overlapping)",
        table.len() + 1
    ));
}

// ---------------------------------------------------------------------------
// C8: robustness in obstacle-free traffic
// ---------------------------------------------------------------------------

#[test]
fn c08_styled_agents_complete_free_flow() {
    let mut c = Criterion::new("C8", "styled free-flow robustness");
    let styles = [
        ("aggressive", triplet("aggressive", "normal", "normal")),
        ("cautious", triplet("cautious", "normal", "normal")),
        ("drunk", triplet("normal", "drunk", "normal")),
        ("fatigued", triplet("normal", "fatigued", "normal")),
        ("distracted", triplet("normal", "normal", "distracted")),
    ];
    let mut min_rc = f64::INFINITY;
    for (name, style) in &styles {
        let mut cfg = load("free_flow.json", &[]);
        for a in &mut cfg.scenario.agents {
            a.style = style.clone();
        }
        let out = run(cfg, RunOptions::default()).expect("free_flow run succeeds");
        let collisions: Vec<_> = out
            .log
            .steps
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::CollisionVehicle
                        | EventKind::CollisionPedestrian
                        | EventKind::CollisionStatic
                )
            })
            .collect();
        c.check(collisions.is_empty(), || {
            format!("{name}: {} collision events: {collisions:?}", collisions.len())
        });
        for a in &out.log.header.run_config.scenario.agents {
            let rc = driving_score(&out.log, &a.id, &Penalties::default()).route_completion;
            min_rc = min_rc.min(rc);
            c.check(rc >= 100.0 - 1e-9, || {
                format!("{name}: agent {} finished with RC {rc:.2}", a.id)
            });
        }
    }
    c.finish(&format!("5 styles x 12 agents, min RC {min_rc:.2}, zero collisions"));
}

// ---------------------------------------------------------------------------
// C9: agent-count scaling
// ---------------------------------------------------------------------------

#[test]
fn c09_step_cost_scaling() {
    let mut c = Criterion::new("C9", "step cost scaling 30 to 70 agents");
    let base = load("corridor.json", &[("max_steps", "1000")]);

    let mut wide = base.clone();
    let template = wide.scenario.agents[0].clone();
    wide.scenario.agents = (0..70)
        .map(|i| {
            let mut a = template.clone();
            a.id = format!("v{i:02}");
            a.spawn.x = 2.0 + 10.0 * i as f64;
            a
        })
        .collect();
    wide.scenario.ego_under_test = None;

    let mean_step = |cfg: &RunConfig| -> f64 {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let out = run(cfg.clone(), RunOptions::default()).expect("run succeeds");
            best = best.min(out.mean_step.as_secs_f64());
        }
        best
    };
    let t30 = mean_step(&base);
    let t70 = mean_step(&wide);
    let ratio = t70 / t30;
    c.check(ratio <= 3.0, || {
        format!(
            "70-agent mean step {:.3}ms is {ratio:.2}x the 30-agent {:.3}ms, budget 3x",
            t70 * 1e3,
            t30 * 1e3
        )
    });
    c.finish(&format!(
        "mean step {:.3}ms at 30 agents, {:.3}ms at 70, ratio {ratio:.2}",
        t30 * 1e3,
        t70 * 1e3
    ));
}

// ---------------------------------------------------------------------------
// C10: translator robustness
// ---------------------------------------------------------------------------

/// Transport that answers every completion request with adversarial
/// garbage: invalid JSON, wrong shapes, wrong types, huge payloads,
/// control characters, or an outright transport error.
struct GarbageTransport {
    rng: Mutex<ChaCha8Rng>,
    /// Include shapes that parse as valid-but-empty or repairable output.
    include_parseable: bool,
}

impl GarbageTransport {
    fn new(seed: u64, include_parseable: bool) -> GarbageTransport {
        GarbageTransport {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            include_parseable,
        }
    }
}

impl CompletionTransport for GarbageTransport {
    fn complete(&self, _system: &str, _user: &str) -> Result<String, TranslatorError> {
        let mut rng = self.rng.lock().expect("transport lock");
        let n = if self.include_parseable { 14 } else { 11 };
        Ok(match rng.random_range(0..n) {
            0 => String::new(),
            1 => "the driver seems nice".to_string(),
            2 => "{\"policies\": 3}".to_string(),
            3 => "[".to_string(),
            4 => "[{\"layer\": \"L9\", \"statement\": 5}]".to_string(),
            5 => "```json\n[{\"layer\":".to_string(),
            6 => format!("[{}]", "1,".repeat(200) + "1"),
            7 => "\u{0}\u{1}\u{fffd}\u{7}".to_string(),
            8 => "🚗".repeat(1000),
            9 => format!("[{}", "[".repeat(5000)),
            10 => return Err(TranslatorError::Transport("socket reset".to_string())),
            11 => "[]".to_string(),
            12 => "[{\"layer\":\"l1\",\"statement\":\"hug the bumper\",\"intensity\":99}]"
                .to_string(),
            _ => "```json\n[]\n```".to_string(),
        })
    }
}

#[test]
fn c10_translator_survives_garbage() {
    let mut c = Criterion::new("C10", "translator robustness");
    let registry = TraitRegistry::builtin();

    // A pool of priors for Update requests, produced by the catalog path.
    let catalog = CatalogTranslator::new(registry.clone());
    let styled = [
        triplet("aggressive", "drunk", "distracted"),
        triplet("cautious", "fatigued", "normal"),
    ];
    let mut priors = Vec::new();
    for (i, t) in styled.iter().enumerate() {
        let desc = generate_description("vf", t, &registry, i as u64).expect("description");
        let outcome = catalog
            .translate(&TranslationRequest {
                mode: TranslationMode::Init,
                agent_id: "vf".to_string(),
                description: Some(desc),
                prior: None,
                layers: Layer::ALL.to_vec(),
                agent_seed: i as u64,
                version: 0,
            })
            .expect("catalog init");
        priors.extend(outcome.policies);
    }
    assert!(!priors.is_empty(), "catalog produced priors");

    let translator = ProviderTranslator::new(
        Box::new(GarbageTransport::new(0xC10, true)),
        registry.clone(),
        ScriptCatalog::builtin(),
    );
    let mut fallbacks = 0usize;
    let mut failures = 0usize;
    for i in 0..10_000u64 {
        let req = match i % 3 {
            0 | 2 => {
                let t = &styled[(i % 2) as usize];
                let mode = if i % 3 == 0 {
                    TranslationMode::Init
                } else {
                    TranslationMode::ReInterpret
                };
                TranslationRequest {
                    mode,
                    agent_id: format!("v{:02}", i % 30),
                    description: Some(
                        generate_description("vf", t, &registry, i).expect("description"),
                    ),
                    prior: None,
                    layers: Layer::ALL.to_vec(),
                    agent_seed: i,
                    version: i,
                }
            }
            _ => TranslationRequest {
                mode: TranslationMode::Update,
                agent_id: format!("v{:02}", i % 30),
                description: None,
                prior: Some(priors[(i as usize) % priors.len()].clone()),
                layers: vec![Layer::L2],
                agent_seed: i,
                version: i,
            },
        };
        match translator.translate(&req) {
            Ok(outcome) => {
                if outcome.source == stylesim::translator::TranslationSource::ProviderFallback {
                    fallbacks += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    c.check(failures == 0, || {
        format!("{failures}/10000 adversarial translations returned an error")
    });
    c.check(fallbacks > 5000, || {
        format!("only {fallbacks}/10000 translations fell back; transport should be hostile")
    });

    // A full run against the hostile provider completes and logs the
    // fallback on every styled agent's translation events.
    let cfg = load("example.json", &[]);
    let opts = RunOptions {
        translator: Some(Arc::new(ProviderTranslator::new(
            Box::new(GarbageTransport::new(0xBAD, false)),
            TraitRegistry::builtin(),
            ScriptCatalog::builtin(),
        ))),
        ..RunOptions::default()
    };
    let out = run(cfg, opts).expect("run with hostile provider succeeds");
    c.check(out.log.steps.len() == 2001, || {
        "hostile-provider run ended early".to_string()
    });
    for id in ["v01", "v02", "v03", "v04", "v05"] {
        // An Update with no L2 policy to refresh never consults the
        // provider; only provider-backed events must show the fallback.
        let has_l2 = out
            .log
            .header
            .run_config
            .scenario
            .agents
            .iter()
            .find(|a| a.id == id)
            .map(|a| a.style.l2 != "normal")
            .unwrap_or(false);
        let mut fallback_events = 0usize;
        for step in &out.log.steps {
            for t in &step.agents[id].translations {
                let expects_provider = t.mode != TranslationMode::Update || has_l2;
                if expects_provider {
                    fallback_events += 1;
                    c.check(t.source == "provider_fallback", || {
                        format!(
                            "agent {id} step {}: translation source {:?}, want provider_fallback",
                            step.step, t.source
                        )
                    });
                    c.check(!t.notes.is_empty(), || {
                        format!("agent {id} step {}: fallback logged without notes", step.step)
                    });
                } else {
                    c.check(t.source == "catalog" && t.policies.is_empty(), || {
                        format!(
                            "agent {id} step {}: empty refresh should be catalog-sourced, got {:?}",
                            step.step, t.source
                        )
                    });
                }
            }
        }
        c.check(fallback_events > 0, || {
            format!("agent {id} logged no provider-backed translation events")
        });
    }
    c.finish(&format!(
        "10000 hostile translations ok ({fallbacks} fallbacks), full run degraded gracefully"
    ));
}
