//! Replay: rebuild a run from its log alone and verify it.
//!
//! The log carries object poses, translation events and schedule state, so
//! the walker can reconstruct the objective scene and every agent's policy
//! state step by step, regenerate each modulation script and compare world
//! and script digests against what the live run recorded. No translator is
//! consulted: adopted policies are read back from the log, which is what
//! makes provider-backed runs replayable offline.

use crate::pmbi::mapping::{build_script, MappingCtx};
use crate::pmbi::{apply_script, ModulationState};
use crate::scene::{extract_bev, BevView, ObjectKind, ObjectState, SceneError, SceneGraph};
use crate::seeds;
use crate::style::{Layer, PolicySet};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use super::config::ConfigError;
use super::log::{StepRecord, TrajectoryLog};
use super::{world_digest, ScriptedRt};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("log has no step records")]
    EmptyLog,
    #[error("step {step} is missing a record for agent '{agent}'")]
    MissingAgent { step: u64, agent: String },
}

/// What a verification pass found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub steps_checked: u64,
    pub world_mismatches: u64,
    pub script_mismatches: u64,
    pub version_mismatches: u64,
    pub guarded_mismatches: u64,
    /// Human-readable description of the first divergence, if any.
    pub first_mismatch: Option<String>,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.world_mismatches == 0
            && self.script_mismatches == 0
            && self.version_mismatches == 0
            && self.guarded_mismatches == 0
    }

    fn note(&mut self, step: u64, what: String) {
        if self.first_mismatch.is_none() {
            self.first_mismatch = Some(format!("step {step}: {what}"));
        }
    }
}

/// Objective and modulated view of one agent at one step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ViewPair {
    pub step: u64,
    pub agent_id: String,
    pub objective: BevView,
    pub subjective: BevView,
}

struct ReplayAgent {
    id: String,
    seed: u64,
    policies: PolicySet,
    activation: BTreeMap<Layer, u64>,
    last_l3_step: Option<u64>,
    modstate: ModulationState,
}

/// Rebuild the objective scene for one step record.
fn rebuild_scene(
    log: &TrajectoryLog,
    record: &StepRecord,
    agent_ids: &[String],
    scripted: &[(String, crate::scene::Pose, f64, Option<String>, ObjectKind, [f64; 2])],
) -> Result<SceneGraph, ReplayError> {
    let cfg = &log.header.run_config;
    let dt = cfg.scenario.dt;
    let mut objects = Vec::new();
    for (i, id) in agent_ids.iter().enumerate() {
        let rec = record
            .agents
            .get(id)
            .ok_or_else(|| ReplayError::MissingAgent {
                step: record.step,
                agent: id.clone(),
            })?;
        objects.push(ObjectState {
            id: id.clone(),
            kind: ObjectKind::Vehicle,
            pose: rec.pose,
            speed: rec.speed,
            extent: cfg.scenario.agents[i].extent,
            lane_id: rec.lane.clone(),
        });
    }
    for (id, pose, speed, lane, kind, extent) in scripted {
        objects.push(ObjectState {
            id: id.clone(),
            kind: *kind,
            pose: *pose,
            speed: *speed,
            extent: *extent,
            lane_id: lane.clone(),
        });
    }
    for st in &cfg.scenario.static_objects {
        objects.push(ObjectState {
            id: st.id.clone(),
            kind: ObjectKind::Static,
            pose: st.pose,
            speed: 0.0,
            extent: st.extent,
            lane_id: None,
        });
    }
    let sim_time = record.step as f64 * dt;
    Ok(SceneGraph {
        step_index: record.step,
        sim_time,
        objects,
        lanes: cfg.road_map.scene_lanes(),
        signals: cfg.road_map.signal_states_at(sim_time),
    })
}

/// Walk a log, regenerating scenes and scripts, invoking `visit` for every
/// agent step with the rebuilt objective and subjective views.
fn walk(
    log: &TrajectoryLog,
    report: &mut ReplayReport,
    mut visit: impl FnMut(&ViewPair),
    collect_for: Option<(&str, u64, u64)>,
) -> Result<(), ReplayError> {
    if log.steps.is_empty() {
        return Err(ReplayError::EmptyLog);
    }
    let cfg = &log.header.run_config;
    cfg.validate()?;
    let dt = cfg.scenario.dt;
    let delta = cfg.scenario.consistency_delta;
    let agent_ids: Vec<String> = cfg.scenario.agents.iter().map(|a| a.id.clone()).collect();

    let mut agents: Vec<ReplayAgent> = agent_ids
        .iter()
        .map(|id| ReplayAgent {
            id: id.clone(),
            seed: seeds::agent_seed(cfg.run_seed, id),
            policies: PolicySet::default(),
            activation: BTreeMap::new(),
            last_l3_step: None,
            modstate: ModulationState::default(),
        })
        .collect();
    let mut scripted: Vec<ScriptedRt> = cfg
        .scenario
        .scripted
        .iter()
        .map(|sc| ScriptedRt::new(sc, &cfg.road_map))
        .collect();

    let mut prev_step: Option<u64> = None;
    for record in &log.steps {
        // Integrate scripted objects forward from the previous record.
        if let Some(prev) = prev_step {
            for s in prev..record.step {
                for sc in &mut scripted {
                    sc.advance(s, dt);
                }
            }
        }
        prev_step = Some(record.step);

        let scripted_states: Vec<_> = scripted
            .iter()
            .map(|sc| {
                let (pose, speed) = sc.current_state();
                (
                    sc.cfg.id.clone(),
                    pose,
                    speed,
                    sc.cfg.lane.clone(),
                    sc.cfg.kind,
                    sc.cfg.extent,
                )
            })
            .collect();
        let scene = rebuild_scene(log, record, &agent_ids, &scripted_states)?;
        report.steps_checked += 1;
        let digest = world_digest(&scene);
        if digest != record.world_digest {
            report.world_mismatches += 1;
            report.note(record.step, "world digest differs".to_string());
        }

        for agent in &mut agents {
            let rec = record
                .agents
                .get(&agent.id)
                .ok_or_else(|| ReplayError::MissingAgent {
                    step: record.step,
                    agent: agent.id.clone(),
                })?;
            // Re-apply logged translation events instead of re-translating.
            for event in &rec.translations {
                let mut covered: BTreeSet<Layer> = BTreeSet::new();
                for p in &event.policies {
                    covered.insert(p.layer);
                    agent.activation.entry(p.layer).or_insert(record.step);
                    agent.policies.adopt(p.clone());
                }
                for layer in &event.layers {
                    if !covered.contains(layer) {
                        agent.policies.bump_empty(*layer);
                    }
                }
            }
            if agent.policies.versions != rec.versions {
                report.version_mismatches += 1;
                report.note(
                    record.step,
                    format!("agent {} version counters differ", agent.id),
                );
            }
            if rec.triggers.l3_count > 0 {
                agent.last_l3_step = Some(record.step);
            }

            let view = extract_bev(&scene, &agent.id, cfg.scenario.bev_radius)?;
            let (effective, lapse) = super::style_inputs(
                &agent.policies,
                &agent.activation,
                agent.last_l3_step,
                agent.seed,
                &cfg.scenario.schedule,
                dt,
                record.step,
            );
            let mctx = MappingCtx {
                view: &view,
                agent_seed: agent.seed,
                step: record.step,
                effective,
                versions: agent.policies.versions.clone(),
                l3_lapse_active: lapse,
            };
            let (script, committed) = build_script(&agent.policies, &mctx, &mut agent.modstate, delta);
            if script.digest() != rec.script_digest {
                report.script_mismatches += 1;
                report.note(record.step, format!("agent {} script differs", agent.id));
            }
            if committed != rec.guarded {
                report.guarded_mismatches += 1;
                report.note(
                    record.step,
                    format!("agent {} guarded params differ", agent.id),
                );
            }
            let wants_views = match collect_for {
                Some((id, from, to)) => {
                    agent.id == id && record.step >= from && record.step <= to
                }
                None => false,
            };
            if wants_views {
                let applied = apply_script(&view, &script, &mut agent.modstate, dt);
                visit(&ViewPair {
                    step: record.step,
                    agent_id: agent.id.clone(),
                    objective: view,
                    subjective: applied.view,
                });
            } else {
                // Stale-perception state must still evolve exactly as it
                // did live, so the script is always applied.
                apply_script(&view, &script, &mut agent.modstate, dt);
            }
        }
    }
    Ok(())
}

/// Verify a log end to end.
pub fn verify(log: &TrajectoryLog) -> Result<ReplayReport, ReplayError> {
    let mut report = ReplayReport::default();
    walk(log, &mut report, |_| {}, None)?;
    Ok(report)
}

/// Reconstruct objective/subjective view pairs for one agent over an
/// inclusive step range.
pub fn export_views(
    log: &TrajectoryLog,
    agent_id: &str,
    from_step: u64,
    to_step: u64,
) -> Result<Vec<ViewPair>, ReplayError> {
    let mut report = ReplayReport::default();
    let mut out = Vec::new();
    walk(
        log,
        &mut report,
        |pair| out.push(pair.clone()),
        Some((agent_id, from_step, to_step)),
    )?;
    Ok(out)
}
