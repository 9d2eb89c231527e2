//! The simulation loop.
//!
//! Each decision step runs three phases:
//!
//! 1. a sequential writer phase that polls style triggers and performs
//!    translations in a fixed agent order,
//! 2. a per-agent phase (parallel by default) in which every agent
//!    extracts its private view, builds and applies its modulation script
//!    and decides, touching nothing shared, and
//! 3. a sequential writer phase that integrates kinematics, refreshes
//!    signals from their schedules, maintains lane bookkeeping and detects
//!    infractions.
//!
//! Phase 2 depends only on per-agent state plus the read-only scene, so
//! its results do not depend on evaluation order or thread scheduling;
//! that is what makes runs bit-reproducible.

pub mod collision;
pub mod config;
pub mod log;
pub mod replay;

use crate::dcl;
use crate::geometry::{normalize_angle, Polyline, Vec2};
use crate::map::Route;
use crate::pmbi::divergence::perception_divergence;
use crate::pmbi::mapping::{build_script, MappingCtx};
use crate::pmbi::{apply_script, ModulationState};
use crate::scene::{
    advance_kinematics, extract_bev, DrivingDecision, LaneChange, ObjectKind, ObjectState, Pose,
    SceneError, SceneGraph,
};
use crate::seeds;
use crate::style::{
    effective_intensity, generate_description, BehaviorDescription, Layer, PolicySet,
    ScheduleCtx, StyleError, TraitRegistry, TriggerState, Triggers,
};
use crate::translator::{
    CatalogTranslator, TranslationMode, TranslationOutcome, TranslationRequest,
    TranslationSource, Translator,
};
use collision::{InfractionTracker, ROUTE_DEVIATION_DISTANCE, ROUTE_DEVIATION_DWELL};
use config::{RunConfig, ScriptedConfig};
use log::{
    AgentRecord, EventKind, InfractionEvent, StepRecord, TrajectoryLog, TranslationEventRecord,
};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Style(#[from] StyleError),
    #[error("evaluation order must be a permutation of agent ids")]
    BadEvalOrder,
}

/// Knobs that affect how a run executes without being part of its identity.
/// Only `bypass_pmbi` changes outcomes (by making decisions read the
/// objective view); it is used for non-intrusiveness audits.
#[derive(Clone, Default)]
pub struct RunOptions {
    /// Decide on the objective view; scripts are still built, applied and
    /// logged so divergence stays observable.
    pub bypass_pmbi: bool,
    /// Process agents sequentially in this id order instead of in parallel.
    /// Results must not depend on it; tests exploit that.
    pub eval_order: Option<Vec<String>>,
    /// Translator to use; defaults to the deterministic catalog translator.
    pub translator: Option<Arc<dyn Translator>>,
    /// Run translator calls on worker threads and adopt results at the
    /// next step boundary instead of blocking the loop. Only useful with a
    /// remote provider; adoption steps then depend on wall-clock timing.
    pub async_translation: bool,
}

/// Everything a finished run hands back.
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub final_scene: SceneGraph,
    pub wall_time: Duration,
    pub mean_step: Duration,
}

/// Canonical digest of the objective scene.
pub fn world_digest(scene: &SceneGraph) -> String {
    let bytes = serde_json::to_vec(scene).expect("scene serialises");
    let mut h = Sha256::new();
    h.update(&bytes);
    hex::encode(h.finalize())
}

struct AgentRt {
    id: String,
    seed: u64,
    route: Route,
    route_line: Polyline,
    description: BehaviorDescription,
    policies: PolicySet,
    /// Step at which each layer first adopted a policy.
    activation: BTreeMap<Layer, u64>,
    trigger: TriggerState,
    modstate: ModulationState,
    believed_lane: String,
    lane_cooldown: u64,
    last_l3_step: Option<u64>,
    off_route_steps: u64,
    current_triggers: Triggers,
    pending_events: Vec<TranslationEventRecord>,
}

struct ScriptedRt {
    cfg: ScriptedConfig,
    line: Polyline,
    s: f64,
    speed: f64,
}

impl ScriptedRt {
    fn new(cfg: &ScriptedConfig, map: &crate::map::RoadMap) -> ScriptedRt {
        let line = match (&cfg.lane, &cfg.path) {
            (Some(lane_id), None) => {
                // Follow the lane and keep walking first successors so the
                // object does not stall at a lane boundary.
                let mut pts: Vec<Vec2> = Vec::new();
                let mut current = lane_id.clone();
                for _ in 0..16 {
                    let Some(lane) = map.lane(&current) else { break };
                    for &p in &lane.centerline {
                        if pts.last().is_none_or(|q| q.dist(p) > 1e-9) {
                            pts.push(p);
                        }
                    }
                    match lane.successors.first() {
                        Some(next) => current = next.clone(),
                        None => break,
                    }
                }
                Polyline::new(pts)
            }
            (None, Some(path)) => {
                Polyline::new(path.iter().map(|p| Vec2::new(p[0], p[1])).collect())
            }
            _ => unreachable!("config validation enforces lane xor path"),
        };
        let speed = cfg
            .profile
            .iter()
            .filter(|seg| seg.from_step == 0)
            .map(|seg| seg.speed)
            .next_back()
            .unwrap_or(0.0);
        ScriptedRt {
            cfg: cfg.clone(),
            line,
            s: cfg.start_s,
            speed,
        }
    }

    fn pose_at(&self, s: f64) -> Pose {
        let p = self.line.point_at(s);
        let t = self.line.tangent_at(s);
        let normal = Vec2::new(-t.y, t.x);
        let pos = Vec2::new(
            p.x + normal.x * self.cfg.lateral,
            p.y + normal.y * self.cfg.lateral,
        );
        Pose {
            x: pos.x,
            y: pos.y,
            heading: t.y.atan2(t.x),
        }
    }

    fn current_state(&self) -> (Pose, f64) {
        (self.pose_at(self.s), self.speed)
    }

    /// Integrate one step of the speed profile and return the new state.
    fn advance(&mut self, step: u64, dt: f64) -> (Pose, f64) {
        let seg = self
            .cfg
            .profile
            .iter()
            .filter(|seg| seg.from_step <= step)
            .next_back();
        if let Some(seg) = seg {
            let max_delta = seg.rate.abs() * dt;
            let delta = (seg.speed - self.speed).clamp(-max_delta, max_delta);
            self.speed += delta;
        }
        self.s += self.speed * dt;
        let end = self.line.length();
        if self.s >= end {
            self.s = end;
            self.speed = 0.0;
        }
        (self.pose_at(self.s), self.speed)
    }
}

struct PendingTranslation {
    agent_idx: usize,
    mode: TranslationMode,
    layers: Vec<Layer>,
    rx: mpsc::Receiver<Result<TranslationOutcome, crate::translator::TranslatorError>>,
}

pub struct Simulation {
    cfg: RunConfig,
    options: RunOptions,
    scene: SceneGraph,
    agents: Vec<AgentRt>,
    scripted: Vec<ScriptedRt>,
    tracker: InfractionTracker,
    translator: Arc<dyn Translator>,
    controlled: BTreeSet<String>,
    pending: Vec<PendingTranslation>,
    log: TrajectoryLog,
}

/// Run a configuration to completion.
pub fn run(cfg: RunConfig, options: RunOptions) -> Result<RunOutput, RunError> {
    let mut sim = Simulation::new(cfg, options)?;
    let max_steps = sim.cfg.scenario.max_steps;
    let start = Instant::now();
    for step in 0..=max_steps {
        sim.step(step, step < max_steps)?;
    }
    let wall_time = start.elapsed();
    let steps = (max_steps + 1).max(1);
    Ok(RunOutput {
        mean_step: wall_time / steps as u32,
        wall_time,
        log: sim.log,
        final_scene: sim.scene,
    })
}

impl Simulation {
    pub fn new(cfg: RunConfig, options: RunOptions) -> Result<Simulation, RunError> {
        cfg.validate()?;
        if let Some(order) = &options.eval_order {
            let want: BTreeSet<&str> = cfg.scenario.agents.iter().map(|a| a.id.as_str()).collect();
            let got: BTreeSet<&str> = order.iter().map(|s| s.as_str()).collect();
            if want != got || order.len() != cfg.scenario.agents.len() {
                return Err(RunError::BadEvalOrder);
            }
        }
        let registry = TraitRegistry::builtin();
        let translator: Arc<dyn Translator> = options
            .translator
            .clone()
            .unwrap_or_else(|| Arc::new(CatalogTranslator::new(registry.clone())));

        let map = &cfg.road_map;
        let mut objects = Vec::new();
        let mut agents = Vec::new();
        let mut controlled = BTreeSet::new();
        for a in &cfg.scenario.agents {
            let seed = seeds::agent_seed(cfg.run_seed, &a.id);
            let route = Route {
                lane_ids: a.route.clone(),
            };
            let route_line = route.polyline(map);
            // Bind to whichever route lane the spawn point is nearest to,
            // normally the first.
            let spawn = Vec2::new(a.spawn.x, a.spawn.y);
            let believed_lane = route
                .lane_ids
                .iter()
                .min_by(|l, r| {
                    let dl = Polyline::new(map.lane(l).unwrap().centerline.clone())
                        .project(spawn)
                        .distance;
                    let dr = Polyline::new(map.lane(r).unwrap().centerline.clone())
                        .project(spawn)
                        .distance;
                    dl.partial_cmp(&dr).unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("validated route is non-empty")
                .clone();
            objects.push(ObjectState {
                id: a.id.clone(),
                kind: ObjectKind::Vehicle,
                pose: a.spawn,
                speed: a.speed,
                extent: a.extent,
                lane_id: Some(believed_lane.clone()),
            });
            controlled.insert(a.id.clone());
            let description = generate_description(&a.id, &a.style, &registry, seed)?;
            agents.push(AgentRt {
                id: a.id.clone(),
                seed,
                route,
                route_line,
                description,
                policies: PolicySet::default(),
                activation: BTreeMap::new(),
                trigger: TriggerState::new(seed, &cfg.scenario.schedule),
                modstate: ModulationState::default(),
                believed_lane,
                lane_cooldown: 0,
                last_l3_step: None,
                off_route_steps: 0,
                current_triggers: Triggers::default(),
                pending_events: Vec::new(),
            });
        }
        let scripted: Vec<ScriptedRt> = cfg
            .scenario
            .scripted
            .iter()
            .map(|sc| ScriptedRt::new(sc, map))
            .collect();
        for sc in &scripted {
            let (pose, speed) = sc.current_state();
            objects.push(ObjectState {
                id: sc.cfg.id.clone(),
                kind: sc.cfg.kind,
                pose,
                speed,
                extent: sc.cfg.extent,
                lane_id: sc.cfg.lane.clone(),
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
        let scene = SceneGraph {
            step_index: 0,
            sim_time: 0.0,
            objects,
            lanes: map.scene_lanes(),
            signals: map.signal_states_at(0.0),
        };
        let log = TrajectoryLog::new(cfg.clone());
        Ok(Simulation {
            cfg,
            options,
            scene,
            agents,
            scripted,
            tracker: InfractionTracker::default(),
            translator,
            controlled,
            pending: Vec::new(),
            log,
        })
    }

    /// Adopt a translation outcome for one agent and queue the log event.
    fn adopt(
        &mut self,
        agent_idx: usize,
        mode: TranslationMode,
        layers: &[Layer],
        outcome: TranslationOutcome,
        step: u64,
    ) {
        let agent = &mut self.agents[agent_idx];
        let mut covered: BTreeSet<Layer> = BTreeSet::new();
        let mut adopted = Vec::new();
        let mut notes = outcome.notes;
        for p in outcome.policies {
            if !layers.contains(&p.layer) {
                notes.push(format!(
                    "dropped out-of-scope policy for layer {:?}",
                    p.layer
                ));
                continue;
            }
            covered.insert(p.layer);
            agent.activation.entry(p.layer).or_insert(step);
            agent.policies.adopt(p.clone());
            adopted.push(p);
        }
        for layer in layers {
            if !covered.contains(layer) {
                agent.policies.bump_empty(*layer);
            }
        }
        agent.pending_events.push(TranslationEventRecord {
            mode,
            layers: layers.to_vec(),
            source: match outcome.source {
                TranslationSource::Catalog => "catalog".to_string(),
                TranslationSource::Provider => "provider".to_string(),
                TranslationSource::ProviderFallback => "provider_fallback".to_string(),
            },
            policies: adopted,
            notes,
        });
    }

    fn request_translation(
        &mut self,
        agent_idx: usize,
        mode: TranslationMode,
        layers: Vec<Layer>,
        step: u64,
    ) {
        let agent = &self.agents[agent_idx];
        let version = layers
            .iter()
            .map(|l| agent.policies.version(*l))
            .max()
            .unwrap_or(0)
            + 1;
        let prior = agent.policies.policies.get(&Layer::L2).cloned();
        if mode == TranslationMode::Update && prior.is_none() {
            // Nothing to refresh; the event still happens and still counts.
            self.adopt(
                agent_idx,
                mode,
                &layers,
                TranslationOutcome {
                    policies: vec![],
                    source: TranslationSource::Catalog,
                    notes: vec![],
                },
                step,
            );
            return;
        }
        let req = TranslationRequest {
            mode,
            agent_id: agent.id.clone(),
            description: match mode {
                TranslationMode::Update => None,
                _ => Some(agent.description.clone()),
            },
            prior: match mode {
                TranslationMode::Update => prior,
                _ => None,
            },
            layers: layers.clone(),
            agent_seed: agent.seed,
            version,
        };
        if self.options.async_translation {
            let (tx, rx) = mpsc::channel();
            let translator = Arc::clone(&self.translator);
            std::thread::spawn(move || {
                let _ = tx.send(translator.translate(&req));
            });
            self.pending.push(PendingTranslation {
                agent_idx,
                mode,
                layers,
                rx,
            });
            return;
        }
        let outcome = self.translator.translate(&req).unwrap_or_else(|e| {
            // A failed translation must never kill a run; keep the prior
            // policies and record what happened.
            TranslationOutcome {
                policies: vec![],
                source: TranslationSource::Catalog,
                notes: vec![format!("translation failed: {e}")],
            }
        });
        self.adopt(agent_idx, mode, &layers, outcome, step);
    }

    /// Collect finished asynchronous translations and adopt them now.
    fn drain_pending(&mut self, step: u64) {
        let mut still = Vec::new();
        for p in std::mem::take(&mut self.pending) {
            match p.rx.try_recv() {
                Ok(result) => {
                    let outcome = result.unwrap_or_else(|e| TranslationOutcome {
                        policies: vec![],
                        source: TranslationSource::Catalog,
                        notes: vec![format!("translation failed: {e}")],
                    });
                    self.adopt(p.agent_idx, p.mode, &p.layers, outcome, step);
                }
                Err(mpsc::TryRecvError::Empty) => still.push(p),
                Err(mpsc::TryRecvError::Disconnected) => {
                    self.adopt(
                        p.agent_idx,
                        p.mode,
                        &p.layers,
                        TranslationOutcome {
                            policies: vec![],
                            source: TranslationSource::Catalog,
                            notes: vec!["translation worker vanished".to_string()],
                        },
                        step,
                    );
                }
            }
        }
        self.pending = still;
    }

    /// One decision step; integrates afterwards unless this is the final
    /// decision point.
    pub fn step(&mut self, step: u64, integrate: bool) -> Result<(), RunError> {
        // Phase 1: triggers and translations, fixed agent order.
        self.drain_pending(step);
        for idx in 0..self.agents.len() {
            let triggers = self.agents[idx].trigger.poll(
                &self.cfg.scenario.schedule,
                step,
                self.cfg.scenario.dt,
            );
            self.agents[idx].current_triggers = triggers;
            if step == 0 {
                self.request_translation(
                    idx,
                    TranslationMode::Init,
                    vec![Layer::L1, Layer::L2, Layer::L3],
                    step,
                );
            }
            if triggers.l2_update {
                self.request_translation(idx, TranslationMode::Update, vec![Layer::L2], step);
            }
            if triggers.l3_count > 0 {
                self.agents[idx].last_l3_step = Some(step);
                self.request_translation(idx, TranslationMode::ReInterpret, vec![Layer::L3], step);
            }
        }

        // Phase 2: per-agent perception, modulation and decision.
        let digest = world_digest(&self.scene);
        let scene = &self.scene;
        let cfg = &self.cfg;
        let options = &self.options;
        let results: Vec<Result<(AgentRecord, DrivingDecision), RunError>> =
            match &self.options.eval_order {
                None => self
                    .agents
                    .par_iter_mut()
                    .map(|agent| agent_phase(scene, cfg, options, agent, step))
                    .collect(),
                Some(order) => {
                    let mut slots: Vec<Option<Result<_, RunError>>> =
                        (0..self.agents.len()).map(|_| None).collect();
                    let order_idx: Vec<usize> = {
                        let index_of: BTreeMap<&str, usize> = self
                            .agents
                            .iter()
                            .enumerate()
                            .map(|(i, a)| (a.id.as_str(), i))
                            .collect();
                        order.iter().map(|id| index_of[id.as_str()]).collect()
                    };
                    for i in order_idx {
                        let agent = &mut self.agents[i];
                        slots[i] = Some(agent_phase(scene, cfg, options, agent, step));
                    }
                    slots.into_iter().map(|s| s.expect("all slots filled")).collect()
                }
            };

        let mut agents_map = BTreeMap::new();
        let mut decisions = BTreeMap::new();
        for (agent, result) in self.agents.iter().zip(results) {
            let (record, decision) = result?;
            decisions.insert(agent.id.clone(), decision);
            agents_map.insert(agent.id.clone(), record);
        }

        // Phase 3: integrate and observe.
        let mut events = Vec::new();
        if integrate {
            let dt = self.cfg.scenario.dt;
            let sim_time_before = self.scene.sim_time;
            let positions_before = self.lane_positions();
            let scripted: BTreeMap<String, (Pose, f64)> = self
                .scripted
                .iter_mut()
                .map(|s| (s.cfg.id.clone(), s.advance(step, dt)))
                .collect();
            advance_kinematics(&mut self.scene, &decisions, &scripted, dt);
            self.scene.signals = self.cfg.road_map.signal_states_at(self.scene.sim_time);
            events.extend(self.lane_bookkeeping(&decisions, step));
            events.extend(self.tracker.detect_collisions(
                &self.scene,
                &self.controlled,
                step,
            ));
            events.extend(self.tracker.detect_red_light(
                &self.scene,
                &self.cfg.road_map,
                &self.controlled,
                &positions_before,
                step,
                sim_time_before,
            ));
        }

        self.log.steps.push(StepRecord {
            step,
            world_digest: digest,
            agents: agents_map,
            events,
        });
        Ok(())
    }

    /// Arc positions of controlled agents on their believed lanes.
    fn lane_positions(&self) -> BTreeMap<String, (String, f64)> {
        let mut out = BTreeMap::new();
        for agent in &self.agents {
            let Some(lane) = self.cfg.road_map.lane(&agent.believed_lane) else {
                continue;
            };
            let obj = self.scene.object(&agent.id).expect("agent object exists");
            let s = Polyline::new(lane.centerline.clone())
                .project(Vec2::new(obj.pose.x, obj.pose.y))
                .s;
            out.insert(agent.id.clone(), (agent.believed_lane.clone(), s));
        }
        out
    }

    /// Post-integration lane maintenance: adopt lane changes, hand off to
    /// route successors, re-bind when drifted, track route deviation.
    fn lane_bookkeeping(
        &mut self,
        decisions: &BTreeMap<String, DrivingDecision>,
        step: u64,
    ) -> Vec<InfractionEvent> {
        let mut events = Vec::new();
        let map = &self.cfg.road_map;
        for agent in &mut self.agents {
            let obj = self
                .scene
                .objects
                .iter_mut()
                .find(|o| o.id == agent.id)
                .expect("agent object exists");
            let pos = Vec2::new(obj.pose.x, obj.pose.y);

            if agent.lane_cooldown > 0 {
                agent.lane_cooldown -= 1;
            } else if let Some(d) = decisions.get(&agent.id) {
                if d.lane_change != LaneChange::Keep {
                    let want_left = d.lane_change == LaneChange::Left;
                    let mut best: Option<(&str, f64)> = None;
                    for lane in &map.lanes {
                        if lane.id == agent.believed_lane {
                            continue;
                        }
                        let line = Polyline::new(lane.centerline.clone());
                        let proj = line.project(pos);
                        let tangent = line.tangent_at(proj.s);
                        let lane_heading = tangent.y.atan2(tangent.x);
                        if normalize_angle(obj.pose.heading - lane_heading).abs()
                            > std::f64::consts::FRAC_PI_4
                        {
                            continue;
                        }
                        // A lane to the left has the agent on its right,
                        // which projects to negative lateral offset.
                        let side_ok = if want_left {
                            proj.lateral < 0.0
                        } else {
                            proj.lateral > 0.0
                        };
                        let dist = proj.lateral.abs();
                        if side_ok && (1.5..=6.0).contains(&dist) {
                            match best {
                                Some((_, b)) if b <= dist => {}
                                _ => best = Some((lane.id.as_str(), dist)),
                            }
                        }
                    }
                    if let Some((target, _)) = best {
                        agent.believed_lane = target.to_string();
                        agent.lane_cooldown = self.cfg.scenario.dcl.lane_change_cooldown_steps;
                    }
                }
            }

            if let Some(lane) = map.lane(&agent.believed_lane) {
                let line = Polyline::new(lane.centerline.clone());
                let proj = line.project(pos);
                if proj.s >= line.length() - 0.3 {
                    if let Some(next) = agent.route.next_after(&agent.believed_lane) {
                        agent.believed_lane = next.to_string();
                    } else if let Some(next) = lane.successors.first() {
                        // Route complete but the road continues: arrived
                        // agents drive on instead of parking in a column
                        // that backs up over the route end.
                        agent.believed_lane = next.clone();
                    }
                } else if proj.distance > lane.width * 1.5 {
                    if let Some((nearest, _)) = map.nearest_lane(pos, 6.0) {
                        agent.believed_lane = nearest.id.clone();
                    }
                }
            }
            obj.lane_id = Some(agent.believed_lane.clone());

            // Past the final route point the clamped projection distance
            // grows with progress, which is completion, not deviation.
            let proj = agent.route_line.project(pos);
            let route_done = proj.s >= agent.route_line.length() - 0.3;
            if !route_done && proj.distance > ROUTE_DEVIATION_DISTANCE {
                agent.off_route_steps += 1;
            } else {
                agent.off_route_steps = 0;
            }
            if agent.off_route_steps >= ROUTE_DEVIATION_DWELL
                && self.tracker.flag_route_deviation(&agent.id)
            {
                events.push(InfractionEvent {
                    step,
                    kind: EventKind::RouteDeviation,
                    agent_id: agent.id.clone(),
                    other_id: None,
                });
            }
        }
        events
    }
}

/// Effective per-layer intensities plus the lapse flag for one step. Used
/// identically by the live pipeline and by replay.
pub(crate) fn style_inputs(
    policies: &PolicySet,
    activation: &BTreeMap<Layer, u64>,
    last_l3_step: Option<u64>,
    agent_seed: u64,
    schedule: &crate::style::StyleSchedule,
    dt: f64,
    step: u64,
) -> (BTreeMap<Layer, f64>, bool) {
    let mut effective = BTreeMap::new();
    for (layer, policy) in &policies.policies {
        let sctx = ScheduleCtx {
            step,
            dt,
            agent_seed,
            activation_step: activation.get(layer).copied().unwrap_or(0),
        };
        effective.insert(*layer, effective_intensity(policy, schedule, &sctx));
    }
    let lapse = policies
        .policies
        .get(&Layer::L3)
        .and_then(|p| {
            last_l3_step.map(|t0| {
                let duration = p.hint("lapse_duration_steps", 40.0).max(0.0) as u64;
                step >= t0 && step < t0 + duration
            })
        })
        .unwrap_or(false);
    (effective, lapse)
}

/// Pure per-agent pipeline: view, script, modulated view, decision.
fn agent_phase(
    scene: &SceneGraph,
    cfg: &RunConfig,
    options: &RunOptions,
    agent: &mut AgentRt,
    step: u64,
) -> Result<(AgentRecord, DrivingDecision), RunError> {
    let view = extract_bev(scene, &agent.id, cfg.scenario.bev_radius)?;
    let (effective, lapse) = style_inputs(
        &agent.policies,
        &agent.activation,
        agent.last_l3_step,
        agent.seed,
        &cfg.scenario.schedule,
        cfg.scenario.dt,
        step,
    );
    let mctx = MappingCtx {
        view: &view,
        agent_seed: agent.seed,
        step,
        effective,
        versions: agent.policies.versions.clone(),
        l3_lapse_active: lapse,
    };
    let (script, committed) = build_script(
        &agent.policies,
        &mctx,
        &mut agent.modstate,
        cfg.scenario.consistency_delta,
    );
    let report = apply_script(&view, &script, &mut agent.modstate, cfg.scenario.dt);
    let divergence = perception_divergence(&view, &report.view);
    let decided_view = if options.bypass_pmbi { &view } else { &report.view };
    let decision = dcl::decide(decided_view, &agent.route, &cfg.scenario.dcl);

    let obj = scene.object(&agent.id).expect("agent object exists");
    let record = AgentRecord {
        pose: obj.pose,
        speed: obj.speed,
        lane: obj.lane_id.clone(),
        decision: decision.clone(),
        provenance: decided_view.provenance,
        triggers: agent.current_triggers,
        translations: std::mem::take(&mut agent.pending_events),
        versions: agent.policies.versions.clone(),
        script_digest: script.digest(),
        guarded: committed,
        divergence,
        skipped_calls: report.skipped.len() as u32,
    };
    Ok((record, decision))
}
