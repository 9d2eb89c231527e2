//! Infraction detection: collisions, red-light crossings and route
//! deviation.
//!
//! Collisions are found with the oriented-box overlap test and debounced
//! per object pair: contact raises one event on the rising edge and re-arms
//! only after the boxes separate by a hysteresis margin, so a sustained
//! scrape does not flood the log.

use crate::geometry::Obb;
use crate::map::RoadMap;
use crate::scene::{ObjectKind, ObjectState, SceneGraph};
use std::collections::{BTreeMap, BTreeSet};

use super::log::{EventKind, InfractionEvent};

/// Separation (m) required before a pair can trigger again.
const REARM_MARGIN: f64 = 0.3;

/// Tracks contact state across steps for pairs and signal lines.
#[derive(Debug, Default)]
pub struct InfractionTracker {
    /// Pairs currently in contact (armed until they separate).
    contact: BTreeSet<String>,
    /// Agents already flagged for route deviation.
    deviated: BTreeSet<String>,
    /// (agent, signal) pairs already flagged this red phase.
    red_flagged: BTreeSet<String>,
}

fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

fn obb_of(o: &ObjectState) -> Obb {
    Obb {
        center: crate::geometry::Vec2::new(o.pose.x, o.pose.y),
        half_len: o.extent[0] / 2.0,
        half_wid: o.extent[1] / 2.0,
        heading: o.pose.heading,
    }
}

fn collision_kind(other: ObjectKind) -> EventKind {
    match other {
        ObjectKind::Vehicle => EventKind::CollisionVehicle,
        ObjectKind::Pedestrian => EventKind::CollisionPedestrian,
        ObjectKind::Static => EventKind::CollisionStatic,
    }
}

impl InfractionTracker {
    /// Scan the scene for collisions involving at least one controlled
    /// agent. Emits one event per pair on the rising edge of contact,
    /// attributed to the (lexically first) controlled participant.
    ///
    /// Pairs are pruned with a sweep over x-sorted objects: a pair whose x
    /// gap exceeds the combined reach cannot touch, and is already past the
    /// re-arm margin, so dropping it from the contact set is exactly the
    /// disarm the hysteresis calls for. Per-step cost stays near-linear in
    /// crowd size instead of quadratic.
    pub fn detect_collisions(
        &mut self,
        scene: &SceneGraph,
        controlled: &BTreeSet<String>,
        step: u64,
    ) -> Vec<InfractionEvent> {
        let objs = &scene.objects;
        let mut order: Vec<usize> = (0..objs.len()).collect();
        order.sort_by(|&a, &b| objs[a].pose.x.total_cmp(&objs[b].pose.x));
        let ctl: Vec<bool> = objs.iter().map(|o| controlled.contains(&o.id)).collect();
        let half: Vec<f64> = objs
            .iter()
            .map(|o| (o.extent[0] + o.extent[1]) / 2.0)
            .collect();
        let max_half = half.iter().copied().fold(0.0, f64::max);

        let mut events = Vec::new();
        let mut next_contact = BTreeSet::new();
        for oi in 0..order.len() {
            let i = order[oi];
            let a = &objs[i];
            let window = half[i] + max_half + REARM_MARGIN;
            for &j in &order[oi + 1..] {
                let b = &objs[j];
                if b.pose.x - a.pose.x > window {
                    break;
                }
                if !ctl[i] && !ctl[j] {
                    continue;
                }
                let dx = a.pose.x - b.pose.x;
                let dy = a.pose.y - b.pose.y;
                let reach = half[i] + half[j] + REARM_MARGIN;
                if dx * dx + dy * dy > reach * reach {
                    continue;
                }
                let key = pair_key(&a.id, &b.id);
                let boxed_a = obb_of(a);
                let boxed_b = obb_of(b);
                let touching = boxed_a.overlaps(&boxed_b);
                let was = self.contact.contains(&key);
                if touching {
                    if !was {
                        // Attribute to a controlled participant so
                        // per-agent scoring can find it.
                        let (agent, other) = if ctl[i] { (a, b) } else { (b, a) };
                        events.push(InfractionEvent {
                            step,
                            kind: collision_kind(other.kind),
                            agent_id: agent.id.clone(),
                            other_id: Some(other.id.clone()),
                        });
                    }
                    next_contact.insert(key);
                } else if was && boxed_a.separation_margin(&boxed_b) <= REARM_MARGIN {
                    next_contact.insert(key);
                }
            }
        }
        self.contact = next_contact;
        events.sort_by(|a, b| (&a.agent_id, &a.other_id).cmp(&(&b.agent_id, &b.other_id)));
        events
    }

    /// Check whether any controlled agent crossed a red stop line during
    /// the integration from `s_before` (arc position per agent per signal)
    /// to the current scene. `positions_before` maps agent id -> arc
    /// position on its lane before integration.
    #[allow(clippy::too_many_arguments)]
    pub fn detect_red_light(
        &mut self,
        scene: &SceneGraph,
        map: &RoadMap,
        controlled: &BTreeSet<String>,
        positions_before: &BTreeMap<String, (String, f64)>,
        step: u64,
        sim_time_before: f64,
    ) -> Vec<InfractionEvent> {
        let mut events = Vec::new();
        let mut lines: BTreeMap<&str, crate::geometry::Polyline> = BTreeMap::new();
        for id in controlled {
            let Some(obj) = scene.object(id) else { continue };
            let Some((lane_before, s_before)) = positions_before.get(id) else {
                continue;
            };
            let Some(lane_id) = &obj.lane_id else { continue };
            if lane_id != lane_before {
                // Lane handoff this step; the stop line of the previous
                // lane is behind either way, skip one step of checking.
                continue;
            }
            let Some(lane) = map.lane(lane_id) else { continue };
            let line = lines
                .entry(lane_id.as_str())
                .or_insert_with(|| crate::geometry::Polyline::new(lane.centerline.clone()));
            let s_after = line
                .project(crate::geometry::Vec2::new(obj.pose.x, obj.pose.y))
                .s;
            for sig in map.signals_on(lane_id) {
                let s_stop = line.project(sig.stop_point).s;
                // Front bumper as the crossing reference.
                let half = obj.extent[0] / 2.0;
                let before = s_before + half;
                let after = s_after + half;
                if before < s_stop && after >= s_stop {
                    let (phase, _) = sig.schedule.phase_at(sim_time_before);
                    if phase == crate::scene::SignalPhase::Red {
                        let flag = format!("{id}|{}", sig.id);
                        if self.red_flagged.insert(flag) {
                            events.push(InfractionEvent {
                                step,
                                kind: EventKind::RedLightViolation,
                                agent_id: id.clone(),
                                other_id: Some(sig.id.clone()),
                            });
                        }
                    }
                }
            }
        }
        events
    }

    /// Flag an agent whose distance from its route has stayed above the
    /// threshold for the configured dwell. Returns true the first time.
    pub fn flag_route_deviation(&mut self, agent_id: &str) -> bool {
        self.deviated.insert(agent_id.to_string())
    }

    pub fn has_deviated(&self, agent_id: &str) -> bool {
        self.deviated.contains(agent_id)
    }
}

/// Distance from route above which an agent counts as off-route.
pub const ROUTE_DEVIATION_DISTANCE: f64 = 5.0;
/// Consecutive off-route steps before the deviation event fires.
pub const ROUTE_DEVIATION_DWELL: u64 = 100;
