//! Execution of modulation scripts against a private view.
//!
//! `apply_script` never touches the objective scene graph: it consumes a
//! borrowed view, clones it and rewrites the clone. Stale-perception APIs
//! (freeze, delay) keep per-target snapshots in the agent's
//! [`ModulationState`] so the lag persists across steps and replays.

use super::catalog::{find_api, TargetClass};
use super::mapping::{selector_matches, ModTarget};
use super::{ApiCall, ModulationState, Script};
use crate::geometry::{normalize_angle, Polyline, Vec2, TAU};
use crate::scene::{BevView, ObjectState, SignalPhase, ViewProvenance};
use serde::{Deserialize, Serialize};

/// Snapshot held by a stale-perception entry.
#[derive(Debug, Clone)]
pub struct StaleEntry {
    pub object: Option<ObjectState>,
    pub signal: Option<(SignalPhase, f64)>,
    pub captured_step: u64,
    pub hold: u64,
}

/// A call that could not be applied, with the reason. Skips are data, not
/// errors: scripts may legitimately target things that left the view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCall {
    pub api: String,
    pub target: String,
    pub reason: String,
}

/// Result of applying a script.
#[derive(Debug, Clone)]
pub struct ApplyReport {
    pub view: BevView,
    pub skipped: Vec<SkippedCall>,
}

/// Apply `script` to a copy of `view`, in script order. Returns the
/// modulated view marked [`ViewProvenance::Subjective`] plus any skipped
/// calls. Never panics on malformed calls; they are skipped instead.
pub fn apply_script(
    view: &BevView,
    script: &Script,
    state: &mut ModulationState,
    dt: f64,
) -> ApplyReport {
    let _ = dt;
    let mut out = view.clone();
    let mut skipped = Vec::new();

    for call in &script.calls {
        let Some(spec) = find_api(&call.api) else {
            skipped.push(skip(call, "unknown api"));
            continue;
        };
        if call.params.values().any(|v| !v.is_finite()) {
            skipped.push(skip(call, "non-finite parameter"));
            continue;
        }
        match spec.target {
            TargetClass::Object => {
                let ids: Vec<String> = out
                    .objects
                    .iter()
                    .filter(|o| selector_matches(&call.selector, &ModTarget::Object(o), &out))
                    .map(|o| o.id.clone())
                    .collect();
                if ids.is_empty() {
                    skipped.push(skip(call, "target not in view"));
                    continue;
                }
                for id in ids {
                    apply_object_call(&mut out, call, &id, state);
                }
            }
            TargetClass::Lane => {
                let ids: Vec<String> = out
                    .lanes
                    .values()
                    .filter(|l| selector_matches(&call.selector, &ModTarget::Lane(l), &out))
                    .map(|l| l.id.clone())
                    .collect();
                if ids.is_empty() {
                    skipped.push(skip(call, "target not in view"));
                    continue;
                }
                for id in ids {
                    apply_lane_call(&mut out, call, &id);
                }
            }
            TargetClass::Signal => {
                let ids: Vec<String> = out
                    .signals
                    .iter()
                    .filter(|s| selector_matches(&call.selector, &ModTarget::Signal(s), &out))
                    .map(|s| s.id.clone())
                    .collect();
                if ids.is_empty() {
                    skipped.push(skip(call, "target not in view"));
                    continue;
                }
                for id in ids {
                    apply_signal_call(&mut out, call, &id, state);
                }
            }
        }
    }

    out.provenance = ViewProvenance::Subjective;
    ApplyReport { view: out, skipped }
}

fn skip(call: &ApiCall, reason: &str) -> SkippedCall {
    SkippedCall {
        api: call.api.clone(),
        target: call.selector.sort_key(),
        reason: reason.to_string(),
    }
}

fn param(call: &ApiCall, name: &str, default: f64) -> f64 {
    call.params.get(name).copied().unwrap_or(default)
}

fn stale_key(call: &ApiCall, target: &str) -> String {
    format!("{}|{}|{}", call.layer.as_str(), call.api, target)
}

/// Advance a stale entry's capture lattice to cover `step`, snapshotting
/// the current state whenever a refresh boundary passed. The first sighting
/// back-dates the capture by `call_seed % hold` so refresh phases differ
/// between agents and targets.
fn refresh_lattice(entry: &mut StaleEntry, step: u64) -> bool {
    if step >= entry.captured_step + entry.hold.max(1) {
        let hold = entry.hold.max(1);
        let k = (step - entry.captured_step) / hold;
        entry.captured_step += k * hold;
        true
    } else {
        false
    }
}

fn apply_object_call(out: &mut BevView, call: &ApiCall, id: &str, state: &mut ModulationState) {
    let step = out.step_index;
    match call.api.as_str() {
        "scale_perceived_speed" => {
            if let Some(o) = out.objects.iter_mut().find(|o| o.id == id) {
                o.speed *= param(call, "factor", 1.0);
            }
        }
        "bias_perceived_heading" => {
            if let Some(o) = out.objects.iter_mut().find(|o| o.id == id) {
                o.pose.heading = normalize_angle(o.pose.heading + param(call, "bias_rad", 0.0));
            }
        }
        "freeze_motion_update" => {
            let hold = param(call, "hold_steps", 1.0).round().max(1.0) as u64;
            let key = stale_key(call, id);
            let current = out.objects.iter().find(|o| o.id == id).cloned();
            let Some(current) = current else { return };
            let entry = state.stale.entry(key).or_insert_with(|| StaleEntry {
                object: Some(current.clone()),
                signal: None,
                captured_step: step.saturating_sub(call.call_seed % hold),
                hold,
            });
            entry.hold = hold;
            if refresh_lattice(entry, step) {
                entry.object = Some(current);
            }
            if let (Some(snap), Some(o)) = (
                entry.object.clone(),
                out.objects.iter_mut().find(|o| o.id == id),
            ) {
                o.pose = snap.pose;
                o.speed = snap.speed;
                o.lane_id = snap.lane_id;
            }
        }
        "drop_object_velocity" => {
            if let Some(o) = out.objects.iter_mut().find(|o| o.id == id) {
                o.speed = 0.0;
            }
        }
        "scale_perceived_distance" => {
            let f = param(call, "factor", 1.0);
            if let Some(o) = out.objects.iter_mut().find(|o| o.id == id) {
                o.pose.x *= f;
                o.pose.y *= f;
            }
        }
        "offset_object_position" => {
            if let Some(o) = out.objects.iter_mut().find(|o| o.id == id) {
                o.pose.x += param(call, "dx_m", 0.0);
                o.pose.y += param(call, "dy_m", 0.0);
            }
        }
        "scale_object_size" => {
            let f = param(call, "factor", 1.0);
            if let Some(o) = out.objects.iter_mut().find(|o| o.id == id) {
                o.extent[0] *= f;
                o.extent[1] *= f;
            }
        }
        "occlude_object" => {
            out.objects.retain(|o| o.id != id);
        }
        _ => {}
    }
}

fn apply_lane_call(out: &mut BevView, call: &ApiCall, id: &str) {
    match call.api.as_str() {
        "curve_lane_marks" => {
            let amp = param(call, "amplitude_m", 0.0);
            let wavelength = param(call, "wavelength_m", 30.0).max(1.0);
            if let Some(lane) = out.lanes.get_mut(id) {
                if lane.centerline.len() < 2 {
                    return;
                }
                let base = Polyline::new(lane.centerline.clone()).resampled(2.0);
                let mut pts = Vec::with_capacity(base.points().len());
                let mut cum = 0.0;
                let mut prev: Option<Vec2> = None;
                for &pt in base.points() {
                    if let Some(p) = prev {
                        cum += p.dist(pt);
                    }
                    prev = Some(pt);
                    let s_global = lane.s_start + cum;
                    let normal = base.tangent_at(cum).perp();
                    let lateral = amp * (TAU * s_global / wavelength).sin();
                    pts.push(pt + normal * lateral);
                }
                lane.centerline = pts;
            }
        }
        "widen_perceived_lane" => {
            if let Some(lane) = out.lanes.get_mut(id) {
                lane.width *= param(call, "factor", 1.0);
            }
        }
        "shift_lane_center" => {
            let offset = param(call, "offset_m", 0.0);
            if let Some(lane) = out.lanes.get_mut(id) {
                if lane.centerline.len() < 2 {
                    return;
                }
                let base = Polyline::new(lane.centerline.clone());
                let mut cum = 0.0;
                let mut prev: Option<Vec2> = None;
                let mut pts = Vec::with_capacity(lane.centerline.len());
                for &pt in base.points() {
                    if let Some(p) = prev {
                        cum += p.dist(pt);
                    }
                    prev = Some(pt);
                    pts.push(pt + base.tangent_at(cum).perp() * offset);
                }
                lane.centerline = pts;
            }
        }
        "erase_lane_marking" => {
            out.lanes.remove(id);
        }
        _ => {}
    }
}

fn apply_signal_call(out: &mut BevView, call: &ApiCall, id: &str, state: &mut ModulationState) {
    let step = out.step_index;
    match call.api.as_str() {
        "shift_signal_phase" => {
            if let Some(s) = out.signals.iter_mut().find(|s| s.id == id) {
                s.time_in_state += param(call, "shift_s", 0.0);
            }
        }
        "delay_signal_perception" => {
            let hold = param(call, "delay_steps", 1.0).round().max(1.0) as u64;
            let key = stale_key(call, id);
            let current = out
                .signals
                .iter()
                .find(|s| s.id == id)
                .map(|s| (s.phase, s.time_in_state));
            let Some(current) = current else { return };
            let entry = state.stale.entry(key).or_insert_with(|| StaleEntry {
                object: None,
                signal: Some(current),
                captured_step: step.saturating_sub(call.call_seed % hold),
                hold,
            });
            entry.hold = hold;
            if refresh_lattice(entry, step) {
                entry.signal = Some(current);
            }
            if let (Some((phase, tis)), Some(s)) =
                (entry.signal, out.signals.iter_mut().find(|s| s.id == id))
            {
                s.phase = phase;
                s.time_in_state = tis;
            }
        }
        "stretch_perceived_yellow" => {
            let hold = param(call, "green_hold_s", 0.0);
            if let Some(s) = out.signals.iter_mut().find(|s| s.id == id) {
                if s.phase == SignalPhase::Yellow && s.time_in_state < hold {
                    s.phase = SignalPhase::Green;
                }
            }
        }
        "misread_signal_state" => {
            if let Some(s) = out.signals.iter_mut().find(|s| s.id == id) {
                s.phase = s.phase.next_in_cycle();
            }
        }
        _ => {}
    }
}
