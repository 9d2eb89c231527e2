//! Lowering policies onto concrete modulation API calls.
//!
//! [`build_script`] is the shared entry point for the live pipeline and for
//! replay: given the same view, policies and state it reproduces the exact
//! same script, byte for byte.

use super::catalog::{find_api, TargetClass};
use super::{ApiCall, ConsistencyGuard, ModulationState, Script, Selector};
use crate::scene::{identify_objects, BevView, LaneGeometry, ObjectKind, ObjectState, SignalState};
use crate::seeds;
use crate::style::{Layer, Policy, PolicySet};
use std::collections::BTreeMap;

/// A candidate target for modulation: one element of the agent's view.
#[derive(Debug, Clone, Copy)]
pub enum ModTarget<'a> {
    Object(&'a ObjectState),
    Lane(&'a LaneGeometry),
    Signal(&'a SignalState),
}

impl ModTarget<'_> {
    pub fn id(&self) -> &str {
        match self {
            ModTarget::Object(o) => &o.id,
            ModTarget::Lane(l) => &l.id,
            ModTarget::Signal(s) => &s.id,
        }
    }

    pub fn class(&self) -> TargetClass {
        match self {
            ModTarget::Object(_) => TargetClass::Object,
            ModTarget::Lane(_) => TargetClass::Lane,
            ModTarget::Signal(_) => TargetClass::Signal,
        }
    }
}

/// Step context the mapping needs besides the policies themselves.
#[derive(Debug, Clone)]
pub struct MappingCtx<'a> {
    pub view: &'a BevView,
    pub agent_seed: u64,
    pub step: u64,
    /// Effective intensity per layer at this step.
    pub effective: BTreeMap<Layer, f64>,
    /// Translation-event count per layer; call seeds change with it.
    pub versions: BTreeMap<Layer, u64>,
    /// Whether the agent is currently inside an attentional lapse window.
    pub l3_lapse_active: bool,
}

impl MappingCtx<'_> {
    fn eff(&self, layer: Layer) -> f64 {
        self.effective.get(&layer).copied().unwrap_or(0.0)
    }

    fn version(&self, layer: Layer) -> u64 {
        self.versions.get(&layer).copied().unwrap_or(0)
    }
}

pub use crate::scene::{in_ego_corridor, lead_id};

/// Resolve whether a selector matches a concrete target in a view.
pub fn selector_matches(sel: &Selector, target: &ModTarget, view: &BevView) -> bool {
    if let Some(id) = &sel.target_id {
        return id == target.id();
    }
    if let Some(kind) = &sel.kind {
        let matches = match (kind.as_str(), target) {
            ("vehicle", ModTarget::Object(o)) => o.kind == ObjectKind::Vehicle,
            ("pedestrian", ModTarget::Object(o)) => o.kind == ObjectKind::Pedestrian,
            ("static", ModTarget::Object(o)) => o.kind == ObjectKind::Static,
            ("object", ModTarget::Object(_)) => true,
            ("lane", ModTarget::Lane(_)) => true,
            ("signal", ModTarget::Signal(_)) => true,
            _ => false,
        };
        if !matches {
            return false;
        }
    }
    if let Some(rel) = &sel.relation {
        let ModTarget::Object(o) = target else {
            return false;
        };
        let ok = match rel {
            super::Relation::Lead => lead_id(view) == Some(o.id.as_str()),
            super::Relation::SameLane => in_ego_corridor(view, o),
            super::Relation::Oncoming => {
                o.pose.x > 0.0 && o.pose.heading.abs() > std::f64::consts::FRAC_PI_2
            }
            super::Relation::Any => true,
        };
        if !ok {
            return false;
        }
    }
    true
}

fn mk_call(
    ctx: &MappingCtx,
    layer: Layer,
    api: &str,
    target_id: &str,
    params: &[(&str, f64)],
) -> ApiCall {
    ApiCall {
        api: api.to_string(),
        selector: Selector::for_id(target_id),
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        layer,
        call_seed: seeds::u64_hash(
            ctx.agent_seed,
            &[layer.as_str(), api, target_id],
            ctx.version(layer),
        ),
    }
}

/// Map the policies active on one agent onto API calls for one target.
///
/// Policies that carry explicit calls (provider output) are instantiated
/// with their parameters rescaled from the policy's base intensity to the
/// current effective intensity, linearly about each parameter's identity
/// point. Policies without explicit calls use the built-in per-trait
/// mapping driven by `parameter_hints`; the core rule for scale-type hints
/// is `value = identity + hint * effective_intensity`.
pub fn map_policy_to_calls(
    target: &ModTarget,
    policies: &PolicySet,
    ctx: &MappingCtx,
) -> Vec<ApiCall> {
    let mut calls = Vec::new();
    for (layer, policy) in &policies.policies {
        let eff = ctx.eff(*layer);
        if eff <= 0.0 {
            continue;
        }
        if !policy.explicit_calls.is_empty() {
            calls.extend(explicit_calls(policy, target, ctx, eff));
        } else {
            calls.extend(trait_calls(policy, target, ctx, eff));
        }
    }
    calls
}

fn explicit_calls(
    policy: &Policy,
    target: &ModTarget,
    ctx: &MappingCtx,
    eff: f64,
) -> Vec<ApiCall> {
    let base = policy.intensity.max(1e-9);
    let ratio = eff / base;
    let mut out = Vec::new();
    for tmpl in &policy.explicit_calls {
        let Some(spec) = find_api(&tmpl.api) else {
            continue;
        };
        if spec.target != target.class() || !selector_matches(&tmpl.selector, target, ctx.view) {
            continue;
        }
        let mut call = mk_call(ctx, policy.layer, &tmpl.api, target.id(), &[]);
        for (name, value) in &tmpl.params {
            let Some(ps) = spec.param(name) else { continue };
            let scaled = (ps.identity + (value - ps.identity) * ratio).clamp(ps.min, ps.max);
            call.params.insert(name.clone(), scaled);
        }
        if spec.params.iter().all(|ps| call.params.contains_key(ps.name)) {
            out.push(call);
        }
    }
    out
}

fn trait_calls(policy: &Policy, target: &ModTarget, ctx: &MappingCtx, eff: f64) -> Vec<ApiCall> {
    let layer = policy.layer;
    let mut out = Vec::new();
    match (policy.trait_name.as_str(), target) {
        ("aggressive", ModTarget::Object(o)) => {
            if o.kind == ObjectKind::Vehicle && in_ego_corridor(ctx.view, o) {
                let factor = 1.0 + policy.hint("distance_scale", 0.5) * eff;
                out.push(mk_call(ctx, layer, "scale_perceived_distance", &o.id, &[("factor", factor)]));
                if lead_id(ctx.view) == Some(o.id.as_str()) {
                    let f = 1.0 + policy.hint("lead_speed_scale", 0.3) * eff;
                    out.push(mk_call(ctx, layer, "scale_perceived_speed", &o.id, &[("factor", f)]));
                }
            }
        }
        ("aggressive", ModTarget::Signal(s)) => {
            let hold = policy.hint("yellow_green_hold_s", 2.5) * eff;
            if hold > 1e-3 {
                out.push(mk_call(ctx, layer, "stretch_perceived_yellow", &s.id, &[("green_hold_s", hold)]));
            }
        }
        ("cautious", ModTarget::Object(o)) => {
            if o.kind == ObjectKind::Vehicle && in_ego_corridor(ctx.view, o) {
                let factor = 1.0 + policy.hint("distance_scale", -0.35) * eff;
                out.push(mk_call(ctx, layer, "scale_perceived_distance", &o.id, &[("factor", factor)]));
            }
            if o.kind != ObjectKind::Static {
                let factor = 1.0 + policy.hint("size_scale", 0.4) * eff;
                out.push(mk_call(ctx, layer, "scale_object_size", &o.id, &[("factor", factor)]));
            }
        }
        ("drunk", ModTarget::Lane(l)) => {
            let amp = policy.hint("lane_curve_amplitude_m", 0.9) * eff;
            if amp > 1e-3 {
                out.push(mk_call(
                    ctx,
                    layer,
                    "curve_lane_marks",
                    &l.id,
                    &[
                        ("amplitude_m", amp),
                        ("wavelength_m", policy.hint("lane_curve_wavelength_m", 30.0)),
                    ],
                ));
            }
        }
        ("drunk", ModTarget::Object(o)) => {
            if o.kind == ObjectKind::Vehicle {
                let sign = if seeds::u64_hash(ctx.agent_seed, &["bias_sign"], ctx.version(layer)) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                };
                let bias = policy.hint("heading_bias_rad", 0.12) * eff * sign;
                out.push(mk_call(ctx, layer, "bias_perceived_heading", &o.id, &[("bias_rad", bias)]));
            }
        }
        ("fatigued", ModTarget::Object(o)) => {
            if o.kind != ObjectKind::Static {
                let hold = (policy.hint("perception_hold_steps", 40.0) * eff).round();
                if hold >= 1.0 {
                    out.push(mk_call(ctx, layer, "freeze_motion_update", &o.id, &[("hold_steps", hold)]));
                }
            }
        }
        ("fatigued", ModTarget::Signal(s)) => {
            let delay = (policy.hint("signal_delay_steps", 30.0) * eff).round();
            if delay >= 1.0 {
                out.push(mk_call(ctx, layer, "delay_signal_perception", &s.id, &[("delay_steps", delay)]));
            }
        }
        ("distracted", ModTarget::Object(o)) => {
            if o.kind != ObjectKind::Static {
                let base = if ctx.l3_lapse_active {
                    policy.hint("lapse_hold_steps", 36.0)
                } else {
                    policy.hint("baseline_hold_steps", 9.0)
                };
                let hold = (base * eff).round();
                if hold >= 1.0 {
                    out.push(mk_call(ctx, layer, "freeze_motion_update", &o.id, &[("hold_steps", hold)]));
                }
            }
        }
        ("distracted", ModTarget::Lane(l)) => {
            if ctx.l3_lapse_active && ctx.view.ego_lane.as_deref() == Some(l.id.as_str()) {
                let sign = if seeds::u64_hash(ctx.agent_seed, &["shift_sign"], ctx.version(layer)) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                };
                let offset = policy.hint("lapse_lane_shift_m", 0.45) * eff * sign;
                out.push(mk_call(ctx, layer, "shift_lane_center", &l.id, &[("offset_m", offset)]));
            }
        }
        _ => {}
    }
    out
}

/// Build the complete, consistency-guarded script for one agent and step.
///
/// Targets are enumerated deterministically (objects by relevance order,
/// then lanes and signals by id), calls are sorted into canonical order and
/// guarded parameters are rate-limited against `state`. Returns the script
/// plus the map of guarded parameter values committed this step.
pub fn build_script(
    policies: &PolicySet,
    ctx: &MappingCtx,
    state: &mut ModulationState,
    delta: f64,
) -> (Script, BTreeMap<String, f64>) {
    let mut calls = Vec::new();
    for o in identify_objects(ctx.view) {
        calls.extend(map_policy_to_calls(&ModTarget::Object(o), policies, ctx));
    }
    for lane in ctx.view.lanes.values() {
        calls.extend(map_policy_to_calls(&ModTarget::Lane(lane), policies, ctx));
    }
    for sig in &ctx.view.signals {
        calls.extend(map_policy_to_calls(&ModTarget::Signal(sig), policies, ctx));
    }
    let mut script = Script { calls };
    script.sort();

    let mut guard = ConsistencyGuard::new(state, delta);
    for call in &mut script.calls {
        let Some(spec) = find_api(&call.api) else { continue };
        for (name, value) in call.params.iter_mut() {
            if spec.param(name).is_some_and(|p| p.guarded) {
                *value = guard.clamp(call.layer, &call.api, name, *value);
            }
        }
    }
    let committed = guard.commit();
    (script, committed)
}
