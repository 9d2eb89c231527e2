//! The deterministic driving controller shared by every controlled agent.
//!
//! The controller is intentionally style-free: it reads one [`BevView`] and
//! produces one [`DrivingDecision`] with no randomness and no memory. All
//! behavioural variety in the simulation comes from what the view claims,
//! never from this code. Longitudinal control follows the intelligent-driver
//! model, lateral control is a pure-pursuit correction toward a lookahead
//! point on the perceived lane, and signals are handled with a
//! braking-distance stop rule.

use crate::geometry::{normalize_angle, Polyline, Vec2};
use crate::map::Route;
use crate::scene::{lead_id, BevView, DrivingDecision, LaneChange, SignalPhase};
use serde::{Deserialize, Serialize};

/// Controller tuning. One set of parameters is shared by all agents in a
/// run; styles must not touch it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DclParams {
    /// Free-flow target speed, m/s.
    pub desired_speed: f64,
    /// Maximum comfortable acceleration, m/s^2.
    pub max_accel: f64,
    /// Comfortable braking deceleration (positive), m/s^2.
    pub comfort_decel: f64,
    /// Emergency braking limit (positive), m/s^2.
    pub max_decel: f64,
    /// Desired time headway to the lead vehicle, s.
    pub time_headway: f64,
    /// Standstill minimum gap, m.
    pub min_gap: f64,
    /// Pure-pursuit lookahead: `max(base, gain * speed)`, m.
    pub lookahead_base: f64,
    pub lookahead_gain: f64,
    /// Stop this far short of a signal stop line, m.
    pub signal_margin: f64,
    /// Steps to wait between lane changes (enforced by the runtime).
    pub lane_change_cooldown_steps: u64,
}

impl Default for DclParams {
    fn default() -> Self {
        DclParams {
            desired_speed: 12.0,
            max_accel: 1.8,
            comfort_decel: 2.5,
            max_decel: 8.0,
            time_headway: 1.5,
            min_gap: 2.0,
            lookahead_base: 4.0,
            lookahead_gain: 0.9,
            signal_margin: 2.0,
            lane_change_cooldown_steps: 60,
        }
    }
}

/// Decide one step of control from a (possibly modulated) view.
///
/// The function is pure: identical views, routes and parameters give
/// identical decisions, which is what makes style injection via perception
/// sufficient for behavioural variety.
pub fn decide(view: &BevView, route: &Route, params: &DclParams) -> DrivingDecision {
    let v = view.ego_speed;

    // A missing lane means the agent can no longer see any road structure
    // it trusts; slow to a stop while holding the current heading.
    let Some(lane) = view.ego_lane.as_ref().and_then(|id| view.lanes.get(id)) else {
        // Keep braking until the integrator clamps the speed to exactly
        // zero; a velocity dead-band here leaves a permanent residual creep.
        return DrivingDecision {
            accel: if v > 0.0 { -params.comfort_decel } else { 0.0 },
            lateral_offset: 0.0,
            heading_correction: 0.0,
            lane_change: LaneChange::Keep,
            stop_for_signal: false,
        };
    };

    // Tracking line: perceived current lane, extended with the next route
    // lane when it is visible, so the lookahead never falls off the end.
    let mut pts = lane.centerline.clone();
    if let Some(next) = view
        .ego_lane
        .as_deref()
        .and_then(|cur| route.next_after(cur))
        .and_then(|id| view.lanes.get(id))
    {
        for &p in &next.centerline {
            if pts.last().is_none_or(|q| q.dist(p) > 1e-9) {
                pts.push(p);
            }
        }
    }
    let line = Polyline::new(pts);

    // Lateral: pure pursuit toward a speed-scaled lookahead point. The ego
    // sits at the origin of its own frame.
    let proj = line.project(Vec2::ZERO);
    let lookahead = params.lookahead_base.max(params.lookahead_gain * v);
    let target = line.point_at(proj.s + lookahead);
    // Past the end of the tracking line the clamped target falls behind the
    // ego; steering toward it would command a U-turn, so hold heading.
    let heading_correction = if target.x > 0.1 {
        normalize_angle(target.y.atan2(target.x))
    } else {
        0.0
    };

    // Longitudinal: intelligent-driver model against the perceived lead.
    let v0 = params.desired_speed.max(0.1);
    let free = params.max_accel * (1.0 - (v / v0).powi(4));
    let mut accel = free;
    let lead = lead_id(view).and_then(|id| view.objects.iter().find(|o| o.id == id));
    if let Some(lead) = lead {
        let gap = lead.pose.x - (view.ego_extent[0] + lead.extent[0]) / 2.0;
        if gap <= 0.05 {
            accel = -params.max_decel;
        } else {
            let lead_speed = lead.speed * lead.pose.heading.cos();
            let dv = v - lead_speed;
            let s_star = (params.min_gap
                + v * params.time_headway
                + v * dv / (2.0 * (params.max_accel * params.comfort_decel).sqrt()))
            .max(params.min_gap);
            accel = params.max_accel * (1.0 - (v / v0).powi(4) - (s_star / gap).powi(2));
        }
    }

    // Signals governing the believed lane or its route successor. The stop
    // decision reads the *perceived* phase and phase age.
    let mut stop_for_signal = false;
    let believed = view.ego_lane.as_deref().unwrap_or("");
    let next_on_route = route.next_after(believed);
    for sig in &view.signals {
        let governs = sig.lane_ids.iter().any(|l| {
            l == believed || Some(l.as_str()) == next_on_route
        });
        if !governs {
            continue;
        }
        let dist_to_line = sig.stop_point.x - view.ego_extent[0] / 2.0;
        if dist_to_line < -1.0 {
            continue;
        }
        let must_stop = match sig.phase {
            SignalPhase::Red => true,
            SignalPhase::Yellow => {
                // Stop only if a comfortable stop still fits before the line.
                v * v / (2.0 * params.comfort_decel) <= (dist_to_line - params.signal_margin).max(0.0)
            }
            SignalPhase::Green => false,
        };
        if must_stop {
            let remaining = dist_to_line - params.signal_margin;
            let a_stop = if remaining <= 0.2 {
                // Brake any residual speed away entirely, otherwise the
                // vehicle creeps across the line over a long red.
                if v > 0.0 {
                    -params.max_decel
                } else {
                    0.0
                }
            } else {
                -(v * v) / (2.0 * remaining)
            };
            if a_stop < accel {
                accel = a_stop;
                stop_for_signal = true;
            } else if v < 0.05 && dist_to_line < 10.0 {
                // Already stopped and holding for the light.
                stop_for_signal = true;
                accel = accel.min(0.0);
            }
        }
    }

    // Lane change proposal when the lead blocks progress and a neighbouring
    // lane has room. Left is preferred.
    let mut lane_change = LaneChange::Keep;
    if let Some(lead) = lead {
        let gap = lead.pose.x - (view.ego_extent[0] + lead.extent[0]) / 2.0;
        // The headway term alone deadlocks behind a parked lead: braking
        // keeps the gap above the shrinking threshold all the way to a
        // standstill. The fixed floor lets the ego commit while it still
        // has the speed to swing out.
        let near = gap < (v * params.time_headway * 0.8).max(params.min_gap + 8.0);
        let blocked = near && lead.speed * lead.pose.heading.cos() < 0.8 * params.desired_speed;
        if blocked && !stop_for_signal {
            let mut candidates: Vec<(f64, &str)> = Vec::new();
            for (id, cand) in &view.lanes {
                if Some(id.as_str()) == view.ego_lane.as_deref() {
                    continue;
                }
                let cl = cand.polyline();
                let p = cl.project(Vec2::ZERO);
                let side = -p.lateral;
                let aligned = cl.tangent_at(p.s).x > 0.8;
                if aligned && (1.5..=6.0).contains(&side.abs()) && gap_ok(view, cand, params) {
                    candidates.push((side, id));
                }
            }
            // Prefer the left (positive side), then nearer lanes.
            candidates.sort_by(|a, b| {
                b.0.signum()
                    .partial_cmp(&a.0.signum())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.0.abs().partial_cmp(&b.0.abs()).unwrap_or(std::cmp::Ordering::Equal))
            });
            if let Some(&(side, _)) = candidates.first() {
                lane_change = if side > 0.0 { LaneChange::Left } else { LaneChange::Right };
            }
        }
    }

    DrivingDecision {
        accel: accel.clamp(-params.max_decel, params.max_accel),
        lateral_offset: proj.lateral,
        heading_correction,
        lane_change,
        stop_for_signal,
    }
}

/// Gap acceptance in a candidate lane: enough clear road ahead and behind.
fn gap_ok(view: &BevView, lane: &crate::scene::LaneGeometry, params: &DclParams) -> bool {
    let cl = lane.polyline();
    let mut front = f64::INFINITY;
    let mut rear = f64::INFINITY;
    for o in &view.objects {
        let proj = cl.project(o.pose.position());
        if proj.lateral.abs() > lane.width / 2.0 + 0.3 {
            continue;
        }
        if o.pose.x >= 0.0 {
            front = front.min(o.pose.x);
        } else {
            rear = rear.min(-o.pose.x);
        }
    }
    let need_front = (params.min_gap + view.ego_speed * params.time_headway * 0.6).max(8.0);
    front > need_front && rear > 8.0
}
