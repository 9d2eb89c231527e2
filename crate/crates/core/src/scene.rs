//! Objective world state and per-agent bird's-eye views.
//!
//! The [`SceneGraph`] is the single ground truth: every object pose, lane and
//! signal in world coordinates. Agents never read it directly. Each step an
//! agent receives a [`BevView`], a clipped ego-frame copy of the scene, and
//! the style machinery is free to distort that copy; the scene graph itself
//! is only mutated by the integrator.

use crate::geometry::{normalize_angle, Polyline, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unknown agent '{0}' in scene")]
    UnknownAgent(String),
    #[error("duplicate object id '{0}'")]
    DuplicateObject(String),
    #[error("object '{0}' has non-finite pose")]
    NonFinitePose(String),
}

/// World-frame pose. Heading is radians, x-axis = 0, counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Vehicle,
    Pedestrian,
    Static,
}

/// One physical object: a controlled vehicle, a scripted actor or a static
/// obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: String,
    pub kind: ObjectKind,
    pub pose: Pose,
    /// Forward speed along the heading, m/s. Never negative.
    pub speed: f64,
    /// Length and width of the bounding box, meters.
    pub extent: [f64; 2],
    /// Lane the object is currently associated with, if any.
    pub lane_id: Option<String>,
}

impl ObjectState {
    pub fn obb(&self) -> crate::geometry::Obb {
        crate::geometry::Obb {
            center: self.pose.position(),
            half_len: self.extent[0] / 2.0,
            half_wid: self.extent[1] / 2.0,
            heading: self.pose.heading,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPhase {
    Green,
    Yellow,
    Red,
}

impl SignalPhase {
    /// Next phase in the fixed green -> yellow -> red cycle.
    pub fn next_in_cycle(self) -> SignalPhase {
        match self {
            SignalPhase::Green => SignalPhase::Yellow,
            SignalPhase::Yellow => SignalPhase::Red,
            SignalPhase::Red => SignalPhase::Green,
        }
    }
}

/// Traffic signal state as perceivable by agents. `time_in_state` is how
/// long the signal has shown the current phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub id: String,
    pub phase: SignalPhase,
    pub time_in_state: f64,
    /// Stop line position on the controlled lane.
    pub stop_point: Vec2,
    /// Lanes governed by this signal.
    pub lane_ids: Vec<String>,
}

/// Lane geometry as carried inside views and the scene graph. `centerline`
/// is world-frame in the scene graph and ego-frame inside a [`BevView`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub id: String,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    /// Arc length of `centerline[0]` in the full lane parametrisation.
    /// Zero in the scene graph; views carry clipped geometry.
    #[serde(default)]
    pub s_start: f64,
    #[serde(default)]
    pub successors: Vec<String>,
}

impl LaneGeometry {
    pub fn polyline(&self) -> Polyline {
        Polyline::new(self.centerline.clone())
    }
}

/// The objective, ground-truth world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub step_index: u64,
    pub sim_time: f64,
    pub objects: Vec<ObjectState>,
    pub lanes: BTreeMap<String, LaneGeometry>,
    pub signals: Vec<SignalState>,
}

impl SceneGraph {
    pub fn object(&self, id: &str) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: &str) -> Option<&mut ObjectState> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    /// Validate structural invariants: unique ids, finite poses.
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.id.clone()) {
                return Err(SceneError::DuplicateObject(o.id.clone()));
            }
            if !o.pose.is_finite() || !o.speed.is_finite() {
                return Err(SceneError::NonFinitePose(o.id.clone()));
            }
        }
        Ok(())
    }
}

/// Where a view came from. Views handed to the controller after modulation
/// are marked `Subjective`; freshly extracted ones are `Objective`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewProvenance {
    Objective,
    Subjective,
}

/// Ego-frame snapshot of everything an agent can perceive this step.
///
/// Object poses, lane centerlines and signal stop points are expressed in
/// the ego frame: origin at the ego center, x forward along the ego heading,
/// y to the left. The ego object itself is not included in `objects`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevView {
    pub ego_id: String,
    pub step_index: u64,
    pub sim_time: f64,
    /// World pose of the ego at extraction time, kept so consumers can map
    /// back to world coordinates.
    pub ego_pose: Pose,
    pub ego_speed: f64,
    pub ego_extent: [f64; 2],
    pub ego_lane: Option<String>,
    pub radius: f64,
    pub objects: Vec<ObjectState>,
    pub lanes: BTreeMap<String, LaneGeometry>,
    pub signals: Vec<SignalState>,
    pub provenance: ViewProvenance,
}

/// World -> ego frame for a point.
pub fn world_to_ego(ego: &Pose, p: Vec2) -> Vec2 {
    (p - ego.position()).rotated(-ego.heading)
}

/// Ego -> world frame for a point.
pub fn ego_to_world(ego: &Pose, p: Vec2) -> Vec2 {
    p.rotated(ego.heading) + ego.position()
}

/// Extract the ego-frame view for `agent_id`, keeping objects whose centers
/// lie within `radius` of the ego, plus the lane geometry and signals that
/// fall inside the same disc. Lane centerlines are clipped to an arc window
/// around the ego so views stay small on long roads; `s_start` preserves the
/// original arc parametrisation for phase-coherent distortions.
pub fn extract_bev(scene: &SceneGraph, agent_id: &str, radius: f64) -> Result<BevView, SceneError> {
    let ego = scene
        .object(agent_id)
        .ok_or_else(|| SceneError::UnknownAgent(agent_id.to_string()))?;
    let ego_pos = ego.pose.position();

    let mut objects = Vec::new();
    for o in &scene.objects {
        if o.id == agent_id {
            continue;
        }
        if o.pose.position().dist(ego_pos) <= radius {
            let mut rel = o.clone();
            let p = world_to_ego(&ego.pose, o.pose.position());
            rel.pose = Pose {
                x: p.x,
                y: p.y,
                heading: normalize_angle(o.pose.heading - ego.pose.heading),
            };
            objects.push(rel);
        }
    }

    let mut lanes = BTreeMap::new();
    for (id, lane) in &scene.lanes {
        let line = lane.polyline();
        let proj = line.project(ego_pos);
        if proj.distance > radius + lane.width {
            continue;
        }
        let (pts, s0) = line.clip_arc(proj.s - radius, proj.s + radius);
        let centerline = pts
            .into_iter()
            .map(|p| world_to_ego(&ego.pose, p))
            .collect();
        lanes.insert(
            id.clone(),
            LaneGeometry {
                id: id.clone(),
                centerline,
                width: lane.width,
                s_start: s0,
                successors: lane.successors.clone(),
            },
        );
    }

    let mut signals = Vec::new();
    for s in &scene.signals {
        if s.stop_point.dist(ego_pos) <= radius {
            let mut rel = s.clone();
            rel.stop_point = world_to_ego(&ego.pose, s.stop_point);
            signals.push(rel);
        }
    }

    Ok(BevView {
        ego_id: agent_id.to_string(),
        step_index: scene.step_index,
        sim_time: scene.sim_time,
        ego_pose: ego.pose,
        ego_speed: ego.speed,
        ego_extent: ego.extent,
        ego_lane: ego.lane_id.clone(),
        radius,
        objects,
        lanes,
        signals,
        provenance: ViewProvenance::Objective,
    })
}

/// True when `o` drives roughly the same direction as the ego and sits in
/// the ego's lane corridor. Uses the perceived ego lane when available and
/// falls back to a plain ego-frame band otherwise.
pub fn in_ego_corridor(view: &BevView, o: &ObjectState) -> bool {
    if o.pose.heading.abs() > std::f64::consts::FRAC_PI_2 {
        return false;
    }
    if let Some(lane) = view.ego_lane.as_ref().and_then(|id| view.lanes.get(id)) {
        let proj = lane.polyline().project(o.pose.position());
        proj.lateral.abs() <= lane.width / 2.0 + 0.3
    } else {
        o.pose.y.abs() <= 2.0
    }
}

/// Id of the nearest corridor object ahead of the ego, if any.
pub fn lead_id(view: &BevView) -> Option<&str> {
    let mut best: Option<(&str, f64)> = None;
    for o in &view.objects {
        if o.pose.x > 0.3 && in_ego_corridor(view, o) {
            match best {
                Some((_, d)) if d <= o.pose.x => {}
                _ => best = Some((&o.id, o.pose.x)),
            }
        }
    }
    best.map(|(id, _)| id)
}

/// Objects in a view ranked by relevance: ascending distance from the ego,
/// ties broken by lexicographic id.
pub fn identify_objects(view: &BevView) -> Vec<&ObjectState> {
    let mut refs: Vec<&ObjectState> = view.objects.iter().collect();
    refs.sort_by(|a, b| {
        let da = a.pose.position().norm();
        let db = b.pose.position().norm();
        da.partial_cmp(&db)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    refs
}

/// One controller output: longitudinal acceleration plus a lateral target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingDecision {
    /// Longitudinal acceleration command, m/s^2, clamped to [-8, 4].
    pub accel: f64,
    /// Lateral offset from the perceived lane center, m (diagnostic).
    pub lateral_offset: f64,
    /// Desired heading correction, radians. The integrator rate-limits it.
    pub heading_correction: f64,
    pub lane_change: LaneChange,
    pub stop_for_signal: bool,
}

impl Default for DrivingDecision {
    fn default() -> Self {
        DrivingDecision {
            accel: 0.0,
            lateral_offset: 0.0,
            heading_correction: 0.0,
            lane_change: LaneChange::Keep,
            stop_for_signal: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneChange {
    Keep,
    Left,
    Right,
}

pub const ACCEL_MIN: f64 = -8.0;
pub const ACCEL_MAX: f64 = 4.0;
/// Maximum steering angle of the kinematic bicycle, radians.
pub const MAX_STEER: f64 = 0.5;
/// Wheelbase of the kinematic bicycle, meters.
pub const WHEELBASE: f64 = 2.8;
/// Steering time constant: the fraction of a requested heading correction
/// applied per second (before the bicycle yaw-rate limit).
pub const STEER_GAIN: f64 = 2.5;

/// Advance all objects one step of `dt` seconds.
///
/// Controlled vehicles integrate a kinematic bicycle: speed first
/// (semi-implicit, clamped at zero so nobody reverses), then heading with a
/// yaw rate bounded by `speed * tan(MAX_STEER) / WHEELBASE`, then position
/// along the new heading. Objects listed in `scripted` are snapped to their
/// precomputed poses; everything else keeps its state. Signals are not
/// touched here; the caller owns their schedule.
pub fn advance_kinematics(
    scene: &mut SceneGraph,
    decisions: &BTreeMap<String, DrivingDecision>,
    scripted: &BTreeMap<String, (Pose, f64)>,
    dt: f64,
) {
    for obj in &mut scene.objects {
        if let Some(d) = decisions.get(&obj.id) {
            let accel = d.accel.clamp(ACCEL_MIN, ACCEL_MAX);
            let new_speed = (obj.speed + accel * dt).max(0.0);
            let yaw_limit = new_speed * MAX_STEER.tan() / WHEELBASE;
            let wanted = d.heading_correction * STEER_GAIN;
            let yaw_rate = wanted.clamp(-yaw_limit, yaw_limit);
            let heading = normalize_angle(obj.pose.heading + yaw_rate * dt);
            let dir = Vec2::from_heading(heading);
            obj.pose = Pose {
                x: obj.pose.x + dir.x * new_speed * dt,
                y: obj.pose.y + dir.y * new_speed * dt,
                heading,
            };
            obj.speed = new_speed;
        } else if let Some((pose, speed)) = scripted.get(&obj.id) {
            obj.pose = *pose;
            obj.speed = *speed;
        }
    }
    scene.step_index += 1;
    // Recompute rather than accumulate so time never drifts from the index.
    scene.sim_time = scene.step_index as f64 * dt;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_scene() -> SceneGraph {
        let mut lanes = BTreeMap::new();
        lanes.insert(
            "lane_a".to_string(),
            LaneGeometry {
                id: "lane_a".to_string(),
                centerline: vec![Vec2::new(-100.0, 0.0), Vec2::new(300.0, 0.0)],
                width: 3.5,
                s_start: 0.0,
                successors: vec![],
            },
        );
        SceneGraph {
            step_index: 0,
            sim_time: 0.0,
            objects: vec![
                ObjectState {
                    id: "ego".to_string(),
                    kind: ObjectKind::Vehicle,
                    pose: Pose { x: 0.0, y: 0.0, heading: std::f64::consts::FRAC_PI_2 },
                    speed: 5.0,
                    extent: [4.5, 2.0],
                    lane_id: Some("lane_a".to_string()),
                },
                ObjectState {
                    id: "other".to_string(),
                    kind: ObjectKind::Vehicle,
                    pose: Pose { x: 0.0, y: 10.0, heading: std::f64::consts::FRAC_PI_2 },
                    speed: 3.0,
                    extent: [4.5, 2.0],
                    lane_id: Some("lane_a".to_string()),
                },
                ObjectState {
                    id: "far".to_string(),
                    kind: ObjectKind::Vehicle,
                    pose: Pose { x: 500.0, y: 0.0, heading: 0.0 },
                    speed: 0.0,
                    extent: [4.5, 2.0],
                    lane_id: None,
                },
            ],
            lanes,
            signals: vec![],
        }
    }

    #[test]
    fn extract_rotates_into_ego_frame() {
        // Ego faces +y; an object 10 m ahead of it along +y must land on the
        // ego-frame +x axis.
        let scene = test_scene();
        let view = extract_bev(&scene, "ego", 50.0).unwrap();
        let other = view.objects.iter().find(|o| o.id == "other").unwrap();
        assert!((other.pose.x - 10.0).abs() < 1e-9);
        assert!(other.pose.y.abs() < 1e-9);
        assert!(other.pose.heading.abs() < 1e-9);
        assert!(view.objects.iter().all(|o| o.id != "far"));
        assert!(view.objects.iter().all(|o| o.id != "ego"));
    }

    #[test]
    fn extract_unknown_agent_is_an_error() {
        let scene = test_scene();
        assert!(matches!(
            extract_bev(&scene, "nobody", 50.0),
            Err(SceneError::UnknownAgent(_))
        ));
    }

    #[test]
    fn identify_orders_by_distance_then_id() {
        let mut scene = test_scene();
        scene.objects.push(ObjectState {
            id: "aaa".to_string(),
            kind: ObjectKind::Vehicle,
            pose: Pose { x: 0.0, y: 10.0, heading: 0.0 },
            speed: 0.0,
            extent: [4.5, 2.0],
            lane_id: None,
        });
        let view = extract_bev(&scene, "ego", 50.0).unwrap();
        let ids: Vec<&str> = identify_objects(&view).iter().map(|o| o.id.as_str()).collect();
        // "aaa" and "other" are both exactly 10 m away; the id breaks the tie.
        assert_eq!(ids, vec!["aaa", "other"]);
    }

    #[test]
    fn semi_implicit_euler_displacement() {
        let mut scene = test_scene();
        scene.objects[0].pose.heading = 0.0;
        scene.objects[0].speed = 10.0;
        let mut decisions = BTreeMap::new();
        decisions.insert(
            "ego".to_string(),
            DrivingDecision {
                accel: 2.0,
                lateral_offset: 0.0,
                heading_correction: 0.0,
                lane_change: LaneChange::Keep,
                stop_for_signal: false,
            },
        );
        advance_kinematics(&mut scene, &decisions, &BTreeMap::new(), 0.05);
        let ego = scene.object("ego").unwrap();
        // v' = 10 + 2 * 0.05 = 10.1; displacement = v' * dt = 0.505.
        assert!((ego.speed - 10.1).abs() < 1e-12);
        assert!((ego.pose.x - 0.505).abs() < 1e-12);
        assert_eq!(scene.step_index, 1);
        assert!((scene.sim_time - 0.05).abs() < 1e-15);
    }

    #[test]
    fn speed_clamps_at_zero() {
        let mut scene = test_scene();
        scene.objects[0].pose.heading = 0.0;
        scene.objects[0].speed = 0.3;
        let mut decisions = BTreeMap::new();
        decisions.insert(
            "ego".to_string(),
            DrivingDecision {
                accel: -8.0,
                lateral_offset: 0.0,
                heading_correction: 0.0,
                lane_change: LaneChange::Keep,
                stop_for_signal: true,
            },
        );
        let x_before = scene.objects[0].pose.x;
        advance_kinematics(&mut scene, &decisions, &BTreeMap::new(), 0.1);
        let ego = scene.object("ego").unwrap();
        assert_eq!(ego.speed, 0.0);
        assert_eq!(ego.pose.x, x_before);
    }

    proptest! {
        #[test]
        fn frame_round_trip(x in -200.0f64..200.0, y in -200.0f64..200.0,
                            ex in -50.0f64..50.0, ey in -50.0f64..50.0,
                            h in -3.0f64..3.0) {
            let ego = Pose { x: ex, y: ey, heading: h };
            let p = Vec2::new(x, y);
            let back = ego_to_world(&ego, world_to_ego(&ego, p));
            prop_assert!(p.dist(back) < 1e-9);
        }

        #[test]
        fn speed_never_negative(v0 in 0.0f64..30.0, a in -8.0f64..4.0) {
            let mut scene = test_scene();
            scene.objects[0].speed = v0;
            let mut decisions = BTreeMap::new();
            decisions.insert("ego".to_string(), DrivingDecision {
                accel: a,
                lateral_offset: 0.0,
                heading_correction: 0.0,
                lane_change: LaneChange::Keep,
                stop_for_signal: false,
            });
            advance_kinematics(&mut scene, &decisions, &BTreeMap::new(), 0.05);
            prop_assert!(scene.object("ego").unwrap().speed >= 0.0);
        }
    }
}
