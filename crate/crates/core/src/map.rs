//! Road network: lane centerlines, connectivity, signal schedules and
//! routes. Maps are plain JSON documents validated on load.

use crate::geometry::{Polyline, Projection, Vec2};
use crate::scene::{LaneGeometry, SignalPhase, SignalState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("lane '{0}' needs at least two centerline points")]
    DegenerateLane(String),
    #[error("lane '{0}' has non-positive width")]
    BadWidth(String),
    #[error("duplicate lane id '{0}'")]
    DuplicateLane(String),
    #[error("lane '{lane}' lists unknown successor '{successor}'")]
    UnknownSuccessor { lane: String, successor: String },
    #[error("lane '{lane}' does not connect to successor '{successor}' (gap {gap:.2} m)")]
    DisconnectedSuccessor {
        lane: String,
        successor: String,
        gap: f64,
    },
    #[error("signal '{signal}' references unknown lane '{lane}'")]
    SignalUnknownLane { signal: String, lane: String },
    #[error("signal '{0}' has a non-positive schedule period")]
    BadSchedule(String),
    #[error("route is empty")]
    EmptyRoute,
    #[error("route hops from '{from}' to '{to}' which is not a successor")]
    BrokenRoute { from: String, to: String },
    #[error("route references unknown lane '{0}'")]
    RouteUnknownLane(String),
}

/// Fixed-cycle signal timing. The cycle runs green -> yellow -> red and
/// repeats; `offset_s` shifts the whole schedule so corridors can be
/// staggered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSchedule {
    pub green_s: f64,
    pub yellow_s: f64,
    pub red_s: f64,
    #[serde(default)]
    pub offset_s: f64,
}

impl SignalSchedule {
    pub fn cycle(&self) -> f64 {
        self.green_s + self.yellow_s + self.red_s
    }

    /// Phase and time-in-phase at absolute simulation time `t`.
    pub fn phase_at(&self, t: f64) -> (SignalPhase, f64) {
        let tau = (t + self.offset_s).rem_euclid(self.cycle());
        if tau < self.green_s {
            (SignalPhase::Green, tau)
        } else if tau < self.green_s + self.yellow_s {
            (SignalPhase::Yellow, tau - self.green_s)
        } else {
            (SignalPhase::Red, tau - self.green_s - self.yellow_s)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSignal {
    pub id: String,
    pub lane_ids: Vec<String>,
    pub stop_point: Vec2,
    pub schedule: SignalSchedule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapLane {
    pub id: String,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    #[serde(default)]
    pub successors: Vec<String>,
}

/// A validated road network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoadMap {
    pub name: String,
    pub lanes: Vec<MapLane>,
    #[serde(default)]
    pub signals: Vec<MapSignal>,
}

impl RoadMap {
    pub fn from_json(json: &str) -> Result<RoadMap, MapError> {
        let map: RoadMap = serde_json::from_str(json)?;
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let mut ids = std::collections::BTreeSet::new();
        for lane in &self.lanes {
            if !ids.insert(lane.id.clone()) {
                return Err(MapError::DuplicateLane(lane.id.clone()));
            }
            if lane.centerline.len() < 2 {
                return Err(MapError::DegenerateLane(lane.id.clone()));
            }
            if lane.width <= 0.0 {
                return Err(MapError::BadWidth(lane.id.clone()));
            }
        }
        for lane in &self.lanes {
            let end = *lane.centerline.last().unwrap();
            for succ in &lane.successors {
                let Some(next) = self.lane(succ) else {
                    return Err(MapError::UnknownSuccessor {
                        lane: lane.id.clone(),
                        successor: succ.clone(),
                    });
                };
                let gap = end.dist(next.centerline[0]);
                if gap > 0.5 {
                    return Err(MapError::DisconnectedSuccessor {
                        lane: lane.id.clone(),
                        successor: succ.clone(),
                        gap,
                    });
                }
            }
        }
        for sig in &self.signals {
            for lane in &sig.lane_ids {
                if self.lane(lane).is_none() {
                    return Err(MapError::SignalUnknownLane {
                        signal: sig.id.clone(),
                        lane: lane.clone(),
                    });
                }
            }
            if sig.schedule.cycle() <= 0.0
                || sig.schedule.green_s < 0.0
                || sig.schedule.yellow_s < 0.0
                || sig.schedule.red_s < 0.0
            {
                return Err(MapError::BadSchedule(sig.id.clone()));
            }
        }
        Ok(())
    }

    pub fn lane(&self, id: &str) -> Option<&MapLane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    /// Signals whose stop line governs the given lane.
    pub fn signals_on<'a>(&'a self, lane_id: &'a str) -> impl Iterator<Item = &'a MapSignal> {
        self.signals
            .iter()
            .filter(move |s| s.lane_ids.iter().any(|l| l == lane_id))
    }

    /// World-frame lane geometry for seeding a scene graph.
    pub fn scene_lanes(&self) -> BTreeMap<String, LaneGeometry> {
        self.lanes
            .iter()
            .map(|l| {
                (
                    l.id.clone(),
                    LaneGeometry {
                        id: l.id.clone(),
                        centerline: l.centerline.clone(),
                        width: l.width,
                        s_start: 0.0,
                        successors: l.successors.clone(),
                    },
                )
            })
            .collect()
    }

    /// Signal states at absolute time `t`, ordered by id. Signals are a pure
    /// function of the schedule, which keeps replays trivial.
    pub fn signal_states_at(&self, t: f64) -> Vec<SignalState> {
        let mut out: Vec<SignalState> = self
            .signals
            .iter()
            .map(|s| {
                let (phase, tis) = s.schedule.phase_at(t);
                SignalState {
                    id: s.id.clone(),
                    phase,
                    time_in_state: tis,
                    stop_point: s.stop_point,
                    lane_ids: s.lane_ids.clone(),
                }
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Lane whose centerline is closest to `p`, if any comes within
    /// `max_dist`.
    pub fn nearest_lane(&self, p: Vec2, max_dist: f64) -> Option<(&MapLane, Projection)> {
        let mut best: Option<(&MapLane, Projection)> = None;
        for lane in &self.lanes {
            let proj = Polyline::new(lane.centerline.clone()).project(p);
            if proj.distance <= max_dist {
                match &best {
                    Some((_, b)) if b.distance <= proj.distance => {}
                    _ => best = Some((lane, proj)),
                }
            }
        }
        best
    }
}

/// An ordered lane sequence an agent intends to follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lane_ids: Vec<String>,
}

impl Route {
    pub fn validate(&self, map: &RoadMap) -> Result<(), MapError> {
        if self.lane_ids.is_empty() {
            return Err(MapError::EmptyRoute);
        }
        for id in &self.lane_ids {
            if map.lane(id).is_none() {
                return Err(MapError::RouteUnknownLane(id.clone()));
            }
        }
        for w in self.lane_ids.windows(2) {
            let from = map.lane(&w[0]).unwrap();
            if !from.successors.contains(&w[1]) {
                return Err(MapError::BrokenRoute {
                    from: w[0].clone(),
                    to: w[1].clone(),
                });
            }
        }
        Ok(())
    }

    /// Concatenated centerline of the whole route.
    pub fn polyline(&self, map: &RoadMap) -> Polyline {
        let mut pts: Vec<Vec2> = Vec::new();
        for id in &self.lane_ids {
            let lane = map.lane(id).expect("validated route");
            for &p in &lane.centerline {
                if pts.last().is_none_or(|q| q.dist(p) > 1e-9) {
                    pts.push(p);
                }
            }
        }
        Polyline::new(pts)
    }

    /// Index of `lane_id` on the route, if present.
    pub fn position_of(&self, lane_id: &str) -> Option<usize> {
        self.lane_ids.iter().position(|l| l == lane_id)
    }

    /// Next lane after `lane_id` on the route.
    pub fn next_after(&self, lane_id: &str) -> Option<&str> {
        self.position_of(lane_id)
            .and_then(|i| self.lane_ids.get(i + 1))
            .map(|s| s.as_str())
    }
}

/// Fraction of the route already covered by a point, in [0, 1]. Computed by
/// projecting onto the concatenated centerline.
pub fn route_progress(route_line: &Polyline, p: Vec2) -> f64 {
    let proj = route_line.project(p);
    (proj.s / route_line.length()).clamp(0.0, 1.0)
}
