//! Analysis of finished runs: driving scores, distribution distances,
//! behavioural feature extraction, a small k-NN classifier and a raster
//! export for eyeballing scenes.

use crate::geometry::{normalize_angle, Polyline, Vec2};
use crate::map::{route_progress, Route};
use crate::runtime::log::{EventKind, TrajectoryLog};
use crate::scene::{Pose, SceneGraph};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Multiplicative penalty per infraction, applied once per event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Penalties {
    pub collision_pedestrian: f64,
    pub collision_vehicle: f64,
    pub collision_static: f64,
    pub red_light: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties {
            collision_pedestrian: 0.50,
            collision_vehicle: 0.60,
            collision_static: 0.65,
            red_light: 0.70,
        }
    }
}

impl Penalties {
    fn coefficient(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::CollisionPedestrian => self.collision_pedestrian,
            EventKind::CollisionVehicle => self.collision_vehicle,
            EventKind::CollisionStatic => self.collision_static,
            EventKind::RedLightViolation => self.red_light,
            // Deviation truncates route completion instead of multiplying.
            EventKind::RouteDeviation => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// Route completion in percent, truncated at the first deviation.
    pub route_completion: f64,
    pub counts: BTreeMap<EventKind, u64>,
    /// Product of penalty coefficients over all events.
    pub penalty_product: f64,
    /// `route_completion * penalty_product`.
    pub score: f64,
}

/// Combine completion and infraction counts into a score. Kept separate
/// from log handling so it can be checked by hand.
pub fn score_from_parts(
    route_completion: f64,
    counts: &BTreeMap<EventKind, u64>,
    penalties: &Penalties,
) -> ScoreBreakdown {
    let mut penalty_product = 1.0;
    for (kind, n) in counts {
        penalty_product *= penalties.coefficient(*kind).powi(*n as i32);
    }
    ScoreBreakdown {
        route_completion,
        counts: counts.clone(),
        penalty_product,
        score: route_completion * penalty_product,
    }
}

/// Score one agent of a finished run.
pub fn driving_score(log: &TrajectoryLog, agent_id: &str, penalties: &Penalties) -> ScoreBreakdown {
    let cfg = &log.header.run_config;
    let route_line = cfg
        .scenario
        .agents
        .iter()
        .find(|a| a.id == agent_id)
        .map(|a| {
            Route {
                lane_ids: a.route.clone(),
            }
            .polyline(&cfg.road_map)
        });

    let mut counts: BTreeMap<EventKind, u64> = BTreeMap::new();
    let mut deviation_step: Option<u64> = None;
    for e in log.events_involving(agent_id) {
        *counts.entry(e.kind).or_insert(0) += 1;
        if e.kind == EventKind::RouteDeviation && e.agent_id == agent_id {
            deviation_step = Some(deviation_step.map_or(e.step, |s| s.min(e.step)));
        }
    }

    let mut rc = 0.0f64;
    if let Some(line) = &route_line {
        for step in &log.steps {
            if deviation_step.is_some_and(|d| step.step > d) {
                break;
            }
            if let Some(rec) = step.agents.get(agent_id) {
                let p = route_progress(line, Vec2::new(rec.pose.x, rec.pose.y));
                rc = rc.max(p * 100.0);
            }
        }
    }
    score_from_parts(rc, &counts, penalties)
}

/// Exact 1-D Wasserstein-1 distance between two empirical distributions,
/// computed by integrating |F_a - F_b| over the merged support.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));

    let (wa, wb) = (1.0 / xs.len() as f64, 1.0 / ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut prev = xs[0].min(ys[0]);
    let mut total = 0.0;
    while i < xs.len() || j < ys.len() {
        let x = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        total += (fa - fb).abs() * (x - prev);
        while i < xs.len() && xs[i] <= x {
            fa += wa;
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            fb += wb;
            j += 1;
        }
        prev = x;
    }
    total
}

/// Seven summary statistics of a trajectory window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_speed: f64,
    pub std_speed: f64,
    pub mean_abs_accel: f64,
    pub max_abs_accel: f64,
    /// Mean |heading delta| per second, rad/s.
    pub heading_change_rate: f64,
    /// Mean time headway to the nearest leading agent, s, capped.
    pub mean_time_headway: f64,
    /// RMS distance from the route centerline, m.
    pub lateral_offset_rms: f64,
}

pub const FEATURE_DIM: usize = 7;
/// Headway assigned when no lead vehicle is present, s.
pub const HEADWAY_CAP: f64 = 10.0;

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.mean_speed,
            self.std_speed,
            self.mean_abs_accel,
            self.max_abs_accel,
            self.heading_change_rate,
            self.mean_time_headway,
            self.lateral_offset_rms,
        ]
    }
}

/// One sample per step used during feature extraction.
struct TrackPoint {
    pose: Pose,
    speed: f64,
    headway: f64,
}

fn agent_track_points(log: &TrajectoryLog, agent_id: &str) -> Vec<TrackPoint> {
    let cfg = &log.header.run_config;
    let extent_of: BTreeMap<&str, [f64; 2]> = cfg
        .scenario
        .agents
        .iter()
        .map(|a| (a.id.as_str(), a.extent))
        .collect();
    let ego_half = extent_of.get(agent_id).map_or(2.25, |e| e[0] / 2.0);

    let mut out = Vec::new();
    for step in &log.steps {
        let Some(rec) = step.agents.get(agent_id) else {
            continue;
        };
        let ego = Vec2::new(rec.pose.x, rec.pose.y);
        let fwd = Vec2::from_heading(rec.pose.heading);
        let mut headway = HEADWAY_CAP;
        for (oid, other) in &step.agents {
            if oid == agent_id {
                continue;
            }
            let rel = Vec2::new(other.pose.x - ego.x, other.pose.y - ego.y);
            let ahead = rel.dot(fwd);
            let lateral = fwd.cross(rel);
            if ahead > 0.3 && lateral.abs() <= 2.5 {
                let other_half = extent_of.get(oid.as_str()).map_or(2.25, |e| e[0] / 2.0);
                let gap = (ahead - ego_half - other_half).max(0.0);
                let h = gap / rec.speed.max(0.1);
                headway = headway.min(h.min(HEADWAY_CAP));
            }
        }
        out.push(TrackPoint {
            pose: rec.pose,
            speed: rec.speed,
            headway,
        });
    }
    out
}

fn window_features(points: &[TrackPoint], route_line: &Polyline, dt: f64) -> FeatureVector {
    let n = points.len().max(1) as f64;
    let mean_speed = points.iter().map(|p| p.speed).sum::<f64>() / n;
    let var = points
        .iter()
        .map(|p| (p.speed - mean_speed).powi(2))
        .sum::<f64>()
        / n;
    let mut abs_accels = Vec::new();
    let mut heading_rates = Vec::new();
    for w in points.windows(2) {
        abs_accels.push(((w[1].speed - w[0].speed) / dt).abs());
        heading_rates.push(normalize_angle(w[1].pose.heading - w[0].pose.heading).abs() / dt);
    }
    let mean_abs_accel = if abs_accels.is_empty() {
        0.0
    } else {
        abs_accels.iter().sum::<f64>() / abs_accels.len() as f64
    };
    let max_abs_accel = abs_accels.iter().fold(0.0f64, |m, &a| m.max(a));
    let heading_change_rate = if heading_rates.is_empty() {
        0.0
    } else {
        heading_rates.iter().sum::<f64>() / heading_rates.len() as f64
    };
    let mean_time_headway = points.iter().map(|p| p.headway).sum::<f64>() / n;
    let lateral_offset_rms = (points
        .iter()
        .map(|p| {
            route_line
                .project(Vec2::new(p.pose.x, p.pose.y))
                .lateral
                .powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt();
    FeatureVector {
        mean_speed,
        std_speed: var.sqrt(),
        mean_abs_accel,
        max_abs_accel,
        heading_change_rate,
        mean_time_headway,
        lateral_offset_rms,
    }
}

/// Sliding-window feature vectors for one agent. Windows shorter than
/// `window` at the tail are dropped.
pub fn feature_windows(
    log: &TrajectoryLog,
    agent_id: &str,
    window: usize,
    stride: usize,
) -> Vec<FeatureVector> {
    assert!(window >= 2 && stride >= 1, "degenerate window parameters");
    let cfg = &log.header.run_config;
    let Some(agent_cfg) = cfg.scenario.agents.iter().find(|a| a.id == agent_id) else {
        return vec![];
    };
    let route_line = Route {
        lane_ids: agent_cfg.route.clone(),
    }
    .polyline(&cfg.road_map);
    let points = agent_track_points(log, agent_id);
    let dt = log.dt();
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= points.len() {
        out.push(window_features(&points[start..start + window], &route_line, dt));
        start += stride;
    }
    out
}

/// k-nearest-neighbour classifier over feature vectors with per-dimension
/// z-scoring fitted on the training set.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    k: usize,
    mean: [f64; FEATURE_DIM],
    std: [f64; FEATURE_DIM],
    points: Vec<([f64; FEATURE_DIM], String)>,
}

impl KnnClassifier {
    pub fn fit(k: usize, train: &[(FeatureVector, String)]) -> KnnClassifier {
        assert!(k >= 1 && !train.is_empty(), "empty training set");
        let mut mean = [0.0; FEATURE_DIM];
        for (f, _) in train {
            for (m, v) in mean.iter_mut().zip(f.to_array()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= train.len() as f64;
        }
        let mut std = [0.0; FEATURE_DIM];
        for (f, _) in train {
            for ((s, m), v) in std.iter_mut().zip(mean).zip(f.to_array()) {
                *s += (v - m).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / train.len() as f64).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        let points = train
            .iter()
            .map(|(f, label)| {
                let mut z = f.to_array();
                for ((zi, m), s) in z.iter_mut().zip(mean).zip(std) {
                    *zi = (*zi - m) / s;
                }
                (z, label.clone())
            })
            .collect();
        KnnClassifier {
            k,
            mean,
            std,
            points,
        }
    }

    pub fn predict(&self, f: &FeatureVector) -> String {
        let mut z = f.to_array();
        for ((zi, m), s) in z.iter_mut().zip(self.mean).zip(self.std) {
            *zi = (*zi - m) / s;
        }
        let mut scored: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, (p, _))| {
                let d: f64 = p.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
                (d, i)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for (d, i) in scored.iter().take(self.k) {
            let e = votes.entry(self.points[*i].1.as_str()).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += d;
        }
        // Most votes wins; ties go to the smaller summed distance, then to
        // lexical order so prediction is deterministic.
        votes
            .into_iter()
            .min_by(|a, b| {
                b.1 .0
                    .cmp(&a.1 .0)
                    .then(a.1 .1.partial_cmp(&b.1 .1).unwrap_or(std::cmp::Ordering::Equal))
                    .then(a.0.cmp(b.0))
            })
            .map(|(label, _)| label.to_string())
            .expect("k >= 1 guarantees at least one vote")
    }
}

/// Macro-averaged F1 over the union of labels in truth and predictions.
pub fn macro_f1(truth: &[String], predicted: &[String]) -> f64 {
    assert_eq!(truth.len(), predicted.len(), "length mismatch");
    assert!(!truth.is_empty(), "empty evaluation set");
    let labels: std::collections::BTreeSet<&String> = truth.iter().chain(predicted).collect();
    let mut f1_sum = 0.0;
    for label in &labels {
        let tp = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| t == label && p == label)
            .count() as f64;
        let fp = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| t != label && p == label)
            .count() as f64;
        let fn_ = truth
            .iter()
            .zip(predicted)
            .filter(|(t, p)| t == label && p != label)
            .count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
    }
    f1_sum / labels.len() as f64
}

/// Grayscale occupancy image of a scene.
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    /// Binary PGM (P5).
    pub fn write_pgm<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }
}

const SHADE_LANE: u8 = 70;
const SHADE_SIGNAL: u8 = 160;
const SHADE_OBJECT: u8 = 255;

/// Render lanes, signals and objects to a top-down grayscale raster. The
/// frame is chosen to cover all lane geometry plus a margin.
pub fn rasterize_scene(scene: &SceneGraph, pixels_per_meter: f64) -> Raster {
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: Vec2| {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    };
    for lane in scene.lanes.values() {
        for &p in &lane.centerline {
            grow(p);
        }
    }
    for o in &scene.objects {
        grow(Vec2::new(o.pose.x, o.pose.y));
    }
    if !min.x.is_finite() {
        min = Vec2::new(0.0, 0.0);
        max = Vec2::new(1.0, 1.0);
    }
    let margin = 10.0;
    min = Vec2::new(min.x - margin, min.y - margin);
    max = Vec2::new(max.x + margin, max.y + margin);
    let width = (((max.x - min.x) * pixels_per_meter).ceil() as usize).clamp(1, 4096);
    let height = (((max.y - min.y) * pixels_per_meter).ceil() as usize).clamp(1, 4096);
    let mut pixels = vec![0u8; width * height];

    // y grows upward in world space, downward in image space.
    let to_px = |p: Vec2| -> (f64, f64) {
        (
            (p.x - min.x) * pixels_per_meter,
            (max.y - p.y) * pixels_per_meter,
        )
    };
    let mut put = |x: i64, y: i64, shade: u8| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let idx = y as usize * width + x as usize;
            if pixels[idx] < shade {
                pixels[idx] = shade;
            }
        }
    };

    for lane in scene.lanes.values() {
        if lane.centerline.len() < 2 {
            continue;
        }
        let line = Polyline::new(lane.centerline.clone());
        let step = 0.5 / pixels_per_meter.max(0.1);
        let mut s = 0.0;
        let half = lane.width / 2.0;
        while s <= line.length() {
            let c = line.point_at(s);
            let t = line.tangent_at(s);
            let nrm = Vec2::new(-t.y, t.x);
            let mut o = -half;
            while o <= half {
                let p = Vec2::new(c.x + nrm.x * o, c.y + nrm.y * o);
                let (px, py) = to_px(p);
                put(px as i64, py as i64, SHADE_LANE);
                o += step;
            }
            s += step;
        }
    }
    for sig in &scene.signals {
        let (px, py) = to_px(sig.stop_point);
        for d in -3i64..=3 {
            put(px as i64 + d, py as i64, SHADE_SIGNAL);
            put(px as i64, py as i64 + d, SHADE_SIGNAL);
        }
    }
    for o in &scene.objects {
        let obb = o.obb();
        let corners = obb.corners();
        let (min_c, max_c) = corners.iter().fold(
            (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), c| {
                (
                    Vec2::new(lo.x.min(c.x), lo.y.min(c.y)),
                    Vec2::new(hi.x.max(c.x), hi.y.max(c.y)),
                )
            },
        );
        let step = 1.0 / pixels_per_meter.max(0.1);
        let mut x = min_c.x;
        while x <= max_c.x {
            let mut y = min_c.y;
            while y <= max_c.y {
                if obb.contains(Vec2::new(x, y)) {
                    let (px, py) = to_px(Vec2::new(x, y));
                    put(px as i64, py as i64, SHADE_OBJECT);
                }
                y += step * 0.5;
            }
            x += step * 0.5;
        }
    }
    Raster {
        width,
        height,
        pixels,
    }
}
