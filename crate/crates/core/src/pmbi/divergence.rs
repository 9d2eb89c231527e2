//! Quantifying how far a modulated view sits from objective truth.
//!
//! The report is intentionally redundant: every modulation API moves at
//! least one of its fields, so a report of exact zeros means the two views
//! are behaviourally identical.

use crate::geometry::Polyline;
use crate::scene::BevView;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// RMS positional displacement over objects present in both views, m.
    pub position_rmse: f64,
    /// Mean absolute heading deviation over shared objects, rad.
    pub heading_mae: f64,
    /// Mean of |v' - v| / max(1, v) over shared objects.
    pub speed_mae_norm: f64,
    /// Mean absolute bounding-box scale deviation over shared objects.
    pub size_mae: f64,
    /// Objects visible objectively but absent subjectively.
    pub missing_objects: u32,
    /// Objects present subjectively with no objective counterpart.
    pub added_objects: u32,
    /// RMS centerline displacement over shared lanes, sampled along arc, m.
    pub lane_center_rmse: f64,
    /// Mean absolute lane width deviation over shared lanes, m.
    pub lane_width_mae: f64,
    /// Lanes visible objectively but absent subjectively.
    pub missing_lanes: u32,
    /// Signals whose perceived phase disagrees with truth (or went missing).
    pub signal_mismatches: u32,
    /// Mean absolute time-in-state deviation over shared signals, s.
    pub signal_time_mae: f64,
}

impl DivergenceReport {
    pub fn is_zero(&self) -> bool {
        self.position_rmse == 0.0
            && self.heading_mae == 0.0
            && self.speed_mae_norm == 0.0
            && self.size_mae == 0.0
            && self.missing_objects == 0
            && self.added_objects == 0
            && self.lane_center_rmse == 0.0
            && self.lane_width_mae == 0.0
            && self.missing_lanes == 0
            && self.signal_mismatches == 0
            && self.signal_time_mae == 0.0
    }
}

const LANE_SAMPLES: usize = 9;

/// Compare an objective view with its modulated counterpart.
pub fn perception_divergence(objective: &BevView, subjective: &BevView) -> DivergenceReport {
    let mut r = DivergenceReport::default();

    let mut pos_sq = 0.0;
    let mut shared = 0usize;
    for o in &objective.objects {
        match subjective.objects.iter().find(|s| s.id == o.id) {
            None => r.missing_objects += 1,
            Some(s) => {
                shared += 1;
                pos_sq += o.pose.position().dist(s.pose.position()).powi(2);
                r.heading_mae +=
                    crate::geometry::normalize_angle(s.pose.heading - o.pose.heading).abs();
                r.speed_mae_norm += (s.speed - o.speed).abs() / o.speed.max(1.0);
                r.size_mae += ((s.extent[0] - o.extent[0]).abs()
                    + (s.extent[1] - o.extent[1]).abs())
                    / 2.0;
            }
        }
    }
    r.added_objects = subjective
        .objects
        .iter()
        .filter(|s| objective.objects.iter().all(|o| o.id != s.id))
        .count() as u32;
    if shared > 0 {
        let n = shared as f64;
        r.position_rmse = (pos_sq / n).sqrt();
        r.heading_mae /= n;
        r.speed_mae_norm /= n;
        r.size_mae /= n;
    }

    let mut lane_sq = 0.0;
    let mut lane_samples = 0usize;
    let mut shared_lanes = 0usize;
    for (id, o) in &objective.lanes {
        match subjective.lanes.get(id) {
            None => r.missing_lanes += 1,
            Some(s) => {
                shared_lanes += 1;
                r.lane_width_mae += (s.width - o.width).abs();
                if o.centerline.len() >= 2 && s.centerline.len() >= 2 {
                    let lo = Polyline::new(o.centerline.clone());
                    let ls = Polyline::new(s.centerline.clone());
                    let span = lo.length().min(ls.length());
                    for k in 0..LANE_SAMPLES {
                        let t = span * k as f64 / (LANE_SAMPLES - 1) as f64;
                        lane_sq += lo.point_at(t).dist(ls.point_at(t)).powi(2);
                        lane_samples += 1;
                    }
                }
            }
        }
    }
    if lane_samples > 0 {
        r.lane_center_rmse = (lane_sq / lane_samples as f64).sqrt();
    }
    if shared_lanes > 0 {
        r.lane_width_mae /= shared_lanes as f64;
    }

    let mut shared_signals = 0usize;
    for o in &objective.signals {
        match subjective.signals.iter().find(|s| s.id == o.id) {
            None => r.signal_mismatches += 1,
            Some(s) => {
                shared_signals += 1;
                if s.phase != o.phase {
                    r.signal_mismatches += 1;
                }
                r.signal_time_mae += (s.time_in_state - o.time_in_state).abs();
            }
        }
    }
    if shared_signals > 0 {
        r.signal_time_mae /= shared_signals as f64;
    }

    r
}
