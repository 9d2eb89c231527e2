//! Run configuration: scenario documents, resolution against a map, and
//! canonical digests.
//!
//! A scenario file references its map by path; resolving it inlines the map
//! so a [`RunConfig`] is fully self-contained. The resolved config is echoed
//! into every log header, which is what makes replay possible from the log
//! alone.

use crate::dcl::DclParams;
use crate::map::{MapError, RoadMap, Route};
use crate::scene::{ObjectKind, Pose};
use crate::style::{StyleSchedule, StyleTriplet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("scenario needs at least one agent")]
    NoAgents,
    #[error("duplicate object id '{0}'")]
    DuplicateId(String),
    #[error("agent '{agent}': {problem}")]
    BadAgent { agent: String, problem: String },
    #[error("scripted object '{id}': {problem}")]
    BadScripted { id: String, problem: String },
    #[error("ego_under_test '{0}' is not a configured agent")]
    UnknownEgo(String),
    #[error("override path '{0}' does not exist in the configuration")]
    BadOverridePath(String),
    #[error("override value for '{path}' is not valid JSON: {value}")]
    BadOverrideValue { path: String, value: String },
    #[error("dt must be positive and at most 1.0, got {0}")]
    BadDt(f64),
    #[error(transparent)]
    Style(#[from] crate::style::StyleError),
}

/// One controlled agent as configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub id: String,
    pub spawn: Pose,
    /// Initial speed, m/s.
    #[serde(default)]
    pub speed: f64,
    /// Lane ids the agent intends to traverse, in order.
    pub route: Vec<String>,
    #[serde(default)]
    pub style: StyleTriplet,
    #[serde(default = "default_vehicle_extent")]
    pub extent: [f64; 2],
}

fn default_vehicle_extent() -> [f64; 2] {
    [4.5, 2.0]
}

/// One segment of a scripted speed profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub from_step: u64,
    /// Target speed, m/s.
    pub speed: f64,
    /// Rate at which speed approaches the target, m/s^2.
    #[serde(default = "default_rate")]
    pub rate: f64,
}

fn default_rate() -> f64 {
    3.0
}

/// A scripted (non-controlled) moving object following a lane chain or an
/// explicit path with a piecewise speed profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedConfig {
    pub id: String,
    pub kind: ObjectKind,
    #[serde(default = "default_vehicle_extent")]
    pub extent: [f64; 2],
    /// Lane to follow (continues onto successors). Mutually exclusive with
    /// `path`.
    #[serde(default)]
    pub lane: Option<String>,
    /// Arc-length starting position on the lane, m.
    #[serde(default)]
    pub start_s: f64,
    /// Constant lateral offset from the lane center, m.
    #[serde(default)]
    pub lateral: f64,
    /// Explicit polyline to follow instead of a lane.
    #[serde(default)]
    pub path: Option<Vec<[f64; 2]>>,
    pub profile: Vec<ProfileSegment>,
}

/// A fixed obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticConfig {
    pub id: String,
    pub pose: Pose,
    pub extent: [f64; 2],
}

/// Scenario document as found on disk. `map` is a path relative to the
/// scenario file (or an absolute path).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub map: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub max_steps: u64,
    #[serde(default = "default_bev_radius")]
    pub bev_radius: f64,
    #[serde(default)]
    pub default_seed: u64,
    #[serde(default)]
    pub dcl: DclParams,
    #[serde(default)]
    pub schedule: StyleSchedule,
    /// Log-ratio bound for guarded parameter evolution.
    #[serde(default = "default_delta")]
    pub consistency_delta: f64,
    /// Agent whose driving score the scenario is about, if any.
    #[serde(default)]
    pub ego_under_test: Option<String>,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub scripted: Vec<ScriptedConfig>,
    #[serde(default)]
    pub static_objects: Vec<StaticConfig>,
}

fn default_dt() -> f64 {
    0.05
}

fn default_bev_radius() -> f64 {
    50.0
}

fn default_delta() -> f64 {
    0.1
}

/// A fully resolved run: scenario with the map inlined plus the seed. This
/// struct is what gets digested and echoed into log headers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub road_map: RoadMap,
    pub run_seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<ScenarioConfig, ConfigError> {
        Ok(serde_json::from_str(json)?)
    }

    /// Load a scenario file and its map, applying `--override` style dotted
    /// path assignments before parsing.
    pub fn load(
        path: &std::path::Path,
        overrides: &[(String, String)],
    ) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)?;
        apply_overrides(&mut value, overrides)?;
        let scenario: ScenarioConfig = serde_json::from_value(value)?;
        let map_path = {
            let p = std::path::Path::new(&scenario.map);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                path.parent().unwrap_or(std::path::Path::new(".")).join(p)
            }
        };
        let map_text = std::fs::read_to_string(&map_path)?;
        let road_map = RoadMap::from_json(&map_text)?;
        let run_seed = scenario.default_seed;
        let cfg = RunConfig {
            scenario,
            road_map,
            run_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    /// Build a config from in-memory parts (used by tests and generators).
    pub fn new(scenario: ScenarioConfig, road_map: RoadMap, run_seed: u64) -> Result<RunConfig, ConfigError> {
        let cfg = RunConfig {
            scenario,
            road_map,
            run_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.validate_all().into_iter().next() {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }

    /// Collect every validation problem instead of stopping at the first,
    /// so a user fixing a config sees the full list in one pass.
    pub fn validate_all(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let s = &self.scenario;
        if !(s.dt > 0.0 && s.dt <= 1.0) {
            errs.push(ConfigError::BadDt(s.dt));
        }
        if let Err(e) = self.road_map.validate() {
            errs.push(e.into());
        }
        if s.agents.is_empty() {
            errs.push(ConfigError::NoAgents);
        }
        let registry = crate::style::TraitRegistry::builtin();
        let mut ids = BTreeSet::new();
        for a in &s.agents {
            if !ids.insert(a.id.clone()) {
                errs.push(ConfigError::DuplicateId(a.id.clone()));
            }
            let route = Route {
                lane_ids: a.route.clone(),
            };
            if let Err(e) = route.validate(&self.road_map) {
                errs.push(ConfigError::BadAgent {
                    agent: a.id.clone(),
                    problem: e.to_string(),
                });
            }
            if !a.spawn.is_finite() || !a.speed.is_finite() || a.speed < 0.0 {
                errs.push(ConfigError::BadAgent {
                    agent: a.id.clone(),
                    problem: "non-finite spawn or negative speed".to_string(),
                });
            }
            if let Err(e) = a.style.validate(&registry) {
                errs.push(e.into());
            }
        }
        for sc in &s.scripted {
            if !ids.insert(sc.id.clone()) {
                errs.push(ConfigError::DuplicateId(sc.id.clone()));
            }
            match (&sc.lane, &sc.path) {
                (Some(lane), None) => {
                    if self.road_map.lane(lane).is_none() {
                        errs.push(ConfigError::BadScripted {
                            id: sc.id.clone(),
                            problem: format!("unknown lane '{lane}'"),
                        });
                    }
                }
                (None, Some(path)) if path.len() >= 2 => {}
                _ => {
                    errs.push(ConfigError::BadScripted {
                        id: sc.id.clone(),
                        problem: "needs either a lane or a path of >= 2 points".to_string(),
                    });
                }
            }
            if sc.profile.is_empty() {
                errs.push(ConfigError::BadScripted {
                    id: sc.id.clone(),
                    problem: "empty speed profile".to_string(),
                });
            }
        }
        for st in &s.static_objects {
            if !ids.insert(st.id.clone()) {
                errs.push(ConfigError::DuplicateId(st.id.clone()));
            }
        }
        if let Some(ego) = &s.ego_under_test {
            if !s.agents.iter().any(|a| &a.id == ego) {
                errs.push(ConfigError::UnknownEgo(ego.clone()));
            }
        }
        errs
    }

    /// Canonical digest of the resolved configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        let mut h = Sha256::new();
        h.update(&bytes);
        hex::encode(h.finalize())
    }
}

/// Shorthand aliases for common override paths.
const OVERRIDE_ALIASES: &[(&str, &str)] = &[
    ("l3_rate", "schedule.l3_rate_hz"),
    ("l2_period", "schedule.l2_period_steps"),
    ("seed", "default_seed"),
];

/// Apply `key=value` overrides onto the raw scenario JSON. Keys are dotted
/// paths (`schedule.l3_rate_hz`); a few shorthands are accepted. The path
/// must already exist: silent creation of unknown keys hides typos.
pub fn apply_overrides(
    value: &mut serde_json::Value,
    overrides: &[(String, String)],
) -> Result<(), ConfigError> {
    for (path, raw) in overrides {
        let resolved = OVERRIDE_ALIASES
            .iter()
            .find(|(alias, _)| alias == path)
            .map(|(_, full)| full.to_string())
            .unwrap_or_else(|| path.clone());
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .or_else(|_| serde_json::from_str(&format!("\"{raw}\"")))
            .map_err(|_| ConfigError::BadOverrideValue {
                path: path.clone(),
                value: raw.clone(),
            })?;
        let parts: Vec<&str> = resolved.split('.').collect();
        let (last, init) = parts.split_last().expect("split produces at least one part");
        let mut cursor = &mut *value;
        for part in init {
            cursor = match cursor {
                serde_json::Value::Object(map) => map
                    .entry(part.to_string())
                    .or_insert_with(|| serde_json::json!({})),
                _ => return Err(ConfigError::BadOverridePath(path.clone())),
            };
        }
        match cursor {
            serde_json::Value::Object(map) => {
                // Defaulted sections may be absent from the file; allow
                // setting a leaf under an existing parent.
                map.insert(last.to_string(), parsed.clone());
            }
            _ => return Err(ConfigError::BadOverridePath(path.clone())),
        }
    }
    Ok(())
}
