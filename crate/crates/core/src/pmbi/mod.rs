//! Perception modulation: the only place style touches the pipeline.
//!
//! Policies are lowered onto a fixed catalog of modulation APIs
//! ([`catalog`]), producing a [`Script`] of concrete calls for one agent and
//! one step. Applying a script rewrites that agent's private [`BevView`];
//! the objective scene graph is never consulted mutably, so styles cannot
//! leak into the world. Parameter evolution between steps is rate-limited
//! by a log-ratio guard ([`ConsistencyGuard`]) so perceived quantities never
//! jump implausibly.

pub mod apply;
pub mod catalog;
pub mod divergence;
pub mod mapping;

pub use apply::{apply_script, ApplyReport, SkippedCall};
pub use catalog::{
    catalog, find_api, sanitize_script, validate_script, ApiSpec, Dimension, ParamSpec,
    ScriptError, TargetClass,
};
pub use divergence::{perception_divergence, DivergenceReport};
pub use mapping::{build_script, map_policy_to_calls, MappingCtx, ModTarget};

use crate::style::Layer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Object-filter relation used by selectors, resolved against the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Nearest heading-aligned vehicle ahead in the ego's lane corridor.
    Lead,
    /// Any heading-aligned object in the ego's lane corridor.
    SameLane,
    /// Objects ahead that face the ego.
    Oncoming,
    Any,
}

/// What a call applies to. `target_id` pins a concrete object, lane or
/// signal; otherwise `kind`/`relation` select a class of targets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
}

impl Selector {
    pub fn for_id(id: &str) -> Selector {
        Selector {
            target_id: Some(id.to_string()),
            ..Selector::default()
        }
    }

    /// Deterministic sort key for script ordering.
    pub fn sort_key(&self) -> String {
        format!(
            "{}|{:?}|{}",
            self.kind.as_deref().unwrap_or(""),
            self.relation,
            self.target_id.as_deref().unwrap_or("")
        )
    }
}

/// One modulation API invocation. This struct is the wire format: scripts
/// are exchanged and logged as JSON arrays of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub api: String,
    #[serde(default)]
    pub selector: Selector,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub layer: Layer,
    #[serde(default)]
    pub call_seed: u64,
}

/// An ordered list of calls for one agent and one step. Calls are sorted by
/// (layer, catalog index, selector) so identical inputs always produce a
/// byte-identical serialisation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Script {
    pub calls: Vec<ApiCall>,
}

impl Script {
    pub fn sort(&mut self) {
        self.calls.sort_by(|a, b| {
            let ia = catalog::catalog_index(&a.api);
            let ib = catalog::catalog_index(&b.api);
            a.layer
                .cmp(&b.layer)
                .then(ia.cmp(&ib))
                .then_with(|| a.selector.sort_key().cmp(&b.selector.sort_key()))
        });
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.calls).expect("script serialises");
        let mut h = Sha256::new();
        h.update(&bytes);
        hex::encode(h.finalize())
    }

    pub fn to_wire(&self) -> String {
        serde_json::to_string(&self.calls).expect("script serialises")
    }

    pub fn from_wire(json: &str) -> Result<Script, ScriptError> {
        let calls: Vec<ApiCall> =
            serde_json::from_str(json).map_err(|e| ScriptError::Wire(e.to_string()))?;
        Ok(Script { calls })
    }
}

/// Per-agent state that survives across steps: the last committed value of
/// every rate-limited parameter plus stale-perception snapshots.
#[derive(Debug, Clone, Default)]
pub struct ModulationState {
    /// Last committed value per "layer|api|param" key.
    pub last_params: BTreeMap<String, f64>,
    /// Stale-perception entries keyed by "api|target_id".
    pub stale: BTreeMap<String, apply::StaleEntry>,
}

pub fn param_key(layer: Layer, api: &str, param: &str) -> String {
    format!("{}|{}|{}", layer.as_str(), api, param)
}

/// Log-ratio rate limiter for guarded parameters. Guards the absolute log
/// ratio between consecutive committed values: `|ln(v_t / v_{t-1})| <= delta`.
/// Proposals are staged during script construction and committed once the
/// whole script is built, so several calls in one script see a consistent
/// "previous" value.
#[derive(Debug)]
pub struct ConsistencyGuard<'a> {
    state: &'a mut ModulationState,
    staged: BTreeMap<String, f64>,
    pub delta: f64,
}

/// Values below this are treated as this for ratio purposes; guarded
/// parameters are ratio-scale and positive.
const RATIO_FLOOR: f64 = 1e-6;

impl<'a> ConsistencyGuard<'a> {
    pub fn new(state: &'a mut ModulationState, delta: f64) -> Self {
        ConsistencyGuard {
            state,
            staged: BTreeMap::new(),
            delta,
        }
    }

    /// Clamp `proposed` so the step from the previous committed value stays
    /// within the log-ratio bound. The first value ever seen for a key
    /// passes through unchanged. Within one script the first clamp of a key
    /// fixes its value; later clamps of the same key return that value, so
    /// one step can never move a parameter by more than one bound.
    pub fn clamp(&mut self, layer: Layer, api: &str, param: &str, proposed: f64) -> f64 {
        let key = param_key(layer, api, param);
        if let Some(v) = self.staged.get(&key) {
            return *v;
        }
        let value = match self.state.last_params.get(&key).copied() {
            None => proposed,
            Some(p) => {
                let p = p.max(RATIO_FLOOR);
                let v = proposed.max(RATIO_FLOOR);
                let ratio = (v / p).ln();
                if ratio.abs() <= self.delta {
                    v
                } else {
                    p * ratio.clamp(-self.delta, self.delta).exp()
                }
            }
        };
        self.staged.insert(key, value);
        value
    }

    /// Commit all staged values; returns the committed map for logging.
    pub fn commit(self) -> BTreeMap<String, f64> {
        for (k, v) in &self.staged {
            self.state.last_params.insert(k.clone(), *v);
        }
        self.staged
    }
}
