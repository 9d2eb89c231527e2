//! The fixed catalog of modulation APIs: four per perception dimension.
//!
//! The catalog is the complete action space of the style system. Every
//! script call names one of these APIs; anything else is rejected by
//! validation and repaired or dropped before application.

use super::Script;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("unknown api '{0}'")]
    UnknownApi(String),
    #[error("api '{api}' does not take parameter '{param}'")]
    UnknownParam { api: String, param: String },
    #[error("api '{api}' parameter '{param}' value {value} outside [{min}, {max}]")]
    ParamOutOfRange {
        api: String,
        param: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("api '{api}' parameter '{param}' is not finite")]
    NonFiniteParam { api: String, param: String },
    #[error("api '{api}' missing required parameter '{param}'")]
    MissingParam { api: String, param: String },
    #[error("duplicate call for api '{api}' selector '{selector}' on layer {layer}")]
    DuplicateCall {
        api: String,
        selector: String,
        layer: String,
    },
    #[error("script wire parse error: {0}")]
    Wire(String),
}

/// Perception dimension an API distorts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Motion,
    Spatial,
    Temporal,
    Structural,
}

/// What class of view element an API rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetClass {
    Object,
    Lane,
    Signal,
}

/// One parameter of a modulation API.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    /// Value at which the parameter has no effect; intensity scaling is
    /// linear in the distance from this point.
    pub identity: f64,
    /// Guarded parameters are ratio-scale and rate-limited step to step.
    pub guarded: bool,
    /// Rounded to the nearest integer on application.
    pub integer: bool,
}

/// One modulation API.
#[derive(Debug, Clone)]
pub struct ApiSpec {
    pub name: &'static str,
    pub dimension: Dimension,
    pub target: TargetClass,
    pub params: Vec<ParamSpec>,
    /// Whether the API preserves ordering of its governed scalar across
    /// targets (a uniform scale keeps nearer objects nearer).
    pub monotone: bool,
    pub doc: &'static str,
}

impl ApiSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn p(name: &'static str, min: f64, max: f64, identity: f64, guarded: bool, integer: bool) -> ParamSpec {
    ParamSpec {
        name,
        min,
        max,
        identity,
        guarded,
        integer,
    }
}

/// The full catalog, in canonical order: motion, spatial, temporal,
/// structural; four APIs each.
pub fn catalog() -> &'static [ApiSpec] {
    static CATALOG: OnceLock<Vec<ApiSpec>> = OnceLock::new();
    CATALOG.get_or_init(|| {
        vec![
            ApiSpec {
                name: "scale_perceived_speed",
                dimension: Dimension::Motion,
                target: TargetClass::Object,
                params: vec![p("factor", 0.25, 4.0, 1.0, true, false)],
                monotone: true,
                doc: "Multiply a target object's perceived speed.",
            },
            ApiSpec {
                name: "bias_perceived_heading",
                dimension: Dimension::Motion,
                target: TargetClass::Object,
                params: vec![p("bias_rad", -0.6, 0.6, 0.0, false, false)],
                monotone: false,
                doc: "Rotate a target object's perceived heading by a fixed bias.",
            },
            ApiSpec {
                name: "freeze_motion_update",
                dimension: Dimension::Motion,
                target: TargetClass::Object,
                params: vec![p("hold_steps", 1.0, 200.0, 0.0, false, true)],
                monotone: false,
                doc: "Refresh the perceived state of a target only every hold_steps steps.",
            },
            ApiSpec {
                name: "drop_object_velocity",
                dimension: Dimension::Motion,
                target: TargetClass::Object,
                params: vec![],
                monotone: false,
                doc: "Perceive a moving target as stationary.",
            },
            ApiSpec {
                name: "scale_perceived_distance",
                dimension: Dimension::Spatial,
                target: TargetClass::Object,
                params: vec![p("factor", 0.5, 2.0, 1.0, true, false)],
                monotone: true,
                doc: "Scale a target's distance from the ego radially.",
            },
            ApiSpec {
                name: "offset_object_position",
                dimension: Dimension::Spatial,
                target: TargetClass::Object,
                params: vec![
                    p("dx_m", -6.0, 6.0, 0.0, false, false),
                    p("dy_m", -6.0, 6.0, 0.0, false, false),
                ],
                monotone: false,
                doc: "Translate a target's perceived position in the ego frame.",
            },
            ApiSpec {
                name: "scale_object_size",
                dimension: Dimension::Spatial,
                target: TargetClass::Object,
                params: vec![p("factor", 0.5, 2.0, 1.0, true, false)],
                monotone: true,
                doc: "Scale a target's perceived bounding box.",
            },
            ApiSpec {
                name: "occlude_object",
                dimension: Dimension::Spatial,
                target: TargetClass::Object,
                params: vec![],
                monotone: false,
                doc: "Remove a target from the perceived scene entirely.",
            },
            ApiSpec {
                name: "shift_signal_phase",
                dimension: Dimension::Temporal,
                target: TargetClass::Signal,
                params: vec![p("shift_s", 0.0, 60.0, 0.0, false, false)],
                monotone: false,
                doc: "Perceive a signal as further into its current phase.",
            },
            ApiSpec {
                name: "delay_signal_perception",
                dimension: Dimension::Temporal,
                target: TargetClass::Signal,
                params: vec![p("delay_steps", 1.0, 200.0, 0.0, false, true)],
                monotone: false,
                doc: "Perceive a signal's state with a refresh lag of delay_steps steps.",
            },
            ApiSpec {
                name: "stretch_perceived_yellow",
                dimension: Dimension::Temporal,
                target: TargetClass::Signal,
                params: vec![p("green_hold_s", 0.0, 10.0, 0.0, true, false)],
                monotone: false,
                doc: "Perceive a fresh yellow as still green for green_hold_s seconds.",
            },
            ApiSpec {
                name: "misread_signal_state",
                dimension: Dimension::Temporal,
                target: TargetClass::Signal,
                params: vec![],
                monotone: false,
                doc: "Perceive a signal as showing the next phase in its cycle.",
            },
            ApiSpec {
                name: "curve_lane_marks",
                dimension: Dimension::Structural,
                target: TargetClass::Lane,
                params: vec![
                    p("amplitude_m", 0.0, 2.0, 0.0, true, false),
                    p("wavelength_m", 5.0, 200.0, 30.0, false, false),
                ],
                monotone: false,
                doc: "Perceive straight lane markings as a sinusoidal sway.",
            },
            ApiSpec {
                name: "widen_perceived_lane",
                dimension: Dimension::Structural,
                target: TargetClass::Lane,
                params: vec![p("factor", 1.0, 2.5, 1.0, true, false)],
                monotone: true,
                doc: "Perceive a lane as wider than it is.",
            },
            ApiSpec {
                name: "shift_lane_center",
                dimension: Dimension::Structural,
                target: TargetClass::Lane,
                params: vec![p("offset_m", -2.0, 2.0, 0.0, false, false)],
                monotone: false,
                doc: "Perceive a lane's centerline displaced sideways.",
            },
            ApiSpec {
                name: "erase_lane_marking",
                dimension: Dimension::Structural,
                target: TargetClass::Lane,
                params: vec![],
                monotone: false,
                doc: "Perceive a lane's markings as absent.",
            },
        ]
    })
}

pub fn find_api(name: &str) -> Option<&'static ApiSpec> {
    catalog().iter().find(|a| a.name == name)
}

/// Position of an API in the canonical catalog order; unknown APIs sort
/// last.
pub fn catalog_index(name: &str) -> usize {
    catalog()
        .iter()
        .position(|a| a.name == name)
        .unwrap_or(usize::MAX)
}

/// Validate a script against the catalog: every call names a known API,
/// carries exactly its declared parameters with finite in-range values, and
/// no (layer, api, selector) triple repeats.
pub fn validate_script(script: &Script) -> Result<(), ScriptError> {
    let mut seen = std::collections::BTreeSet::new();
    for call in &script.calls {
        let spec = find_api(&call.api).ok_or_else(|| ScriptError::UnknownApi(call.api.clone()))?;
        for (name, value) in &call.params {
            let ps = spec.param(name).ok_or_else(|| ScriptError::UnknownParam {
                api: call.api.clone(),
                param: name.clone(),
            })?;
            if !value.is_finite() {
                return Err(ScriptError::NonFiniteParam {
                    api: call.api.clone(),
                    param: name.clone(),
                });
            }
            if *value < ps.min || *value > ps.max {
                return Err(ScriptError::ParamOutOfRange {
                    api: call.api.clone(),
                    param: name.clone(),
                    value: *value,
                    min: ps.min,
                    max: ps.max,
                });
            }
        }
        for ps in &spec.params {
            if !call.params.contains_key(ps.name) {
                return Err(ScriptError::MissingParam {
                    api: call.api.clone(),
                    param: ps.name.to_string(),
                });
            }
        }
        let key = (call.layer, call.api.clone(), call.selector.sort_key());
        if !seen.insert(key) {
            return Err(ScriptError::DuplicateCall {
                api: call.api.clone(),
                selector: call.selector.sort_key(),
                layer: call.layer.as_str().to_string(),
            });
        }
    }
    Ok(())
}

/// Best-effort repair: drop calls naming unknown APIs or missing required
/// parameters, clamp out-of-range values, drop non-finite ones, and drop
/// duplicate (layer, api, selector) repeats. Returns the repaired script
/// and one note per change.
pub fn sanitize_script(script: &Script) -> (Script, Vec<String>) {
    let mut notes = Vec::new();
    let mut out = Script::default();
    let mut seen = std::collections::BTreeSet::new();
    'calls: for call in &script.calls {
        let Some(spec) = find_api(&call.api) else {
            notes.push(format!("dropped call to unknown api '{}'", call.api));
            continue;
        };
        let mut fixed = call.clone();
        fixed.params.retain(|name, _| {
            let known = spec.param(name).is_some();
            if !known {
                notes.push(format!("dropped unknown param '{}' of '{}'", name, call.api));
            }
            known
        });
        for ps in &spec.params {
            match fixed.params.get_mut(ps.name) {
                Some(v) if v.is_finite() => {
                    let clamped = v.clamp(ps.min, ps.max);
                    if clamped != *v {
                        notes.push(format!(
                            "clamped '{}.{}' from {} to {}",
                            call.api, ps.name, v, clamped
                        ));
                        *v = clamped;
                    }
                }
                _ => {
                    notes.push(format!(
                        "dropped call to '{}': parameter '{}' missing or not finite",
                        call.api, ps.name
                    ));
                    continue 'calls;
                }
            }
        }
        let key = (fixed.layer, fixed.api.clone(), fixed.selector.sort_key());
        if !seen.insert(key) {
            notes.push(format!("dropped duplicate call to '{}'", call.api));
            continue;
        }
        out.calls.push(fixed);
    }
    out.sort();
    (out, notes)
}
