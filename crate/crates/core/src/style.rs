//! The layered style model.
//!
//! An agent's style lives on three layers: a stable personality trait (L1),
//! a slowly evolving physiological state (L2) and transient attentional
//! events (L3). Each layer holds at most one [`Policy`], produced by the
//! translator from a natural-language [`BehaviorDescription`]. Layers evolve
//! on different clocks: L1 never changes after initialisation, L2 is
//! refreshed on a fixed period and additionally drifts or pulses between
//! refreshes, and L3 re-triggers at Poisson-distributed instants.

use crate::seeds;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("trait registry parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown trait '{name}' requested for layer {layer:?}")]
    UnknownTrait { name: String, layer: Layer },
    #[error("trait '{name}' is a {actual:?} trait but was assigned to {requested:?}")]
    LayerMismatch {
        name: String,
        actual: Layer,
        requested: Layer,
    },
    #[error("description for '{agent}' does not mention required keyword '{keyword}'")]
    MissingKeyword { agent: String, keyword: String },
    #[error("policy intensity {0} outside [0, 1]")]
    BadIntensity(f64),
    #[error("policy statement is empty")]
    EmptyStatement,
}

/// Style layer. Ordering matters: scripts apply L1 before L2 before L3.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash,
)]
pub enum Layer {
    L1,
    L2,
    L3,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::L1, Layer::L2, Layer::L3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Layer::L1 => "L1",
            Layer::L2 => "L2",
            Layer::L3 => "L3",
        }
    }
}

/// How an L2 state evolves between translator refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    /// Monotone ramp toward the trait extreme (fatigue builds up).
    Incremental,
    /// Bounded pulses around the base intensity (impairment comes in waves).
    Episodic,
}

/// Registry entry describing one nameable trait.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraitSpec {
    pub name: String,
    pub layer: Layer,
    #[serde(default)]
    pub l2_mode: Option<L2Mode>,
    pub default_intensity: f64,
    /// Words that must appear in any description tagged with this trait.
    pub keywords: Vec<String>,
    /// Perception-policy statement used by the catalog translator.
    pub statement: String,
    /// Clause inserted into generated behavior descriptions.
    pub description: String,
    /// Named sensitivities consumed by the policy-to-API mapping.
    pub hints: BTreeMap<String, f64>,
}

/// The set of nameable traits. Extensible by loading a JSON document of the
/// same shape as the built-in one.
#[derive(Debug, Clone)]
pub struct TraitRegistry {
    traits: BTreeMap<String, TraitSpec>,
}

#[derive(Deserialize)]
struct RegistryFile {
    traits: Vec<TraitSpec>,
}

pub const NORMAL: &str = "normal";

impl TraitRegistry {
    /// The built-in registry shipped with the crate.
    pub fn builtin() -> TraitRegistry {
        Self::from_json(include_str!("../assets/traits.json"))
            .expect("built-in trait registry is valid")
    }

    pub fn from_json(json: &str) -> Result<TraitRegistry, StyleError> {
        let file: RegistryFile = serde_json::from_str(json)?;
        let mut traits = BTreeMap::new();
        for t in file.traits {
            if !(0.0..=1.0).contains(&t.default_intensity) {
                return Err(StyleError::BadIntensity(t.default_intensity));
            }
            traits.insert(t.name.clone(), t);
        }
        Ok(TraitRegistry { traits })
    }

    pub fn get(&self, name: &str) -> Option<&TraitSpec> {
        self.traits.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.traits.keys().map(|s| s.as_str())
    }

    /// Check that `name` exists and belongs to `layer`. `"normal"` is valid
    /// on every layer and means no trait.
    pub fn check(&self, name: &str, layer: Layer) -> Result<(), StyleError> {
        if name == NORMAL {
            return Ok(());
        }
        let spec = self.get(name).ok_or_else(|| StyleError::UnknownTrait {
            name: name.to_string(),
            layer,
        })?;
        if spec.layer != layer {
            return Err(StyleError::LayerMismatch {
                name: name.to_string(),
                actual: spec.layer,
                requested: layer,
            });
        }
        Ok(())
    }
}

/// One trait name per layer; `"normal"` means the layer is unstyled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleTriplet {
    #[serde(default = "default_normal")]
    pub l1: String,
    #[serde(default = "default_normal")]
    pub l2: String,
    #[serde(default = "default_normal")]
    pub l3: String,
}

fn default_normal() -> String {
    NORMAL.to_string()
}

impl Default for StyleTriplet {
    fn default() -> Self {
        StyleTriplet {
            l1: default_normal(),
            l2: default_normal(),
            l3: default_normal(),
        }
    }
}

impl StyleTriplet {
    pub fn normal() -> Self {
        Self::default()
    }

    pub fn trait_for(&self, layer: Layer) -> Option<&str> {
        let name = match layer {
            Layer::L1 => &self.l1,
            Layer::L2 => &self.l2,
            Layer::L3 => &self.l3,
        };
        (name != NORMAL).then_some(name.as_str())
    }

    pub fn is_normal(&self) -> bool {
        self.l1 == NORMAL && self.l2 == NORMAL && self.l3 == NORMAL
    }

    /// Canonical label: non-normal traits joined by '+', or "normal".
    pub fn label(&self) -> String {
        let parts: Vec<&str> = Layer::ALL.iter().filter_map(|l| self.trait_for(*l)).collect();
        if parts.is_empty() {
            NORMAL.to_string()
        } else {
            parts.join("+")
        }
    }

    pub fn validate(&self, registry: &TraitRegistry) -> Result<(), StyleError> {
        registry.check(&self.l1, Layer::L1)?;
        registry.check(&self.l2, Layer::L2)?;
        registry.check(&self.l3, Layer::L3)?;
        Ok(())
    }
}

/// Natural-language behavior sketch for one agent, tagged with the traits
/// it encodes so downstream validation does not have to parse prose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDescription {
    pub agent_id: String,
    pub text: String,
    pub triplet: StyleTriplet,
}

/// Compose a behavior description for an agent. The wording varies with the
/// seed but always contains every tagged trait's keywords.
pub fn generate_description(
    agent_id: &str,
    triplet: &StyleTriplet,
    registry: &TraitRegistry,
    seed: u64,
) -> Result<BehaviorDescription, StyleError> {
    triplet.validate(registry)?;
    let openings = [
        format!("Driver {agent_id} is"),
        format!("Behind the wheel, {agent_id} is"),
        format!("{agent_id} presents as"),
    ];
    let pick = (seeds::unit_hash(seed, &["desc", agent_id], 0) * openings.len() as f64) as usize;
    let mut clauses: Vec<String> = Vec::new();
    for layer in Layer::ALL {
        if let Some(name) = triplet.trait_for(layer) {
            clauses.push(registry.get(name).unwrap().description.clone());
        }
    }
    if clauses.is_empty() {
        clauses.push("a typical driver with steady, attentive perception".to_string());
    }
    let text = format!("{} {}.", openings[pick.min(openings.len() - 1)], clauses.join("; "));
    let desc = BehaviorDescription {
        agent_id: agent_id.to_string(),
        text,
        triplet: triplet.clone(),
    };
    validate_description(&desc, registry)?;
    Ok(desc)
}

/// Check the description text actually mentions every tagged trait.
pub fn validate_description(
    desc: &BehaviorDescription,
    registry: &TraitRegistry,
) -> Result<(), StyleError> {
    let lower = desc.text.to_lowercase();
    for layer in Layer::ALL {
        if let Some(name) = desc.triplet.trait_for(layer) {
            let spec = registry.get(name).ok_or_else(|| StyleError::UnknownTrait {
                name: name.to_string(),
                layer,
            })?;
            for kw in &spec.keywords {
                if !lower.contains(&kw.to_lowercase()) {
                    return Err(StyleError::MissingKeyword {
                        agent: desc.agent_id.clone(),
                        keyword: kw.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// A perception policy for one layer: what the agent misperceives and how
/// strongly. `parameter_hints` carries named sensitivities for the built-in
/// mapping; `explicit_calls` (when non-empty) pins the exact API calls to
/// emit instead, which is how provider-supplied scripts are carried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub layer: Layer,
    pub trait_name: String,
    #[serde(default)]
    pub l2_mode: Option<L2Mode>,
    pub statement: String,
    pub intensity: f64,
    #[serde(default)]
    pub parameter_hints: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explicit_calls: Vec<crate::pmbi::ApiCall>,
}

impl Policy {
    pub fn validate(&self) -> Result<(), StyleError> {
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(StyleError::BadIntensity(self.intensity));
        }
        if self.statement.trim().is_empty() {
            return Err(StyleError::EmptyStatement);
        }
        Ok(())
    }

    pub fn hint(&self, key: &str, default: f64) -> f64 {
        self.parameter_hints.get(key).copied().unwrap_or(default)
    }
}

/// Per-agent policy state: at most one policy per layer plus a version
/// counter counting translation events on that layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub policies: BTreeMap<Layer, Policy>,
    pub versions: BTreeMap<Layer, u64>,
}

impl PolicySet {
    pub fn version(&self, layer: Layer) -> u64 {
        self.versions.get(&layer).copied().unwrap_or(0)
    }

    pub fn adopt(&mut self, policy: Policy) {
        let layer = policy.layer;
        self.policies.insert(layer, policy);
        *self.versions.entry(layer).or_insert(0) += 1;
    }

    /// Record a translation event that produced no policy for `layer`
    /// (normal agents still version their refresh events).
    pub fn bump_empty(&mut self, layer: Layer) {
        *self.versions.entry(layer).or_insert(0) += 1;
    }
}

/// Clocks for layer evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSchedule {
    /// L2 refresh period in steps.
    pub l2_period_steps: u64,
    /// Poisson rate of L3 attentional events, events per second.
    pub l3_rate_hz: f64,
    /// Half-range of the episodic intensity pulse.
    pub episodic_pulse_amplitude: f64,
    /// Steps per episodic pulse window.
    pub episodic_pulse_period_steps: u64,
}

impl Default for StyleSchedule {
    fn default() -> Self {
        StyleSchedule {
            l2_period_steps: 2000,
            l3_rate_hz: 0.064,
            episodic_pulse_amplitude: 0.2,
            episodic_pulse_period_steps: 200,
        }
    }
}

/// Everything `effective_intensity` needs to know about "now".
#[derive(Debug, Clone, Copy)]
pub struct ScheduleCtx {
    pub step: u64,
    pub dt: f64,
    pub agent_seed: u64,
    /// Step at which the policy's layer was initialised.
    pub activation_step: u64,
}

/// Instantaneous intensity of a policy.
///
/// * L1: constant.
/// * L2 incremental: `intensity * min(1, elapsed / ramp_steps)`; monotone
///   nondecreasing for a fixed policy.
/// * L2 episodic: base intensity plus a bounded pulse interpolated between
///   seeded per-window targets, always within
///   `[intensity - amplitude, intensity + amplitude]` (then clamped to [0,1]).
/// * L3: constant; lapse windows gate which parameters apply, not the
///   intensity itself.
pub fn effective_intensity(policy: &Policy, schedule: &StyleSchedule, ctx: &ScheduleCtx) -> f64 {
    match (policy.layer, policy.l2_mode) {
        (Layer::L2, Some(L2Mode::Incremental)) => {
            let ramp = policy.hint("ramp_steps", 4000.0).max(1.0);
            let elapsed = ctx.step.saturating_sub(ctx.activation_step) as f64;
            policy.intensity * (elapsed / ramp).min(1.0)
        }
        (Layer::L2, Some(L2Mode::Episodic)) => {
            let period = schedule.episodic_pulse_period_steps.max(1);
            let k = ctx.step / period;
            let frac = (ctx.step % period) as f64 / period as f64;
            let target = |i: u64| {
                2.0 * seeds::unit_hash(ctx.agent_seed, &["pulse", &policy.trait_name], i) - 1.0
            };
            let w = target(k) * (1.0 - frac) + target(k + 1) * frac;
            (policy.intensity + schedule.episodic_pulse_amplitude * w).clamp(0.0, 1.0)
        }
        _ => policy.intensity,
    }
}

/// Which triggers fired at one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triggers {
    pub l2_update: bool,
    /// Number of Poisson arrivals that landed in this step (several in one
    /// step collapse into a single re-interpretation but are all counted).
    pub l3_count: u32,
}

impl Triggers {
    pub fn any(&self) -> bool {
        self.l2_update || self.l3_count > 0
    }
}

/// Per-agent trigger clock. L2 updates fire on the fixed period; L3 events
/// follow a Poisson process sampled as exponential inter-arrival times from
/// a dedicated per-agent stream.
#[derive(Debug, Clone)]
pub struct TriggerState {
    rng: ChaCha8Rng,
    rate_hz: f64,
    next_l3_time: f64,
}

impl TriggerState {
    pub fn new(agent_seed: u64, schedule: &StyleSchedule) -> TriggerState {
        let mut rng = seeds::stream(agent_seed, &["l3_arrivals"]);
        let rate_hz = schedule.l3_rate_hz;
        let next_l3_time = sample_gap(&mut rng, rate_hz);
        TriggerState {
            rng,
            rate_hz,
            next_l3_time,
        }
    }

    /// Poll at step `step` (time `step * dt`). Steps must be polled in
    /// strictly increasing order, once each.
    pub fn poll(&mut self, schedule: &StyleSchedule, step: u64, dt: f64) -> Triggers {
        let mut t = Triggers {
            l2_update: step > 0 && step % schedule.l2_period_steps.max(1) == 0,
            l3_count: 0,
        };
        let now = step as f64 * dt;
        while self.next_l3_time <= now {
            t.l3_count += 1;
            self.next_l3_time += sample_gap(&mut self.rng, self.rate_hz);
        }
        t
    }
}

fn sample_gap(rng: &mut ChaCha8Rng, rate_hz: f64) -> f64 {
    if rate_hz <= 0.0 {
        return f64::INFINITY;
    }
    // Inverse CDF of the exponential distribution; 1-u is in (0, 1].
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate_hz
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn registry() -> TraitRegistry {
        TraitRegistry::builtin()
    }

    #[test]
    fn builtin_registry_has_core_traits() {
        let reg = registry();
        for name in ["aggressive", "cautious", "drunk", "fatigued", "distracted"] {
            assert!(reg.get(name).is_some(), "missing trait {name}");
        }
        assert_eq!(reg.get("aggressive").unwrap().layer, Layer::L1);
        assert_eq!(reg.get("drunk").unwrap().l2_mode, Some(L2Mode::Episodic));
        assert_eq!(
            reg.get("fatigued").unwrap().l2_mode,
            Some(L2Mode::Incremental)
        );
        assert_eq!(reg.get("distracted").unwrap().layer, Layer::L3);
    }

    #[test]
    fn triplet_layer_mismatch_rejected() {
        let reg = registry();
        let triplet = StyleTriplet {
            l1: "drunk".to_string(),
            ..StyleTriplet::normal()
        };
        assert!(matches!(
            triplet.validate(&reg),
            Err(StyleError::LayerMismatch { .. })
        ));
    }

    #[test]
    fn descriptions_carry_keywords() {
        let reg = registry();
        let triplet = StyleTriplet {
            l1: "aggressive".to_string(),
            l2: "fatigued".to_string(),
            l3: "distracted".to_string(),
        };
        for seed in 0..5 {
            let d = generate_description("v03", &triplet, &reg, seed).unwrap();
            let lower = d.text.to_lowercase();
            assert!(lower.contains("aggressive"));
            assert!(lower.contains("fatigued"));
            assert!(lower.contains("distracted"));
        }
    }

    #[test]
    fn incremental_ramp_is_monotone_and_saturates() {
        let reg = registry();
        let spec = reg.get("fatigued").unwrap();
        let policy = Policy {
            layer: Layer::L2,
            trait_name: spec.name.clone(),
            l2_mode: spec.l2_mode,
            statement: spec.statement.clone(),
            intensity: 0.8,
            parameter_hints: spec.hints.clone(),
            explicit_calls: vec![],
        };
        let schedule = StyleSchedule::default();
        let mut prev = -1.0;
        for step in (0..8000).step_by(100) {
            let ctx = ScheduleCtx {
                step,
                dt: 0.05,
                agent_seed: 9,
                activation_step: 0,
            };
            let e = effective_intensity(&policy, &schedule, &ctx);
            assert!(e >= prev - 1e-12, "ramp decreased at {step}");
            prev = e;
        }
        let ctx = ScheduleCtx {
            step: 100_000,
            dt: 0.05,
            agent_seed: 9,
            activation_step: 0,
        };
        assert!((effective_intensity(&policy, &schedule, &ctx) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn episodic_pulse_stays_bounded() {
        let policy = Policy {
            layer: Layer::L2,
            trait_name: "drunk".to_string(),
            l2_mode: Some(L2Mode::Episodic),
            statement: "x".to_string(),
            intensity: 0.6,
            parameter_hints: BTreeMap::new(),
            explicit_calls: vec![],
        };
        let schedule = StyleSchedule {
            episodic_pulse_amplitude: 0.2,
            ..StyleSchedule::default()
        };
        for step in 0..5000 {
            let ctx = ScheduleCtx {
                step,
                dt: 0.05,
                agent_seed: 31,
                activation_step: 0,
            };
            let e = effective_intensity(&policy, &schedule, &ctx);
            assert!(
                (0.4 - 1e-12..=0.8 + 1e-12).contains(&e),
                "pulse escaped bounds: {e} at step {step}"
            );
        }
    }

    #[test]
    fn l2_triggers_on_period() {
        let schedule = StyleSchedule::default();
        let mut state = TriggerState::new(7, &schedule);
        let mut l2_steps = Vec::new();
        for step in 0..=6000u64 {
            if state.poll(&schedule, step, 0.05).l2_update {
                l2_steps.push(step);
            }
        }
        assert_eq!(l2_steps, vec![2000, 4000, 6000]);
    }

    #[test]
    fn l3_rate_matches_poisson_expectation() {
        // 200 agents x 300 s at 0.064 Hz: expect 19.2 events per agent.
        let schedule = StyleSchedule::default();
        let mut total = 0u64;
        let agents = 200;
        for a in 0..agents {
            let mut state = TriggerState::new(seeds::agent_seed(12345, &format!("v{a}")), &schedule);
            for step in 0..=6000u64 {
                total += state.poll(&schedule, step, 0.05).l3_count as u64;
            }
        }
        let mean = total as f64 / agents as f64;
        assert!(
            (mean - 19.2).abs() < 19.2 * 0.05,
            "pooled L3 mean {mean} outside 5% of 19.2"
        );
    }

    #[test]
    fn zero_rate_never_triggers() {
        let schedule = StyleSchedule {
            l3_rate_hz: 0.0,
            ..StyleSchedule::default()
        };
        let mut state = TriggerState::new(1, &schedule);
        for step in 0..=10_000u64 {
            assert_eq!(state.poll(&schedule, step, 0.05).l3_count, 0);
        }
    }

    proptest! {
        #[test]
        fn episodic_bound_holds_for_any_base(base in 0.0f64..1.0, step in 0u64..20_000) {
            let policy = Policy {
                layer: Layer::L2,
                trait_name: "drunk".to_string(),
                l2_mode: Some(L2Mode::Episodic),
                statement: "x".to_string(),
                intensity: base,
                parameter_hints: BTreeMap::new(),
                explicit_calls: vec![],
            };
            let schedule = StyleSchedule::default();
            let ctx = ScheduleCtx { step, dt: 0.05, agent_seed: 4, activation_step: 0 };
            let e = effective_intensity(&policy, &schedule, &ctx);
            prop_assert!(e >= (base - 0.2 - 1e-12).max(0.0));
            prop_assert!(e <= (base + 0.2 + 1e-12).min(1.0));
        }
    }
}
