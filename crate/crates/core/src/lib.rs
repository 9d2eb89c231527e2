//! Deterministic multi-agent traffic simulation in which background vehicles
//! acquire human driving styles purely through distorted *perception*.
//!
//! Every controlled agent runs the same deterministic controller. Style is
//! injected by a modulation layer that rewrites the agent's private
//! bird's-eye view before the controller sees it; the objective world state
//! is never touched. Styles are described at three layers (stable
//! personality, slowly evolving physiological state, transient attentional
//! events), translated into perception policies, and lowered onto a fixed
//! catalog of modulation APIs with rate-limited parameter evolution so that
//! perceived quantities never jump implausibly between steps.
//!
//! The crate is organised as a pipeline:
//!
//! * [`scene`] / [`map`] hold objective world state and road geometry,
//! * [`style`] owns style descriptions, layered policies and their schedules,
//! * [`translator`] turns descriptions into policies (catalog or provider),
//! * [`pmbi`] lowers policies onto modulation API calls and applies them,
//! * [`dcl`] is the shared deterministic controller,
//! * [`runtime`] wires everything into seeded, replayable runs,
//! * [`metrics`] scores trajectories and classifies styles.

pub mod dcl;
pub mod geometry;
pub mod map;
pub mod metrics;
pub mod pmbi;
pub mod runtime;
pub mod scene;
pub mod seeds;
pub mod style;
pub mod translator;

pub use runtime::config::{RunConfig, ScenarioConfig};
pub use runtime::{RunOptions, RunOutput};
