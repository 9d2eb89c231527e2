//! Trajectory logs: the single artefact a run produces.
//!
//! A log is a JSONL stream: one header line followed by one line per
//! decision step. Every quantity needed to audit or replay a run is in
//! here: poses, decisions, style versions, translation events with full
//! policy snapshots, script digests, committed guarded parameters and
//! perception divergence. Floats round-trip exactly through JSON, so a
//! rebuilt scene hashes to the same digest as the live one.

use crate::pmbi::divergence::DivergenceReport;
use crate::scene::{DrivingDecision, Pose, ViewProvenance};
use crate::style::{Layer, Policy, Triggers};
use crate::translator::TranslationMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

use super::config::RunConfig;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log parse error at line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("log is empty")]
    Empty,
    #[error("unsupported log schema version {0}")]
    SchemaVersion(u32),
}

/// First line of every log file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub config_digest: String,
    pub run_config: RunConfig,
}

/// One translation event: a call into the translator and what was adopted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslationEventRecord {
    pub mode: TranslationMode,
    /// Layers the event covers; layers with no policy in `policies` had
    /// their version bumped with the slot left empty.
    pub layers: Vec<Layer>,
    /// `catalog` or `provider`.
    pub source: String,
    pub policies: Vec<Policy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Per-agent slice of a step record. Pose and speed are the objective state
/// the decision was computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRecord {
    pub pose: Pose,
    pub speed: f64,
    pub lane: Option<String>,
    pub decision: DrivingDecision,
    pub provenance: ViewProvenance,
    pub triggers: Triggers,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub translations: Vec<TranslationEventRecord>,
    pub versions: BTreeMap<Layer, u64>,
    pub script_digest: String,
    /// Guarded parameter values committed this step, keyed `layer|api|param`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub guarded: BTreeMap<String, f64>,
    pub divergence: DivergenceReport,
    #[serde(default, skip_serializing_if = "is_zero_u32")]
    pub skipped_calls: u32,
}

fn is_zero_u32(v: &u32) -> bool {
    *v == 0
}

/// Infraction categories recognised by the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CollisionVehicle,
    CollisionPedestrian,
    CollisionStatic,
    RedLightViolation,
    RouteDeviation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub step: u64,
    pub kind: EventKind,
    pub agent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other_id: Option<String>,
}

/// One decision step. `world_digest` hashes the objective scene the
/// decisions were computed from; `events` happened during the integration
/// that followed (the final record therefore has none).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub world_digest: String,
    pub agents: BTreeMap<String, AgentRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<InfractionEvent>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryLog {
    pub fn new(run_config: RunConfig) -> TrajectoryLog {
        let config_digest = run_config.digest();
        TrajectoryLog {
            header: LogHeader {
                schema_version: LOG_SCHEMA_VERSION,
                config_digest,
                run_config,
            },
            steps: Vec::new(),
        }
    }

    /// Serialise as JSONL into a writer.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(&self.header).expect("header serialises");
        line.push(b'\n');
        w.write_all(&line)?;
        for step in &self.steps {
            let mut line = serde_json::to_vec(step).expect("step serialises");
            line.push(b'\n');
            w.write_all(&line)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), LogError> {
        let file = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_to(&mut buf)?;
        buf.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<TrajectoryLog, LogError> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(LogError::Empty)??;
        let header: LogHeader =
            serde_json::from_str(&first).map_err(|source| LogError::Parse { line: 1, source })?;
        if header.schema_version != LOG_SCHEMA_VERSION {
            return Err(LogError::SchemaVersion(header.schema_version));
        }
        let mut steps = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let step: StepRecord = serde_json::from_str(&line)
                .map_err(|source| LogError::Parse { line: i + 2, source })?;
            steps.push(step);
        }
        Ok(TrajectoryLog { header, steps })
    }

    pub fn load(path: &std::path::Path) -> Result<TrajectoryLog, LogError> {
        let file = std::fs::File::open(path)?;
        TrajectoryLog::read_from(std::io::BufReader::new(file))
    }

    /// Digest over the serialised byte stream. Two runs are identical iff
    /// their log digests match.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        struct HashWriter<'a>(&'a mut Sha256);
        impl Write for HashWriter<'_> {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        self.write_to(HashWriter(&mut h)).expect("hashing cannot fail");
        hex::encode(h.finalize())
    }

    /// Ordered per-step records for one agent.
    pub fn agent_track<'a>(&'a self, id: &str) -> Vec<&'a AgentRecord> {
        self.steps
            .iter()
            .filter_map(|s| s.agents.get(id))
            .collect()
    }

    /// All infraction events involving the given agent.
    pub fn events_involving<'a>(&'a self, id: &str) -> Vec<&'a InfractionEvent> {
        self.steps
            .iter()
            .flat_map(|s| s.events.iter())
            .filter(|e| e.agent_id == id || e.other_id.as_deref() == Some(id))
            .collect()
    }

    pub fn dt(&self) -> f64 {
        self.header.run_config.scenario.dt
    }
}
