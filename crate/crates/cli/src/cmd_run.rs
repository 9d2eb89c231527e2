//! `run`: execute seeded simulations and leave a self-contained artifact
//! directory per run: resolved config, trajectory log, metrics, provider
//! transcripts and the manifest tying them together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{SecondsFormat, Utc};
use rayon::prelude::*;
use serde::Serialize;

use crate::common::{style_label, Failure, ManifestPaths, RunManifest};
use stylesim::metrics::{driving_score, Penalties, ScoreBreakdown};
use stylesim::runtime::config::RunConfig;
use stylesim::runtime::{run, RunOptions};
use stylesim::style::TraitRegistry;
use stylesim::translator::{
    CatalogTranslator, CompletionTransport, HttpTransport, ProviderTranslator, ScriptCatalog,
    Translator, TranslatorError,
};

pub struct RunArgs {
    pub config: PathBuf,
    pub overrides: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub provider: bool,
    pub out: PathBuf,
    pub batch: u64,
    pub bypass_pmbi: bool,
}

/// Transport decorator that records every provider exchange for the
/// transcripts artifact.
struct RecordingTransport {
    inner: HttpTransport,
    entries: Arc<Mutex<Vec<TranscriptEntry>>>,
}

#[derive(Debug, Clone, Serialize)]
struct TranscriptEntry {
    system: String,
    user: String,
    response: Option<String>,
    error: Option<String>,
}

impl CompletionTransport for RecordingTransport {
    fn complete(&self, system: &str, user: &str) -> Result<String, TranslatorError> {
        let result = self.inner.complete(system, user);
        let entry = TranscriptEntry {
            system: system.to_string(),
            user: user.to_string(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        self.entries.lock().expect("transcript lock").push(entry);
        result
    }
}

fn provider_translator(
    entries: Arc<Mutex<Vec<TranscriptEntry>>>,
) -> Result<Arc<dyn Translator>, Failure> {
    let endpoint = std::env::var("STYLESIM_PROVIDER_ENDPOINT").map_err(|_| {
        Failure::Domain(
            "--provider on requires STYLESIM_PROVIDER_ENDPOINT (and optionally \
             STYLESIM_PROVIDER_MODEL, STYLESIM_PROVIDER_KEY)"
                .to_string(),
        )
    })?;
    let model = std::env::var("STYLESIM_PROVIDER_MODEL").unwrap_or_else(|_| "default".to_string());
    let key = std::env::var("STYLESIM_PROVIDER_KEY").ok();
    let transport = RecordingTransport {
        inner: HttpTransport::new(&endpoint, &model, key.as_deref()),
        entries,
    };
    Ok(Arc::new(ProviderTranslator::new(
        Box::new(transport),
        TraitRegistry::builtin(),
        ScriptCatalog::builtin(),
    )))
}

#[derive(Serialize)]
struct MetricsFile {
    ego_under_test: Option<String>,
    agents: BTreeMap<String, AgentMetrics>,
    events_total: u64,
    wall_time_ms: u64,
    mean_step_us: u64,
}

#[derive(Serialize)]
struct AgentMetrics {
    style: String,
    #[serde(flatten)]
    score: ScoreBreakdown,
}

fn run_one(
    cfg: RunConfig,
    provider: bool,
    bypass_pmbi: bool,
    out_root: &Path,
) -> Result<(RunManifest, String), Failure> {
    let transcripts: Arc<Mutex<Vec<TranscriptEntry>>> = Arc::default();
    let translator: Arc<dyn Translator> = if provider {
        provider_translator(Arc::clone(&transcripts))?
    } else {
        Arc::new(CatalogTranslator::new(TraitRegistry::builtin()))
    };
    let options = RunOptions {
        bypass_pmbi,
        translator: Some(translator),
        ..RunOptions::default()
    };

    let config_digest = cfg.digest();
    let config_bytes = serde_json::to_vec(&cfg).expect("config serialises");
    let scenario_name = cfg.scenario.name.clone();
    let ego = cfg.scenario.ego_under_test.clone();
    let styles: BTreeMap<String, String> = cfg
        .scenario
        .agents
        .iter()
        .map(|a| (a.id.clone(), style_label(&a.style)))
        .collect();
    let run_seed = cfg.run_seed;

    let output = run(cfg, options).map_err(|e| Failure::Domain(format!("run failed: {e}")))?;

    let stamp = Utc::now();
    let run_id = format!(
        "{}-{}",
        stamp.format("%Y%m%dT%H%M%SZ"),
        &config_digest[..12]
    );
    let dir = out_root.join(&run_id);
    std::fs::create_dir_all(&dir).map_err(|e| Failure::io("creating run directory", e))?;

    std::fs::write(dir.join("config.json"), &config_bytes)
        .map_err(|e| Failure::io("writing config", e))?;
    output
        .log
        .save(&dir.join("trajectory.jsonl"))
        .map_err(|e| Failure::io("writing log", e))?;

    let penalties = Penalties::default();
    let mut agents = BTreeMap::new();
    for (id, style) in &styles {
        agents.insert(
            id.clone(),
            AgentMetrics {
                style: style.clone(),
                score: driving_score(&output.log, id, &penalties),
            },
        );
    }
    let events_total = output.log.steps.iter().map(|s| s.events.len() as u64).sum();
    let metrics = MetricsFile {
        ego_under_test: ego,
        agents,
        events_total,
        wall_time_ms: output.wall_time.as_millis() as u64,
        mean_step_us: output.mean_step.as_micros() as u64,
    };
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("metrics serialise"),
    )
    .map_err(|e| Failure::io("writing metrics", e))?;

    let recorded = transcripts.lock().expect("transcript lock");
    let transcripts_path = if provider {
        let mut text = String::new();
        for entry in recorded.iter() {
            text.push_str(&serde_json::to_string(entry).expect("transcript serialises"));
            text.push('\n');
        }
        std::fs::write(dir.join("transcripts.jsonl"), text)
            .map_err(|e| Failure::io("writing transcripts", e))?;
        Some("transcripts.jsonl".to_string())
    } else {
        None
    };

    let mut translation_sources: BTreeMap<String, u64> = BTreeMap::new();
    for step in &output.log.steps {
        for rec in step.agents.values() {
            for t in &rec.translations {
                *translation_sources.entry(t.source.clone()).or_insert(0) += 1;
            }
        }
    }

    let manifest = RunManifest {
        run_id: run_id.clone(),
        created_utc: stamp.to_rfc3339_opts(SecondsFormat::Secs, true),
        scenario_name,
        run_seed,
        schema_version: output.log.header.schema_version,
        config_digest,
        log_digest: output.log.digest(),
        paths: ManifestPaths {
            config: "config.json".to_string(),
            log: "trajectory.jsonl".to_string(),
            metrics: "metrics.json".to_string(),
            transcripts: transcripts_path,
        },
        translation_sources,
        events_total,
    };
    manifest.save(&dir.join("manifest.json"))?;

    let summary = summarize(&manifest, &metrics, &dir);
    Ok((manifest, summary))
}

fn summarize(manifest: &RunManifest, metrics: &MetricsFile, dir: &Path) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "run {} (scenario '{}', seed {}) -> {}",
        manifest.run_id,
        manifest.scenario_name,
        manifest.run_seed,
        dir.display()
    );
    let _ = writeln!(
        out,
        "  {:<8} {:<22} {:>7} {:>8}  {}",
        "agent", "style", "RC%", "DS", "infractions"
    );
    for (id, m) in &metrics.agents {
        let ego_mark = if metrics.ego_under_test.as_deref() == Some(id) {
            "*"
        } else {
            " "
        };
        let infractions: Vec<String> = m
            .score
            .counts
            .iter()
            .map(|(k, n)| format!("{k:?}x{n}"))
            .collect();
        let _ = writeln!(
            out,
            " {}{:<8} {:<22} {:>7.1} {:>8.2}  {}",
            ego_mark,
            id,
            m.style,
            m.score.route_completion,
            m.score.score,
            if infractions.is_empty() {
                "-".to_string()
            } else {
                infractions.join(" ")
            }
        );
    }
    out
}

pub fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = crate::cmd_validate::load_unvalidated(&args.config, &args.overrides)?;
    let errors = cfg.validate_all();
    if !errors.is_empty() {
        let listed: Vec<String> = errors.iter().map(|e| format!("  - {e}")).collect();
        return Err(Failure::Domain(format!(
            "{} validation error(s):\n{}",
            errors.len(),
            listed.join("\n")
        )));
    }

    let base_seed = args.seed.unwrap_or(cfg.run_seed);
    let batch = args.batch.max(1);
    let results: Vec<Result<(RunManifest, String), Failure>> = (0..batch)
        .into_par_iter()
        .map(|i| {
            let mut cfg = cfg.clone();
            cfg.run_seed = base_seed + i;
            run_one(cfg, args.provider, args.bypass_pmbi, &args.out)
        })
        .collect();

    let mut count = 0;
    for result in results {
        let (_, summary) = result?;
        print!("{summary}");
        count += 1;
    }
    if count > 1 {
        println!("batch complete: {count} runs under {}", args.out.display());
    }
    Ok(())
}
