//! `export-replay`: reconstruct paired objective/subjective views for one
//! agent over a step range and write them as scene JSON, a divergence CSV
//! or raster grids.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::common::{Failure, RunManifest};
use stylesim::metrics::rasterize_scene;
use stylesim::runtime::log::TrajectoryLog;
use stylesim::runtime::replay::{export_views, ViewPair};
use stylesim::scene::{BevView, ObjectKind, ObjectState, Pose, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
    Pgm,
}

pub struct ExportArgs {
    pub manifest: PathBuf,
    pub agent: Option<String>,
    pub from: Option<u64>,
    pub to: Option<u64>,
    pub format: ExportFormat,
    pub out: PathBuf,
    pub pixels_per_meter: f64,
}

/// A view is already ego-frame; wrap it as a scene so the shared rasterizer
/// can draw it. The ego itself becomes an object at the origin.
fn view_scene(view: &BevView) -> SceneGraph {
    let mut objects = vec![ObjectState {
        id: view.ego_id.clone(),
        kind: ObjectKind::Vehicle,
        pose: Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        },
        speed: view.ego_speed,
        extent: view.ego_extent,
        lane_id: view.ego_lane.clone(),
    }];
    objects.extend(view.objects.iter().cloned());
    SceneGraph {
        step_index: view.step_index,
        sim_time: view.sim_time,
        objects,
        lanes: view.lanes.clone(),
        signals: view.signals.clone(),
    }
}

fn write_jsonl(args: &ExportArgs, pairs: &[ViewPair]) -> Result<PathBuf, Failure> {
    let path = args.out.join("views.jsonl");
    let mut text = String::new();
    for pair in pairs {
        text.push_str(&serde_json::to_string(pair).expect("view pair serialises"));
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Failure::io("writing views.jsonl", e))?;
    Ok(path)
}

fn write_csv(args: &ExportArgs, pairs: &[ViewPair]) -> Result<PathBuf, Failure> {
    let path = args.out.join("views.csv");
    let mut text = String::from(
        "step,agent_id,objects_objective,objects_subjective,lanes_objective,lanes_subjective,signals_objective,signals_subjective\n",
    );
    for p in pairs {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            p.step,
            p.agent_id,
            p.objective.objects.len(),
            p.subjective.objects.len(),
            p.objective.lanes.len(),
            p.subjective.lanes.len(),
            p.objective.signals.len(),
            p.subjective.signals.len(),
        );
    }
    std::fs::write(&path, text).map_err(|e| Failure::io("writing views.csv", e))?;
    Ok(path)
}

fn write_pgm(args: &ExportArgs, pairs: &[ViewPair]) -> Result<PathBuf, Failure> {
    for p in pairs {
        for (tag, view) in [("obj", &p.objective), ("subj", &p.subjective)] {
            let raster = rasterize_scene(&view_scene(view), args.pixels_per_meter);
            let path = args.out.join(format!("step{:06}_{}.pgm", p.step, tag));
            let file =
                std::fs::File::create(&path).map_err(|e| Failure::io("creating raster", e))?;
            raster
                .write_pgm(std::io::BufWriter::new(file))
                .map_err(|e| Failure::io("writing raster", e))?;
        }
    }
    Ok(args.out.clone())
}

pub fn cmd_export_replay(args: &ExportArgs) -> Result<(), Failure> {
    let (manifest, dir) = RunManifest::load(&args.manifest)?;
    let log_path = manifest.log_path(&dir);
    let log = TrajectoryLog::load(&log_path)
        .map_err(|e| Failure::Domain(format!("log {}: {e}", log_path.display())))?;
    if log.digest() != manifest.log_digest {
        return Err(Failure::Domain(format!(
            "log digest mismatch for {}: log file was modified after the run",
            manifest.run_id
        )));
    }

    let cfg = &log.header.run_config;
    let agent = match &args.agent {
        Some(id) => {
            if !cfg.scenario.agents.iter().any(|a| &a.id == id) {
                return Err(Failure::Domain(format!(
                    "agent '{id}' is not in the run; configured agents: {}",
                    cfg.scenario
                        .agents
                        .iter()
                        .map(|a| a.id.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            id.clone()
        }
        None => cfg
            .scenario
            .ego_under_test
            .clone()
            .unwrap_or_else(|| cfg.scenario.agents[0].id.clone()),
    };

    let last = log.steps.last().map(|s| s.step).unwrap_or(0);
    let from = args.from.unwrap_or(0);
    let to = args.to.unwrap_or(last);
    if from > to || to > last {
        return Err(Failure::Domain(format!(
            "step range {from}..={to} invalid; this log covers steps 0..={last}"
        )));
    }

    let pairs = export_views(&log, &agent, from, to)
        .map_err(|e| Failure::Domain(format!("replay failed: {e}")))?;

    std::fs::create_dir_all(&args.out).map_err(|e| Failure::io("creating export dir", e))?;
    let written = match args.format {
        ExportFormat::Jsonl => write_jsonl(args, &pairs)?,
        ExportFormat::Csv => write_csv(args, &pairs)?,
        ExportFormat::Pgm => write_pgm(args, &pairs)?,
    };
    println!(
        "exported {} step(s) of agent {} (steps {from}..={to}) to {}",
        pairs.len(),
        agent,
        written.display()
    );
    Ok(())
}
