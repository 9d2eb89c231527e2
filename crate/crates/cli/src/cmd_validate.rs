//! `validate`: full schema and referential validation without running.

use std::path::Path;

use crate::common::Failure;
use stylesim::runtime::config::{apply_overrides, RunConfig, ScenarioConfig};
use stylesim::map::RoadMap;

/// Load a scenario with overrides but *without* the fail-fast validation
/// that `ScenarioConfig::load` performs, so every problem can be listed.
pub fn load_unvalidated(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(&format!("reading {}", path.display()), e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Domain(format!("scenario parse error: {e}")))?;
    apply_overrides(&mut value, overrides).map_err(|e| Failure::Domain(e.to_string()))?;
    let scenario: ScenarioConfig = serde_json::from_value(value)
        .map_err(|e| Failure::Domain(format!("scenario parse error: {e}")))?;

    let map_path = {
        let p = Path::new(&scenario.map);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            path.parent().unwrap_or(Path::new(".")).join(p)
        }
    };
    let map_text = std::fs::read_to_string(&map_path)
        .map_err(|e| Failure::io(&format!("reading map {}", map_path.display()), e))?;
    let road_map = RoadMap::from_json(&map_text)
        .map_err(|e| Failure::Domain(format!("map parse error: {e}")))?;
    let run_seed = scenario.default_seed;
    Ok(RunConfig {
        scenario,
        road_map,
        run_seed,
    })
}

pub fn cmd_validate(path: &Path, overrides: &[(String, String)]) -> Result<(), Failure> {
    let cfg = load_unvalidated(path, overrides)?;
    let errors = cfg.validate_all();
    if errors.is_empty() {
        println!(
            "ok: scenario '{}' with map '{}' ({} agents, {} steps, digest {})",
            cfg.scenario.name,
            cfg.road_map.name,
            cfg.scenario.agents.len(),
            cfg.scenario.max_steps,
            &cfg.digest()[..12],
        );
        return Ok(());
    }
    let mut report = format!("{} validation error(s):\n", errors.len());
    for err in &errors {
        report.push_str(&format!("  - {err}\n"));
    }
    Err(Failure::Domain(report.trim_end().to_string()))
}
