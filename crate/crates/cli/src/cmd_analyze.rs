//! `analyze`: pool feature windows from finished runs, compare style
//! distributions pairwise with Wasserstein distances, and measure style
//! separability with a k-NN classifier when at least two labels exist.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::common::{style_label, Failure, RunManifest};
use stylesim::metrics::{feature_windows, macro_f1, wasserstein_1d, FeatureVector, KnnClassifier};
use stylesim::runtime::log::TrajectoryLog;

pub struct AnalyzeArgs {
    pub manifests: Vec<PathBuf>,
    pub out: PathBuf,
    pub window: usize,
    pub stride: usize,
    pub knn_k: usize,
}

pub const FEATURE_NAMES: [&str; 7] = [
    "mean_speed",
    "std_speed",
    "mean_abs_accel",
    "max_abs_accel",
    "heading_change_rate",
    "mean_time_headway",
    "lateral_offset_rms",
];

struct LabeledWindow {
    run_id: String,
    agent_id: String,
    label: String,
    window_index: usize,
    features: FeatureVector,
}

fn collect_windows(args: &AnalyzeArgs) -> Result<Vec<LabeledWindow>, Failure> {
    let mut windows = Vec::new();
    let mut schema: Option<u32> = None;
    for path in &args.manifests {
        let (manifest, dir) = RunManifest::load(path)?;
        match schema {
            None => schema = Some(manifest.schema_version),
            Some(v) if v != manifest.schema_version => {
                return Err(Failure::Domain(format!(
                    "mixed log schema versions: {} vs {} ({})",
                    v,
                    manifest.schema_version,
                    path.display()
                )));
            }
            Some(_) => {}
        }
        let log_path = manifest.log_path(&dir);
        let log = TrajectoryLog::load(&log_path)
            .map_err(|e| Failure::Domain(format!("log {}: {e}", log_path.display())))?;
        if log.digest() != manifest.log_digest {
            return Err(Failure::Domain(format!(
                "log digest mismatch for {}: log file was modified after the run",
                manifest.run_id
            )));
        }
        for agent in &log.header.run_config.scenario.agents {
            let label = style_label(&agent.style);
            for (i, features) in feature_windows(&log, &agent.id, args.window, args.stride)
                .into_iter()
                .enumerate()
            {
                windows.push(LabeledWindow {
                    run_id: manifest.run_id.clone(),
                    agent_id: agent.id.clone(),
                    label: label.clone(),
                    window_index: i,
                    features,
                });
            }
        }
    }
    Ok(windows)
}

fn write_features_csv(path: &Path, windows: &[LabeledWindow]) -> Result<(), Failure> {
    let mut text = String::from("run_id,agent_id,label,window_index");
    for name in FEATURE_NAMES {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for w in windows {
        let _ = write!(
            text,
            "{},{},{},{}",
            w.run_id, w.agent_id, w.label, w.window_index
        );
        for v in w.features.to_array() {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Failure::io("writing features.csv", e))
}

/// Pairwise per-feature Wasserstein distances in long form.
fn write_wasserstein_csv(
    path: &Path,
    by_label: &BTreeMap<String, Vec<&LabeledWindow>>,
) -> Result<String, Failure> {
    let labels: Vec<&String> = by_label.keys().collect();
    let mut text = String::from("feature,label_a,label_b,distance\n");
    let mut headway_table = String::new();
    let _ = writeln!(
        headway_table,
        "pairwise mean_time_headway Wasserstein distances:"
    );
    let _ = write!(headway_table, "  {:<22}", "");
    for l in &labels {
        let _ = write!(headway_table, " {l:>12}");
    }
    headway_table.push('\n');

    for (fi, fname) in FEATURE_NAMES.iter().enumerate() {
        for a in &labels {
            if *fname == "mean_time_headway" {
                let _ = write!(headway_table, "  {a:<22}");
            }
            for b in &labels {
                let xs: Vec<f64> = by_label[*a].iter().map(|w| w.features.to_array()[fi]).collect();
                let ys: Vec<f64> = by_label[*b].iter().map(|w| w.features.to_array()[fi]).collect();
                let d = wasserstein_1d(&xs, &ys);
                let _ = writeln!(text, "{fname},{a},{b},{d:.6}");
                if *fname == "mean_time_headway" {
                    let _ = write!(headway_table, " {d:>12.4}");
                }
            }
            if *fname == "mean_time_headway" {
                headway_table.push('\n');
            }
        }
    }
    std::fs::write(path, text).map_err(|e| Failure::io("writing wasserstein.csv", e))?;
    Ok(headway_table)
}

#[derive(Serialize)]
struct SeparabilityReport {
    labels: Vec<String>,
    k: usize,
    train_windows: usize,
    test_windows: usize,
    macro_f1: f64,
}

/// Alternate windows per label into train and test halves.
fn separability(
    by_label: &BTreeMap<String, Vec<&LabeledWindow>>,
    k: usize,
) -> Option<SeparabilityReport> {
    if by_label.len() < 2 {
        return None;
    }
    let mut train: Vec<(FeatureVector, String)> = Vec::new();
    let mut test: Vec<(FeatureVector, String)> = Vec::new();
    for (label, group) in by_label {
        for (i, w) in group.iter().enumerate() {
            let pair = (w.features.clone(), label.clone());
            if i % 2 == 0 {
                train.push(pair);
            } else {
                test.push(pair);
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        return None;
    }
    let classifier = KnnClassifier::fit(k, &train);
    let truth: Vec<String> = test.iter().map(|(_, l)| l.clone()).collect();
    let predicted: Vec<String> = test.iter().map(|(f, _)| classifier.predict(f)).collect();
    Some(SeparabilityReport {
        labels: by_label.keys().cloned().collect(),
        k,
        train_windows: train.len(),
        test_windows: test.len(),
        macro_f1: macro_f1(&truth, &predicted),
    })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    if args.manifests.is_empty() {
        return Err(Failure::Domain("analyze needs at least one manifest".to_string()));
    }
    let windows = collect_windows(args)?;
    if windows.is_empty() {
        return Err(Failure::Domain(
            "no feature windows: logs shorter than the window size".to_string(),
        ));
    }

    std::fs::create_dir_all(&args.out).map_err(|e| Failure::io("creating analysis dir", e))?;

    let mut by_label: BTreeMap<String, Vec<&LabeledWindow>> = BTreeMap::new();
    for w in &windows {
        by_label.entry(w.label.clone()).or_default().push(w);
    }

    write_features_csv(&args.out.join("features.csv"), &windows)?;
    let headway_table = write_wasserstein_csv(&args.out.join("wasserstein.csv"), &by_label)?;

    println!(
        "analyzed {} windows across {} label(s): {}",
        windows.len(),
        by_label.len(),
        by_label.keys().cloned().collect::<Vec<_>>().join(", ")
    );
    print!("{headway_table}");

    match separability(&by_label, args.knn_k) {
        Some(report) => {
            println!(
                "style separability: macro F1 {:.4} ({} train / {} test windows, k={})",
                report.macro_f1, report.train_windows, report.test_windows, report.k
            );
            std::fs::write(
                args.out.join("separability.json"),
                serde_json::to_string_pretty(&report).expect("report serialises"),
            )
            .map_err(|e| Failure::io("writing separability.json", e))?;
        }
        None => {
            println!("insufficient labels for a separability report (need >= 2 styles)");
        }
    }
    println!("artifacts under {}", args.out.display());
    Ok(())
}
