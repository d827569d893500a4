//! Render completed experiment artifacts into markdown and CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::DEFAULT_GROUP_SIZE;

use super::config::ExperimentConfig;
use super::SplitReport;

/// Read the artifacts under `out_dir` and render the summary report.
///
/// Expects `experiment.json` plus one `summary.json` per configured split;
/// errors list every missing file. Writes `report.md` and `summary_table.csv`
/// into `out_dir` and returns the markdown.
pub fn render_report(out_dir: &Path) -> Result<String> {
    let config_path = out_dir.join("experiment.json");
    if !config_path.exists() {
        return Err(Error::MissingArtifacts(vec![config_path.display().to_string()]));
    }
    let config = ExperimentConfig::load(&config_path)?;

    let mut missing = Vec::new();
    let mut reports: Vec<SplitReport> = Vec::new();
    for split in &config.splits {
        let path = out_dir.join(&split.name).join("summary.json");
        if !path.exists() {
            missing.push(path.display().to_string());
            continue;
        }
        let text =
            std::fs::read_to_string(&path).map_err(Error::io(path.display().to_string()))?;
        reports.push(
            serde_json::from_str(&text).map_err(Error::json(path.display().to_string()))?,
        );
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }

    let mut md = String::new();
    writeln!(md, "# Experiment `{}`", config.name).unwrap();
    writeln!(md).unwrap();
    writeln!(
        md,
        "memory mode {}, adaptation {}, {} episodes/env, {} repeats",
        config.memory, config.adapt.strategy, config.episodes_per_env, config.repeats
    )
    .unwrap();
    writeln!(md).unwrap();
    writeln!(md, "## Metrics (mean ± stderr over repeats)").unwrap();
    writeln!(md).unwrap();
    writeln!(md, "| Split | SR | SPL | nDTW | TL (m) | NE (m) |").unwrap();
    writeln!(md, "|---|---|---|---|---|---|").unwrap();
    for r in &reports {
        writeln!(
            md,
            "| {} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} | {:.2} ± {:.2} | {:.2} ± {:.2} |",
            r.split,
            r.sr.mean, r.sr.stderr,
            r.spl.mean, r.spl.stderr,
            r.ndtw.mean, r.ndtw.stderr,
            r.tl.mean, r.tl.stderr,
            r.ne.mean, r.ne.stderr,
        )
        .unwrap();
    }

    writeln!(md).unwrap();
    writeln!(md, "## Graph coverage").unwrap();
    writeln!(md).unwrap();
    writeln!(md, "| Split | ep 1 | 25% | 50% | 75% | final |").unwrap();
    writeln!(md, "|---|---|---|---|---|---|").unwrap();
    for r in &reports {
        let curve = &r.coverage_curve;
        let at = |f: f64| curve[(((curve.len() - 1) as f64) * f) as usize];
        writeln!(
            md,
            "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |",
            r.split,
            curve.first().copied().unwrap_or(0.0),
            at(0.25),
            at(0.5),
            at(0.75),
            curve.last().copied().unwrap_or(0.0),
        )
        .unwrap();
    }

    writeln!(md).unwrap();
    writeln!(md, "## Adaptation slopes (groups of {DEFAULT_GROUP_SIZE})").unwrap();
    writeln!(md).unwrap();
    writeln!(md, "| Split | mean slope | envs positive | envs total |").unwrap();
    writeln!(md, "|---|---|---|---|").unwrap();
    for r in &reports {
        let slopes: Vec<f64> = r.per_env.iter().filter_map(|e| e.slope).collect();
        let mean = if slopes.is_empty() {
            f64::NAN
        } else {
            slopes.iter().sum::<f64>() / slopes.len() as f64
        };
        let positive = slopes.iter().filter(|&&s| s > 0.0).count();
        writeln!(
            md,
            "| {} | {:+.4} | {} | {} |",
            r.split, mean, positive, r.per_env.len()
        )
        .unwrap();
    }

    writeln!(md).unwrap();
    writeln!(md, "## Wall clock").unwrap();
    writeln!(md).unwrap();
    for r in &reports {
        writeln!(md, "- {}: {:.2} s", r.split, r.wall_seconds).unwrap();
    }

    let report_path = out_dir.join("report.md");
    std::fs::write(&report_path, &md).map_err(Error::io(report_path.display().to_string()))?;

    let mut csv = String::from(
        "split,sr_mean,sr_stderr,spl_mean,spl_stderr,ndtw_mean,ndtw_stderr,tl_mean,tl_stderr,ne_mean,ne_stderr\n",
    );
    for r in &reports {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.split,
            r.sr.mean, r.sr.stderr,
            r.spl.mean, r.spl.stderr,
            r.ndtw.mean, r.ndtw.stderr,
            r.tl.mean, r.tl.stderr,
            r.ne.mean, r.ne.stderr,
        ));
    }
    let csv_path = out_dir.join("summary_table.csv");
    std::fs::write(&csv_path, csv).map_err(Error::io(csv_path.display().to_string()))?;

    Ok(md)
}
