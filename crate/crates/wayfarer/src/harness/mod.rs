//! Experiment orchestration: configs, policy training, split execution under
//! shuffled repeats, ablations, and report rendering.
//!
//! A run is fully deterministic given its config: environments, episodes,
//! shuffles, sessions, and adaptation all derive from config seeds, and all
//! work items execute through the order-preserving [`crate::exec`] facade, so
//! metrics CSVs are byte-identical across reruns and execution modes.

pub mod config;
pub mod report;
pub mod session;
pub mod train;

pub use config::{
    EnvSetup, ExperimentConfig, MemoryMode, SplitSpec, SplitStyle, TrainConfig,
};
pub use report::render_report;
pub use session::{
    run_session, sample_proportion_graph, MetricsRow, Session, SessionCheckpoint, SessionOutput,
    TrajectoryDump,
};
pub use train::{
    build_imitation_dataset, pretrain_finetune, teacher_forced_steps, train_from, train_policy,
    TrainStrategy,
};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapt::AdaptLogRow;
use crate::agent::PolicyParams;
use crate::episodes::{generate_episodes, Episode, EpisodeGenConfig, StyleBook};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{adaptation_slope, summarize, MeanStderr, DEFAULT_GROUP_SIZE};
use crate::seeds;
use crate::world::{generate_environment, NavGraph};

const NS_EPISODES: u64 = 80;
const NS_SHUFFLE: u64 = 81;
const NS_SESSION: u64 = 82;

/// Per-environment aggregate inside one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSummary {
    pub env_id: String,
    /// Mean success rate over repeats and episodes.
    pub sr: f64,
    /// Adaptation slope (group size 50) averaged over repeats; absent when
    /// the session is too short for slope analysis.
    pub slope: Option<f64>,
}

/// Aggregated results of one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub style: SplitStyle,
    pub env_count: usize,
    pub episodes_per_env: usize,
    pub repeats: usize,
    pub memory: MemoryMode,
    pub sr: MeanStderr,
    pub spl: MeanStderr,
    pub ndtw: MeanStderr,
    pub tl: MeanStderr,
    pub ne: MeanStderr,
    /// Split-level success rate of each repeat (the values `sr` summarizes).
    pub sr_per_repeat: Vec<f64>,
    pub per_env: Vec<EnvSummary>,
    /// Mean graph coverage by episode order index, across envs and repeats.
    pub coverage_curve: Vec<f64>,
    pub wall_seconds: f64,
}

/// Resolve the policy: explicit weights win; otherwise train the two-stage
/// recipe (full-graph pretraining, buffer fine-tuning) on the training
/// environments.
pub fn resolve_theta(config: &ExperimentConfig, book: &StyleBook) -> Result<PolicyParams> {
    if let Some(theta) = &config.theta {
        theta.validate()?;
        return Ok(theta.clone());
    }
    let train_envs = generate_envs(&config.train_envs, config.exec)?;
    let alpha = match config.memory {
        MemoryMode::Gr { alpha } => alpha,
        _ => 50,
    };
    pretrain_finetune(&train_envs, book, alpha, &config.train, config.train.seed)
}

fn generate_envs(setups: &[EnvSetup], mode: exec::ExecMode) -> Result<Vec<NavGraph>> {
    exec::map(mode, setups.to_vec(), |setup| {
        generate_environment(setup.seed, &setup.spec)
    })
    .into_iter()
    .collect()
}

/// Style and shuffle one environment's base episodes for a given repeat.
fn order_episodes(
    base: &[Episode],
    book: &StyleBook,
    split: &SplitSpec,
    persona_count: u32,
    shuffle_seed: u64,
) -> Result<Vec<Episode>> {
    let mut styled = Vec::with_capacity(base.len());
    for ep in base {
        let style = split.style.style_for(ep.episode_id, persona_count);
        let instruction = book.style_transform(&ep.instruction, style)?;
        styled.push(Episode { instruction, ..ep.clone() });
    }
    let mut order: Vec<usize> = (0..styled.len()).collect();
    order.shuffle(&mut seeds::stream(shuffle_seed, &[NS_SHUFFLE]));
    Ok(order.into_iter().map(|i| styled[i].clone()).collect())
}

struct SessionTask<'a> {
    env: &'a NavGraph,
    base: &'a [Episode],
    split_idx: usize,
    repeat: usize,
}

/// Run the full experiment: every split, every environment, every repeat.
/// Writes per-split artifacts under `config.out_dir` and returns the reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SplitReport>> {
    config.validate()?;
    let book = StyleBook::new(config.style_seed, config.persona_count);
    let eval_envs = generate_envs(&config.eval_envs, config.exec)?;
    let theta = resolve_theta(config, &book)?;

    let base_episodes: Vec<Vec<Episode>> = exec::map(config.exec, eval_envs.iter().collect(), |env| {
        generate_episodes(
            env,
            &EpisodeGenConfig {
                count: config.episodes_per_env,
                min_hops: config.min_hops,
                max_hops: config.max_hops,
                clause_dropout: config.clause_dropout,
                seed: seeds::mix(config.episode_seed, &[NS_EPISODES, env.rng_seed()]),
            },
        )
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let out_dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(Error::io(out_dir.display().to_string()))?;

    let mut reports = Vec::with_capacity(config.splits.len());
    for (split_idx, split) in config.splits.iter().enumerate() {
        let started = Instant::now();
        let mut tasks = Vec::new();
        for (env, base) in eval_envs.iter().zip(&base_episodes) {
            if env.spec().layout != split.layout {
                continue;
            }
            for repeat in 0..config.repeats {
                tasks.push(SessionTask { env, base, split_idx, repeat });
            }
        }
        let outputs: Vec<(String, usize, SessionOutput)> =
            exec::map(config.exec, tasks, |task| {
                let shuffle_seed = seeds::mix(
                    config.shuffle_seed,
                    &[task.split_idx as u64, task.env.rng_seed(), task.repeat as u64],
                );
                let episodes =
                    order_episodes(task.base, &book, split, config.persona_count, shuffle_seed)?;
                let session_seed = seeds::mix(
                    config.session_seed,
                    &[NS_SESSION, task.split_idx as u64, task.env.rng_seed(), task.repeat as u64],
                );
                let output = run_session(
                    task.env,
                    &book,
                    &episodes,
                    &theta,
                    config.memory,
                    &config.adapt,
                    config.step_limit,
                    session_seed,
                )?;
                Ok((task.env.env_id().to_string(), task.repeat, output))
            })
            .into_iter()
            .collect::<Result<_>>()?;

        let report = aggregate_split(config, split, &outputs, started.elapsed().as_secs_f64());
        write_split_artifacts(&out_dir, split, config.repeats, &outputs, &report)?;
        reports.push(report);
    }

    let mut resolved = config.clone();
    resolved.theta = Some(theta);
    resolved.save(&out_dir.join("experiment.json"))?;
    Ok(reports)
}

fn aggregate_split(
    config: &ExperimentConfig,
    split: &SplitSpec,
    outputs: &[(String, usize, SessionOutput)],
    wall_seconds: f64,
) -> SplitReport {
    // Split-level metric per repeat: mean over every episode row of that
    // repeat, then mean +- stderr across repeats.
    let mut per_repeat: Vec<[Vec<f64>; 5]> = vec![Default::default(); config.repeats];
    for (_, repeat, output) in outputs {
        let bucket = &mut per_repeat[*repeat];
        for row in &output.rows {
            bucket[0].push(row.metrics.success as f64);
            bucket[1].push(row.metrics.spl);
            bucket[2].push(row.metrics.ndtw);
            bucket[3].push(row.metrics.tl);
            bucket[4].push(row.metrics.ne);
        }
    }
    let repeat_means = |k: usize| -> Vec<f64> {
        per_repeat
            .iter()
            .map(|bucket| bucket[k].iter().sum::<f64>() / bucket[k].len().max(1) as f64)
            .collect()
    };

    // Per-environment success and slope, averaged over repeats.
    let mut env_ids: Vec<String> = outputs.iter().map(|(id, _, _)| id.clone()).collect();
    env_ids.dedup();
    let per_env = env_ids
        .iter()
        .map(|env_id| {
            let sessions: Vec<&SessionOutput> = outputs
                .iter()
                .filter(|(id, _, _)| id == env_id)
                .map(|(_, _, o)| o)
                .collect();
            let sr = sessions
                .iter()
                .flat_map(|o| o.successes.iter())
                .sum::<f64>()
                / sessions.iter().map(|o| o.successes.len()).sum::<usize>().max(1) as f64;
            let slopes: Vec<f64> = sessions
                .iter()
                .filter_map(|o| adaptation_slope(&o.successes, DEFAULT_GROUP_SIZE).ok())
                .collect();
            let slope = if slopes.is_empty() {
                None
            } else {
                Some(slopes.iter().sum::<f64>() / slopes.len() as f64)
            };
            EnvSummary { env_id: env_id.clone(), sr, slope }
        })
        .collect();

    // Coverage curve: element-wise mean across sessions.
    let mut coverage_curve = vec![0.0; config.episodes_per_env];
    let mut counts = vec![0usize; config.episodes_per_env];
    for (_, _, output) in outputs {
        for (i, &c) in output.coverage.iter().enumerate() {
            coverage_curve[i] += c;
            counts[i] += 1;
        }
    }
    for (c, n) in coverage_curve.iter_mut().zip(&counts) {
        if *n > 0 {
            *c /= *n as f64;
        }
    }

    let sr_per_repeat = repeat_means(0);
    SplitReport {
        split: split.name.clone(),
        style: split.style,
        env_count: env_ids.len(),
        episodes_per_env: config.episodes_per_env,
        repeats: config.repeats,
        memory: config.memory,
        sr: summarize(&sr_per_repeat),
        spl: summarize(&repeat_means(1)),
        ndtw: summarize(&repeat_means(2)),
        tl: summarize(&repeat_means(3)),
        ne: summarize(&repeat_means(4)),
        sr_per_repeat,
        per_env,
        coverage_curve,
        wall_seconds,
    }
}

fn write_split_artifacts(
    out_dir: &Path,
    split: &SplitSpec,
    repeats: usize,
    outputs: &[(String, usize, SessionOutput)],
    report: &SplitReport,
) -> Result<()> {
    let dir = out_dir.join(&split.name);
    std::fs::create_dir_all(&dir).map_err(Error::io(dir.display().to_string()))?;

    for repeat in 0..repeats {
        let path = dir.join(format!("metrics_r{repeat}.csv"));
        let mut text = String::from(MetricsRow::csv_header());
        text.push('\n');
        for (_, r, output) in outputs.iter().filter(|(_, r, _)| *r == repeat) {
            debug_assert_eq!(*r, repeat);
            for row in &output.rows {
                text.push_str(&row.to_csv());
                text.push('\n');
            }
        }
        std::fs::write(&path, text).map_err(Error::io(path.display().to_string()))?;

        let path = dir.join(format!("trajectories_r{repeat}.jsonl"));
        let file = std::fs::File::create(&path).map_err(Error::io(path.display().to_string()))?;
        let mut w = std::io::BufWriter::new(file);
        for (_, _, output) in outputs.iter().filter(|(_, r, _)| *r == repeat) {
            for t in &output.trajectories {
                let line =
                    serde_json::to_string(t).map_err(Error::json(path.display().to_string()))?;
                writeln!(w, "{line}").map_err(Error::io(path.display().to_string()))?;
            }
        }
    }

    let path = dir.join("coverage.csv");
    let mut text = String::from("env_id,repeat,episode_order,coverage\n");
    for (env_id, repeat, output) in outputs {
        for (i, c) in output.coverage.iter().enumerate() {
            text.push_str(&format!("{env_id},{repeat},{i},{c:.6}\n"));
        }
    }
    std::fs::write(&path, text).map_err(Error::io(path.display().to_string()))?;

    let path = dir.join("adapt_log.csv");
    let mut text = format!("env_id,repeat,{}\n", AdaptLogRow::csv_header());
    for (env_id, repeat, output) in outputs {
        for row in &output.adapt_log {
            text.push_str(&format!("{env_id},{repeat},{}\n", row.to_csv()));
        }
    }
    std::fs::write(&path, text).map_err(Error::io(path.display().to_string()))?;

    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(report).expect("report json");
    std::fs::write(&path, text).map_err(Error::io(path.display().to_string()))?;
    Ok(())
}

/// Which knob an ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Buffer threshold sweep over {1, 50, 100, 150}.
    Alpha,
    /// Ground-truth fraction sweep over {0.25, 0.50, 0.75, 1.00}.
    Proportion,
}

impl AblationAxis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AblationAxis::Alpha => vec![1.0, 50.0, 100.0, 150.0],
            AblationAxis::Proportion => vec![0.25, 0.50, 0.75, 1.00],
        }
    }

    fn memory_for(&self, value: f64) -> MemoryMode {
        match self {
            AblationAxis::Alpha => MemoryMode::Gr { alpha: value as usize },
            AblationAxis::Proportion => MemoryMode::Proportion { p: value },
        }
    }
}

/// One ablation row: the axis value and its split-level numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub memory: MemoryMode,
    pub splits: Vec<SplitReport>,
    /// SR pooled over all splits, per repeat, then summarized.
    pub overall_sr: MeanStderr,
}

/// Side-by-side comparison over one ablation axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

/// Run the experiment once per axis value, holding everything else fixed.
pub fn ablate(config: &ExperimentConfig, axis: AblationAxis) -> Result<AblationReport> {
    config.validate()?;
    let out_root = PathBuf::from(&config.out_dir);
    let mut rows = Vec::new();
    for value in axis.values() {
        let mut cfg = config.clone();
        cfg.memory = axis.memory_for(value);
        let tag = match axis {
            AblationAxis::Alpha => format!("ablate-alpha-{}", value as usize),
            AblationAxis::Proportion => format!("ablate-proportion-{value:.2}"),
        };
        cfg.out_dir = out_root.join(&tag).display().to_string();
        let splits = run_experiment(&cfg)?;
        let per_repeat: Vec<f64> = (0..cfg.repeats)
            .map(|r| {
                let vals: Vec<f64> = splits.iter().map(|s| s.sr_per_repeat[r]).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect();
        rows.push(AblationRow {
            value,
            memory: cfg.memory,
            overall_sr: summarize(&per_repeat),
            splits,
        });
    }

    let report = AblationReport { axis, rows };
    std::fs::create_dir_all(&out_root).map_err(Error::io(out_root.display().to_string()))?;
    let path = out_root.join("ablation.json");
    let text = serde_json::to_string_pretty(&report).expect("ablation json");
    std::fs::write(&path, text).map_err(Error::io(path.display().to_string()))?;

    let path = out_root.join("ablation.csv");
    let mut text = String::from("axis,value,split,sr_mean,sr_stderr,spl_mean,spl_stderr\n");
    for row in &report.rows {
        for split in &row.splits {
            text.push_str(&format!(
                "{:?},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                report.axis, row.value, split.split, split.sr.mean, split.sr.stderr,
                split.spl.mean, split.spl.stderr
            ));
        }
    }
    std::fs::write(&path, text).map_err(Error::io(path.display().to_string()))?;
    Ok(report)
}
