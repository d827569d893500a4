//! Command-line harness: environment/episode generation, policy training,
//! experiment runs, ablations, and report rendering.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wayfarer::adapt::Strategy;
use wayfarer::agent::PolicyParams;
use wayfarer::episodes::{
    generate_episodes, save_episodes, save_vocabulary, EpisodeGenConfig, Style, StyleBook,
};
use wayfarer::exec::ExecMode;
use wayfarer::harness::{
    ablate, pretrain_finetune, render_report, resolve_theta, run_experiment, AblationAxis,
    ExperimentConfig, MemoryMode, TrainStrategy,
};
use wayfarer::seeds;
use wayfarer::world::{generate_environment, EnvSpec, Layout, NavGraph};

#[derive(Parser)]
#[command(
    name = "wayfarer",
    version,
    about = "Persistent-scene navigation simulator and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic environment and write it as JSON.
    GenEnv(GenEnvArgs),
    /// Sample reference paths and write styled episodes as JSON Lines.
    GenEpisodes(GenEpisodesArgs),
    /// Train the linear policy and write its weights as JSON.
    Train(TrainArgs),
    /// Run the configured experiment (all splits, repeats, artifacts).
    Run(RunArgs),
    /// Sweep one ablation axis and emit a side-by-side comparison.
    Ablate(AblateArgs),
    /// Render markdown + CSV tables from a completed run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    ResidentialGrid,
    NonresidentialHall,
}

impl From<LayoutArg> for Layout {
    fn from(value: LayoutArg) -> Layout {
        match value {
            LayoutArg::ResidentialGrid => Layout::ResidentialGrid,
            LayoutArg::NonresidentialHall => Layout::NonresidentialHall,
        }
    }
}

#[derive(Args)]
struct GenEnvArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 36)]
    nodes: usize,
    #[arg(long, value_enum, default_value = "residential-grid")]
    layout: LayoutArg,
    #[arg(long, default_value_t = 2.25)]
    mean_edge: f64,
    #[arg(long, default_value_t = 64)]
    vocab: u32,
    #[arg(long, default_value_t = 0.0)]
    dup: f64,
    #[arg(long, default_value_t = 36)]
    views: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Basic,
    Scene,
    User,
}

#[derive(Args)]
struct GenEpisodesArgs {
    /// Environment JSON produced by gen-env.
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = 600)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    min_hops: usize,
    #[arg(long, default_value_t = 7)]
    max_hops: usize,
    /// Probability of dropping each hop clause from the instruction.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    #[arg(long, value_enum, default_value = "basic")]
    style: StyleArg,
    /// Fixed persona for user style; defaults to rotating over all personas.
    #[arg(long)]
    persona: Option<u32>,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    style_seed: u64,
    #[arg(long, default_value_t = 5)]
    personas: u32,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary sidecar path; defaults to <out>.vocab.json.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    EmptyGraph,
    FullGraph,
    Buffer,
    /// Full-graph pretraining followed by buffer fine-tuning.
    Recipe,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config supplying training environments and knobs.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "recipe")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 50)]
    alpha: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "theta.json")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; defaults to the desk-scale suite.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override; re-derives episode, shuffle, session, and style
    /// seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Use buffered global-graph memory with this threshold.
    #[arg(long)]
    alpha: Option<usize>,
    /// Use proportion-mode memory with this ground-truth fraction.
    #[arg(long)]
    proportion: Option<f64>,
    /// Disable cross-episode memory entirely.
    #[arg(long)]
    no_memory: bool,
    /// Adaptation strategy: none, tent, sar, back_translation, mlm.
    #[arg(long)]
    adapt: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Episodes per environment.
    #[arg(long)]
    episodes: Option<usize>,
    /// Trained policy weights JSON (from `wayfarer train`).
    #[arg(long)]
    theta: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force single-threaded execution.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Alpha,
    Proportion,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    theta: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding a completed run's artifacts.
    #[arg(long)]
    dir: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenEnv(args) => gen_env(args),
        Command::GenEpisodes(args) => gen_episodes(args),
        Command::Train(args) => train(args),
        Command::Run(args) => run(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Report(args) => report(args),
    }
}

fn gen_env(args: GenEnvArgs) -> Result<()> {
    let spec = EnvSpec {
        node_count: args.nodes,
        layout: args.layout.into(),
        mean_edge_length: args.mean_edge,
        landmark_vocab_size: args.vocab,
        landmark_duplication_rate: args.dup,
        view_count: args.views,
        feature_dim: args.dim,
    };
    let graph = generate_environment(args.seed, &spec)?;
    graph.save(&args.out)?;
    eprintln!(
        "wrote {} ({} nodes, {} edges) to {}",
        graph.env_id(),
        graph.node_count(),
        graph.edges().len(),
        args.out.display()
    );
    Ok(())
}

fn gen_episodes(args: GenEpisodesArgs) -> Result<()> {
    let graph = NavGraph::load(&args.env)
        .with_context(|| format!("loading environment {}", args.env.display()))?;
    let base = generate_episodes(
        &graph,
        &EpisodeGenConfig {
            count: args.count,
            min_hops: args.min_hops,
            max_hops: args.max_hops,
            clause_dropout: args.dropout,
            seed: args.seed,
        },
    )?;
    let book = StyleBook::new(args.style_seed, args.personas);
    let episodes: Vec<_> = base
        .into_iter()
        .map(|ep| {
            let style = match args.style {
                StyleArg::Basic => Style::Basic,
                StyleArg::Scene => Style::Scene,
                StyleArg::User => Style::User(
                    args.persona
                        .unwrap_or((ep.episode_id % args.personas as u64) as u32),
                ),
            };
            let instruction = book.style_transform(&ep.instruction, style)?;
            Ok(wayfarer::episodes::Episode { instruction, ..ep })
        })
        .collect::<wayfarer::Result<_>>()?;
    save_episodes(&args.out, &episodes)?;
    let vocab_out = args.vocab_out.unwrap_or_else(|| {
        let mut p = args.out.clone();
        p.set_extension("vocab.json");
        p
    });
    save_vocabulary(&vocab_out, &book, graph.spec().landmark_vocab_size)?;
    eprintln!(
        "wrote {} episodes to {} (vocabulary: {})",
        episodes.len(),
        args.out.display(),
        vocab_out.display()
    );
    Ok(())
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let book = StyleBook::new(config.style_seed, config.persona_count);
    let envs: Vec<NavGraph> = config
        .train_envs
        .iter()
        .map(|s| generate_environment(s.seed, &s.spec))
        .collect::<wayfarer::Result<_>>()?;
    if envs.is_empty() {
        bail!("config has no training environments");
    }
    let theta = match args.strategy {
        StrategyArg::Recipe => {
            pretrain_finetune(&envs, &book, args.alpha, &config.train, config.train.seed)?
        }
        StrategyArg::EmptyGraph => wayfarer::harness::train_policy(
            &envs,
            &book,
            TrainStrategy::EmptyGraph,
            &config.train,
            config.train.seed,
        )?,
        StrategyArg::FullGraph => wayfarer::harness::train_policy(
            &envs,
            &book,
            TrainStrategy::FullGraph,
            &config.train,
            config.train.seed,
        )?,
        StrategyArg::Buffer => wayfarer::harness::train_policy(
            &envs,
            &book,
            TrainStrategy::Buffer { alpha: args.alpha },
            &config.train,
            config.train.seed,
        )?,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&theta)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("wrote trained weights to {}", args.out.display());
    Ok(())
}

fn apply_overrides(config: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        config.episode_seed = seeds::mix(seed, &[1]);
        config.shuffle_seed = seeds::mix(seed, &[2]);
        config.session_seed = seeds::mix(seed, &[3]);
        config.style_seed = seeds::mix(seed, &[4]);
    }
    match (args.alpha, args.proportion, args.no_memory) {
        (Some(_), Some(_), _) => bail!("--alpha and --proportion are mutually exclusive"),
        (Some(_), _, true) | (_, Some(_), true) => {
            bail!("--no-memory conflicts with --alpha/--proportion")
        }
        (Some(alpha), None, false) => config.memory = MemoryMode::Gr { alpha },
        (None, Some(p), false) => config.memory = MemoryMode::Proportion { p },
        (None, None, true) => config.memory = MemoryMode::None,
        (None, None, false) => {}
    }
    if let Some(adapt) = &args.adapt {
        config.adapt.strategy = match adapt.as_str() {
            "none" => Strategy::None,
            "tent" => Strategy::Tent,
            "sar" => Strategy::Sar,
            "back_translation" | "bt" => Strategy::BackTranslation,
            "mlm" => Strategy::Mlm,
            other => bail!("unknown adaptation strategy '{other}'"),
        };
    }
    if let Some(repeats) = args.repeats {
        config.repeats = repeats;
    }
    if let Some(episodes) = args.episodes {
        config.episodes_per_env = episodes;
    }
    if let Some(theta) = &args.theta {
        let text = std::fs::read_to_string(theta)
            .with_context(|| format!("reading {}", theta.display()))?;
        config.theta = Some(serde_json::from_str::<PolicyParams>(&text)?);
    }
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    if args.sequential {
        config.exec = ExecMode::Sequential;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, &args)?;
    if config.theta.is_none() {
        eprintln!("no trained weights supplied; training on the configured environments...");
        let book = StyleBook::new(config.style_seed, config.persona_count);
        config.theta = Some(resolve_theta(&config, &book)?);
    }
    let reports = run_experiment(&config)?;
    for r in &reports {
        eprintln!(
            "{}: SR {:.3} +- {:.3}  SPL {:.3}  nDTW {:.3}  ({} envs x {} episodes x {} repeats, {:.1}s)",
            r.split,
            r.sr.mean,
            r.sr.stderr,
            r.spl.mean,
            r.ndtw.mean,
            r.env_count,
            r.episodes_per_env,
            r.repeats,
            r.wall_seconds
        );
    }
    render_report(std::path::Path::new(&config.out_dir))?;
    eprintln!("report written to {}/report.md", config.out_dir);
    Ok(())
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let run_args = RunArgs {
        config: args.config.clone(),
        seed: args.seed,
        alpha: None,
        proportion: None,
        no_memory: false,
        adapt: None,
        repeats: args.repeats,
        episodes: args.episodes,
        theta: args.theta.clone(),
        out: args.out.clone(),
        sequential: args.sequential,
    };
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, &run_args)?;
    if config.theta.is_none() {
        eprintln!("no trained weights supplied; training on the configured environments...");
        let book = StyleBook::new(config.style_seed, config.persona_count);
        config.theta = Some(resolve_theta(&config, &book)?);
    }
    let axis = match args.axis {
        AxisArg::Alpha => AblationAxis::Alpha,
        AxisArg::Proportion => AblationAxis::Proportion,
    };
    let report = ablate(&config, axis)?;
    eprintln!("axis {:?}:", report.axis);
    for row in &report.rows {
        eprintln!(
            "  {} = {:<6} overall SR {:.4} +- {:.4}",
            match report.axis {
                AblationAxis::Alpha => "alpha",
                AblationAxis::Proportion => "p",
            },
            row.value,
            row.overall_sr.mean,
            row.overall_sr.stderr
        );
    }
    eprintln!("tables written under {}", config.out_dir);
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let md = render_report(&args.dir)?;
    println!("{md}");
    Ok(())
}
