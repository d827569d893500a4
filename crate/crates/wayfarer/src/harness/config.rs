//! Experiment configuration: environments, splits, memory modes, defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptConfig;
use crate::agent::PolicyParams;
use crate::episodes::Style;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::world::{EnvSpec, Layout};

/// One environment to generate: a seed plus its spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSetup {
    pub seed: u64,
    pub spec: EnvSpec,
}

/// How instructions of a split are styled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStyle {
    Basic,
    Scene,
    /// Personas rotate round-robin over episodes.
    User,
}

impl SplitStyle {
    /// Concrete style for one episode.
    pub fn style_for(&self, episode_id: u64, persona_count: u32) -> Style {
        match self {
            SplitStyle::Basic => Style::Basic,
            SplitStyle::Scene => Style::Scene,
            SplitStyle::User => Style::User((episode_id % persona_count.max(1) as u64) as u32),
        }
    }
}

impl std::fmt::Display for SplitStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitStyle::Basic => write!(f, "basic"),
            SplitStyle::Scene => write!(f, "scene"),
            SplitStyle::User => write!(f, "user"),
        }
    }
}

/// One evaluation split: a name, the layout family it draws environments
/// from, and the instruction style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub layout: Layout,
    pub style: SplitStyle,
}

/// How the agent's map persists across episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MemoryMode {
    /// No cross-episode map; every episode starts blank.
    None,
    /// Global graph accumulated from the memory bank, re-initialized every
    /// `alpha` episodes.
    Gr { alpha: usize },
    /// A random connected fraction `p` of the ground-truth graph, resampled
    /// each episode.
    Proportion { p: f64 },
}

impl MemoryMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            MemoryMode::None => Ok(()),
            MemoryMode::Gr { alpha } if *alpha >= 1 => Ok(()),
            MemoryMode::Gr { .. } => Err(Error::InvalidConfig("gr alpha must be >= 1".into())),
            MemoryMode::Proportion { p } if (0.0..=1.0).contains(p) => Ok(()),
            MemoryMode::Proportion { .. } => {
                Err(Error::InvalidConfig("proportion p must be in [0,1]".into()))
            }
        }
    }
}

impl std::fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MemoryMode::None => write!(f, "none"),
            MemoryMode::Gr { alpha } => write!(f, "gr({alpha})"),
            MemoryMode::Proportion { p } => write!(f, "proportion({p})"),
        }
    }
}

/// Policy-training knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Imitation episodes generated per training environment.
    pub episodes_per_env: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    /// Clause dropout of training instructions; matches the evaluation
    /// distribution.
    pub clause_dropout: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub step_limit: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes_per_env: 120,
            min_hops: 4,
            max_hops: 7,
            clause_dropout: 0.3,
            learning_rate: 0.5,
            iterations: 200,
            step_limit: 15,
            seed: 4242,
        }
    }
}

/// Full experiment description. A single JSON document; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub eval_envs: Vec<EnvSetup>,
    pub train_envs: Vec<EnvSetup>,
    pub splits: Vec<SplitSpec>,
    pub episodes_per_env: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    /// Fraction of hop clauses dropped from instructions (noisy instructions
    /// leave waypoint gaps that reward long-term memory).
    pub clause_dropout: f64,
    pub memory: MemoryMode,
    pub adapt: AdaptConfig,
    pub repeats: usize,
    pub step_limit: usize,
    pub episode_seed: u64,
    pub shuffle_seed: u64,
    pub session_seed: u64,
    pub style_seed: u64,
    pub persona_count: u32,
    pub train: TrainConfig,
    /// Pre-trained scorer weights; when absent the harness trains a policy
    /// from `train_envs` (full-graph pretraining, then buffer fine-tuning).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<PolicyParams>,
    pub exec: ExecMode,
    pub out_dir: String,
}

fn desk_env(seed: u64, layout: Layout, node_count: usize) -> EnvSetup {
    EnvSetup {
        seed,
        spec: EnvSpec {
            node_count,
            layout,
            landmark_vocab_size: 64,
            ..EnvSpec::default()
        },
    }
}

impl Default for ExperimentConfig {
    /// The desk-scale suite: 12 evaluation environments (6 per layout,
    /// 25-60 nodes), 8 disjoint training environments, 600 episodes per
    /// environment, 3 repeats, five styled splits.
    fn default() -> Self {
        let grid = Layout::ResidentialGrid;
        let hall = Layout::NonresidentialHall;
        let eval_envs = vec![
            desk_env(101, grid, 25),
            desk_env(102, grid, 30),
            desk_env(103, grid, 36),
            desk_env(104, grid, 42),
            desk_env(105, grid, 49),
            desk_env(106, grid, 56),
            desk_env(201, hall, 28),
            desk_env(202, hall, 34),
            desk_env(203, hall, 40),
            desk_env(204, hall, 46),
            desk_env(205, hall, 52),
            desk_env(206, hall, 60),
        ];
        let train_envs = vec![
            desk_env(901, grid, 25),
            desk_env(902, grid, 36),
            desk_env(903, grid, 49),
            desk_env(904, grid, 56),
            desk_env(911, hall, 30),
            desk_env(912, hall, 40),
            desk_env(913, hall, 50),
            desk_env(914, hall, 60),
        ];
        let splits = vec![
            SplitSpec { name: "R-Basic".into(), layout: grid, style: SplitStyle::Basic },
            SplitSpec { name: "N-Basic".into(), layout: hall, style: SplitStyle::Basic },
            SplitSpec { name: "R-User".into(), layout: grid, style: SplitStyle::User },
            SplitSpec { name: "N-User".into(), layout: hall, style: SplitStyle::User },
            SplitSpec { name: "N-Scene".into(), layout: hall, style: SplitStyle::Scene },
        ];
        ExperimentConfig {
            name: "desk".into(),
            eval_envs,
            train_envs,
            splits,
            episodes_per_env: 600,
            min_hops: 4,
            max_hops: 7,
            clause_dropout: 0.3,
            memory: MemoryMode::Gr { alpha: 50 },
            adapt: AdaptConfig::default(),
            repeats: 3,
            step_limit: 15,
            episode_seed: 13,
            shuffle_seed: 17,
            session_seed: 23,
            style_seed: 7,
            persona_count: 5,
            train: TrainConfig::default(),
            theta: None,
            exec: ExecMode::Parallel,
            out_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        if self.episodes_per_env == 0 {
            return Err(Error::InvalidConfig("episodes_per_env must be >= 1".into()));
        }
        if self.eval_envs.is_empty() {
            return Err(Error::InvalidConfig("no evaluation environments".into()));
        }
        if self.splits.is_empty() {
            return Err(Error::InvalidConfig("no splits".into()));
        }
        self.memory.validate()?;
        self.adapt.validate()?;
        for env in self.eval_envs.iter().chain(&self.train_envs) {
            env.spec.validate()?;
        }
        for split in &self.splits {
            if !self.eval_envs.iter().any(|e| e.spec.layout == split.layout) {
                return Err(Error::InvalidConfig(format!(
                    "split {} wants layout {} but no eval env has it",
                    split.name, split.layout
                )));
            }
        }
        if !(0.0..1.0).contains(&self.clause_dropout) {
            return Err(Error::InvalidConfig("clause_dropout must be in [0,1)".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text =
            std::fs::read_to_string(path).map_err(Error::io(path.display().to_string()))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(Error::json(path.display().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config json");
        std::fs::write(path, text).map_err(Error::io(path.display().to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        assert_eq!(config.eval_envs.len(), 12);
        assert_eq!(config.train_envs.len(), 8);
        assert_eq!(config.episodes_per_env, 600);
        assert_eq!(config.repeats, 3);
        assert_eq!(config.memory, MemoryMode::Gr { alpha: 50 });
        // Training seeds are disjoint from evaluation seeds.
        for t in &config.train_envs {
            assert!(config.eval_envs.iter().all(|e| e.seed != t.seed));
        }
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = ExperimentConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        config.save(&path).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(config, loaded);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = ExperimentConfig::default();
        config.repeats = 0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.memory = MemoryMode::Proportion { p: 1.5 };
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.eval_envs.retain(|e| e.spec.layout == Layout::ResidentialGrid);
        assert!(config.validate().is_err(), "N splits lost their environments");
    }

    #[test]
    fn user_style_rotates_personas() {
        let s = SplitStyle::User;
        assert_eq!(s.style_for(0, 5), Style::User(0));
        assert_eq!(s.style_for(7, 5), Style::User(2));
        assert_eq!(SplitStyle::Basic.style_for(9, 5), Style::Basic);
    }
}
