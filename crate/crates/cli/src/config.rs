//! TOML experiment configuration. Every field has a default, so a secret-room
//! pre-training config needs only an objective and a seed list.

use std::path::{Path, PathBuf};

use mapt_core::envs::{self, Cell, SecretRoomParams};
use mapt_core::{MarkovGame, MatrpoConfig, PolicyClass, PolicySet, RewardedTask, TrpeConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    SecretRoom(SecretRoomParams),
    OpenGrid(OpenGridParams),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::SecretRoom(SecretRoomParams::default())
    }
}

/// Walled-in grid with every agent starting at `(1, 1)`. The goal is used
/// only by fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenGridParams {
    pub side: usize,
    pub agents: usize,
    pub horizon: usize,
    /// Defaults to the far corner `(side, side)`.
    pub goal: Option<Cell>,
    pub goal_radius: f64,
    pub goal_reward: f64,
}

impl Default for OpenGridParams {
    fn default() -> Self {
        OpenGridParams {
            side: 5,
            agents: 2,
            horizon: 25,
            goal: None,
            goal_radius: 1.5,
            goal_reward: 100.0,
        }
    }
}

/// A built environment with its sparse goal task.
#[derive(Debug, Clone)]
pub struct Environment {
    pub game: MarkovGame,
    pub side: usize,
    pub task: RewardedTask,
}

impl EnvConfig {
    pub fn build(&self) -> CliResult<Environment> {
        let cfg = |e: mapt_core::Error| CliError::Config(format!("env: {e}"));
        match self {
            EnvConfig::SecretRoom(p) => {
                let room = envs::secret_room(p).map_err(cfg)?;
                let task = room.goal_task().map_err(cfg)?;
                Ok(Environment {
                    game: room.game,
                    side: p.side,
                    task,
                })
            }
            EnvConfig::OpenGrid(p) => {
                if p.agents == 0 {
                    return Err(CliError::Config("env.agents: at least one agent is required".into()));
                }
                let game = envs::open_grid(p.side, p.agents, p.horizon).map_err(cfg)?;
                let task = envs::sparse_goal_task(&game, p.side, p.goal.unwrap_or([p.side, p.side]), p.goal_radius, p.goal_reward).map_err(cfg)?;
                Ok(Environment {
                    game,
                    side: p.side,
                    task,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Tabular,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub class: PolicyKind,
    pub hidden: Vec<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            class: PolicyKind::Mlp,
            hidden: vec![64, 64],
        }
    }
}

impl PolicyConfig {
    pub fn class(&self) -> PolicyClass {
        match self.class {
            PolicyKind::Tabular => PolicyClass::Tabular,
            PolicyKind::Mlp => PolicyClass::Mlp {
                hidden: self.hidden.clone(),
            },
        }
    }

    /// Initial policies for one seed.
    pub fn initial(&self, game: &MarkovGame, seed: u64) -> PolicySet {
        PolicySet::for_game(game, &self.class(), seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainOptions {
    /// Trajectories sampled from the final policies for heatmaps.
    pub heatmap_trajectories: usize,
    /// Single-trial evaluation of the final policies, reported in the summary.
    pub eval_trajectories: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            heatmap_trajectories: 100,
            eval_trajectories: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Uniform,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneOptions {
    pub init: InitKind,
    /// Checkpoint path; `{seed}` is replaced by the run seed. Relative paths
    /// resolve against the config file's directory.
    pub checkpoint: Option<String>,
    /// Episodes of the epoch-0 zero-shot evaluation row.
    pub eval_episodes: usize,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        FinetuneOptions {
            init: InitKind::Uniform,
            checkpoint: None,
            eval_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Small fixture counts instead of the full battery.
    pub quick: bool,
    /// Extra game files validated alongside the battery.
    pub game_files: Vec<PathBuf>,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub trpe: TrpeConfig,
    pub pretrain: PretrainOptions,
    pub matrpo: MatrpoConfig,
    pub finetune: FinetuneOptions,
    pub verify: VerifyOptions,
    /// Directory that relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0, 1, 2, 3],
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            trpe: TrpeConfig::default(),
            pretrain: PretrainOptions::default(),
            matrpo: MatrpoConfig::default(),
            finetune: FinetuneOptions::default(),
            verify: VerifyOptions::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// The parser's message without the quoted source excerpt.
fn toml_message(e: &toml::de::Error) -> String {
    e.message().trim().to_string()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(toml_message(&e)))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("--config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Canonical TOML of the resolved config; its hash goes in the manifest.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn checkpoint_path(&self, seed: u64) -> CliResult<PathBuf> {
        let template = self
            .finetune
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Config("finetune.checkpoint: required when finetune.init = \"checkpoint\"".into()))?;
        Ok(self.resolve(Path::new(&template.replace("{seed}", &seed.to_string()))))
    }

    fn validate_common(&self) -> CliResult<Environment> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds: the seed list must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(CliError::Config(format!("seeds: seed {s} is listed twice")));
        }
        if self.policy.class == PolicyKind::Mlp && self.policy.hidden.contains(&0) {
            return Err(CliError::Config("policy.hidden: layer widths must be positive".into()));
        }
        self.env.build()
    }

    pub fn validate_pretrain(&self) -> CliResult<Environment> {
        let env = self.validate_common()?;
        self.trpe
            .validate()
            .map_err(|e| CliError::Config(format!("trpe: {e}")))?;
        if self.trpe.objective == mapt_core::ObjectiveFamily::Mixture && !env.game.uniform_local_states() {
            return Err(CliError::Config(
                "trpe.objective: mixture requires identical local state spaces".into(),
            ));
        }
        Ok(env)
    }

    pub fn validate_finetune(&self) -> CliResult<Environment> {
        let env = self.validate_common()?;
        self.matrpo
            .validate()
            .map_err(|e| CliError::Config(format!("matrpo: {e}")))?;
        if self.finetune.eval_episodes == 0 {
            return Err(CliError::Config("finetune.eval_episodes: must be at least 1".into()));
        }
        if self.finetune.init == InitKind::Checkpoint {
            for &s in &self.seeds {
                let p = self.checkpoint_path(s)?;
                if !p.is_file() {
                    return Err(CliError::Config(format!(
                        "finetune.checkpoint: {} does not exist (seed {s})",
                        p.display()
                    )));
                }
            }
        }
        Ok(env)
    }

    pub fn validate_verify(&self) -> CliResult<()> {
        for p in &self.verify.game_files {
            let r = self.resolve(p);
            if !r.is_file() {
                return Err(CliError::Config(format!("verify.game_files: {} does not exist", r.display())));
            }
        }
        Ok(())
    }
}
