use std::fs;
use std::path::{Path, PathBuf};

use iterseg::benchmark::{benchmark_net, benchmark_phantom, benchmark_train};
use iterseg::datagen::{DatasetConfig, SplitName};
use iterseg::env::{ActionSet, EnvConfig};
use iterseg::neural::NetConfig;
use iterseg::oracle::InteractionMode;
use iterseg::trainer::{SyncMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Classify, CliError, CliResult};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Everything a command needs to reproduce its output. Written as
/// `run_config.json` next to every output so a run can be replayed with
/// `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DatasetConfig,
    pub env: EnvConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub train_split: SplitName,
    pub eval_split: SplitName,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            data: DatasetConfig {
                phantom: benchmark_phantom(),
                ..DatasetConfig::default()
            },
            net: NetConfig {
                num_actions: env.actions.len(),
                ..benchmark_net()
            },
            env,
            train: benchmark_train(),
            train_split: SplitName::Train2,
            eval_split: SplitName::Test,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).runtime()?;
        let path = dir.join(RUN_CONFIG_FILE);
        fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.env.validate().config()?;
        self.train.validate().config()?;
        self.net.validate().config()?;
        if self.net.num_actions != self.env.actions.len() {
            return Err(CliError::Config(format!(
                "net.num_actions is {} but the action set has {} actions",
                self.net.num_actions,
                self.env.actions.len()
            )));
        }
        Ok(())
    }

    pub fn set_actions(&mut self, actions: ActionSet) {
        self.net.num_actions = actions.len();
        self.env.actions = actions;
    }
}

/// Flags shared by every subcommand; each one overrides the matching
/// field of the loaded (or default) configuration.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON run configuration, e.g. a `run_config.json` from an earlier run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seeds data generation, training and the click oracle.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// sync or async
    #[arg(long)]
    pub mode: Option<String>,
    /// Action magnitudes, e.g. "0.1,0.2,0.4" for {±0.1, ±0.2, ±0.4}.
    #[arg(long)]
    pub actions: Option<String>,
    /// good, without or bad
    #[arg(long)]
    pub interaction: Option<String>,
    /// Refinement steps per episode.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Clicks per step.
    #[arg(long)]
    pub clicks: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.data.seed = seed;
            cfg.train.seed = seed;
            cfg.env.oracle.rng_seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.train.workers = w;
        }
        if let Some(m) = &self.mode {
            cfg.train.sync_mode = m.parse::<SyncMode>().config()?;
        }
        if let Some(a) = &self.actions {
            cfg.set_actions(ActionSet::parse(a).config()?);
        }
        if let Some(i) = &self.interaction {
            cfg.env.oracle.mode = i.parse::<InteractionMode>().config()?;
        }
        if let Some(t) = self.steps {
            cfg.env.horizon = t;
        }
        if let Some(n) = self.clicks {
            cfg.env.oracle.n_click = n;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_split(s: &str) -> CliResult<SplitName> {
    s.parse().config()
}
