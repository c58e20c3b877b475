//! The phantom benchmark: 20 training and 20 evaluation phantoms on a
//! 24×24×12 grid with background initialisation, plus the training settings
//! that make the policy click-aware on it.

use serde::{Deserialize, Serialize};

use crate::datagen::{phantom_suite, DatasetConfig, InitMethod, PhantomConfig};
use crate::env::{EnvConfig, EpisodeInput};
use crate::error::Result;
use crate::metrics::{evaluate_suite, SuiteReport};
use crate::neural::{ActorCritic, NetConfig};
use crate::oracle::InteractionMode;
use crate::trainer::{train, AdvantageMode, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Benchmark {
    pub train_data: DatasetConfig,
    pub eval_data: DatasetConfig,
    pub env: EnvConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

/// Phantoms with two bright distractor blobs, so intensity alone is ambiguous.
pub fn benchmark_phantom() -> PhantomConfig {
    PhantomConfig {
        noise_sigma: 0.2,
        distractors: 2,
        ..PhantomConfig::default()
    }
}

pub fn benchmark_net() -> NetConfig {
    NetConfig {
        channels: 8,
        ..NetConfig::default()
    }
}

pub fn benchmark_train() -> TrainConfig {
    TrainConfig {
        epochs: 150,
        learning_rate: 1e-3,
        advantage: AdvantageMode::PerVoxel,
        entropy_bonus: 0.3,
        decay_entropy: true,
        value_weight: 0.1,
        ..TrainConfig::default()
    }
}

impl Default for Benchmark {
    fn default() -> Self {
        let data = |seed| DatasetConfig {
            count: 20,
            n_train: 0,
            phantom: benchmark_phantom(),
            target_dims: None,
            extension: 0,
            initial: InitMethod::Bg,
            seed,
        };
        Self {
            train_data: data(1),
            eval_data: data(2),
            env: EnvConfig::default(),
            net: benchmark_net(),
            train: benchmark_train(),
        }
    }
}

impl Benchmark {
    pub fn training_set(&self) -> Result<Vec<EpisodeInput>> {
        phantom_suite(&self.train_data)
    }

    pub fn evaluation_set(&self) -> Result<Vec<EpisodeInput>> {
        phantom_suite(&self.eval_data)
    }

    /// Fresh network seeded from the training seed, trained on the training set.
    pub fn fit(&self, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
        let data = self.training_set()?;
        let net = ActorCritic::seeded(self.net.clone(), self.train.seed)?;
        train(net, &data, &self.env, &self.train, on_epoch)
    }

    pub fn evaluate(&self, net: &ActorCritic, mode: InteractionMode) -> Result<SuiteReport> {
        let mut env = self.env.clone();
        env.oracle.mode = mode;
        evaluate_suite(net, &self.evaluation_set()?, &env)
    }
}
