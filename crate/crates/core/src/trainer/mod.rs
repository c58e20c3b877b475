//! Advantage actor-critic training over refinement episodes.

mod adam;
mod augment;
mod loss;

use std::sync::mpsc;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use augment::{augment, Augmentation, MAX_ROTATION};
pub use loss::{
    advantages, compute_advantages, policy_loss_and_grad, value_loss_and_grad, voxel_returns, Advantage, AdvantageMode,
    AdvantageRecord, Aggregation, Returns,
};

use crate::env::{EnvConfig, EpisodeInput, EpisodeTrace, RefineEnv, TraceStep};
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::neural::{sample_actions, ActorCritic, PolicyOutput, SampleMode, Tape};
use crate::oracle::InteractionMode;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    /// Every update averages `workers` episodes run on the same parameters.
    #[default]
    Sync,
    /// Workers roll out on snapshots; the owner applies each episode's
    /// gradient as soon as it arrives.
    Async,
}

impl std::str::FromStr for SyncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(Self::Sync),
            "async" => Ok(Self::Async),
            other => Err(Error::Config(format!("unknown mode {other:?}, expected sync or async"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epochs of the interactive phase, run in the environment's oracle mode.
    pub epochs: usize,
    /// Epochs of the interaction-free phase that runs first.
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    /// Rate multiplier applied every `lr_decay_every` of a phase's epochs.
    pub lr_decay: f64,
    pub lr_decay_every: f64,
    pub adam: AdamConfig,
    pub workers: usize,
    pub sync_mode: SyncMode,
    pub entropy_bonus: f64,
    /// Scale the entropy bonus by the same step decay as the learning rate.
    pub decay_entropy: bool,
    /// Weight of the critic loss relative to the policy loss.
    pub value_weight: f64,
    pub aggregation: Aggregation,
    pub advantage: AdvantageMode,
    pub augment: bool,
    /// Rescales an episode gradient whose global norm exceeds this.
    pub max_grad_norm: Option<f64>,
    /// Episodes per epoch; the whole dataset when unset.
    pub episodes_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            pretrain_epochs: 0,
            learning_rate: 1e-4,
            lr_decay: 0.5,
            lr_decay_every: 0.25,
            adam: AdamConfig::default(),
            workers: 1,
            sync_mode: SyncMode::Sync,
            entropy_bonus: 0.0,
            decay_entropy: false,
            value_weight: 1.0,
            aggregation: Aggregation::Mean,
            advantage: AdvantageMode::Global,
            augment: true,
            max_grad_norm: None,
            episodes_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay_every > 0.0) {
            return Err(Error::Config("lr decay factor and period must be positive".into()));
        }
        if self.entropy_bonus < 0.0 || self.value_weight < 0.0 {
            return Err(Error::Config(
                "entropy bonus and value weight must be nonnegative".into(),
            ));
        }
        if self.episodes_per_epoch == Some(0) {
            return Err(Error::Config("episodes_per_epoch must be positive".into()));
        }
        Ok(())
    }

    /// Step-decayed rate for `epoch` of a phase lasting `total` epochs.
    pub fn rate_at(&self, epoch: usize, total: usize) -> f64 {
        let period = ((total as f64 * self.lr_decay_every).round() as usize).max(1);
        self.learning_rate * self.lr_decay.powi((epoch / period) as i32)
    }
}

/// Per-epoch training record, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: InteractionMode,
    pub mean_reward: f64,
    pub mean_dice: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
}

/// Everything recorded while playing one episode.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trace: EpisodeTrace,
    pub outputs: Vec<PolicyOutput>,
    pub tapes: Vec<Tape>,
    /// Dice of the binarised prediction before the first and after every step.
    pub step_dice: Vec<f64>,
    pub clicks: Vec<usize>,
}

pub fn rollout(
    net: &ActorCritic,
    input: &EpisodeInput,
    cfg: &EnvConfig,
    mode: SampleMode,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let mut env = RefineEnv::from_input(input, cfg.clone())?;
    let mut r = Rollout {
        trace: EpisodeTrace::default(),
        outputs: Vec::with_capacity(cfg.horizon),
        tapes: Vec::with_capacity(cfg.horizon),
        step_dice: vec![dice(&env.prediction(), &input.truth)?],
        clicks: vec![0],
    };
    while !env.is_done() {
        let state = env.state().clone();
        let (out, tape) = net.forward_state(&state)?;
        let actions = sample_actions(&out, mode, rng);
        let outcome = env.step(&actions)?;
        r.step_dice.push(dice(&env.prediction(), &input.truth)?);
        r.clicks.push(outcome.new_clicks);
        r.trace.steps.push(TraceStep {
            state,
            actions,
            reward: outcome.reward,
            mean_reward: outcome.mean_reward,
            value: out.value,
        });
        r.outputs.push(out);
        r.tapes.push(tape);
    }
    Ok(r)
}

/// Gradient and statistics of one training episode.
#[derive(Debug, Clone)]
pub struct EpisodeGradient {
    pub grads: Vec<Vec<f64>>,
    pub mean_reward: f64,
    pub final_dice: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
}

/// Output gradients of both losses for every step of a finished rollout.
pub fn loss_gradients(r: &Rollout, gamma: f64, cfg: &TrainConfig) -> Result<(f64, f64, Vec<(Vec<f64>, Vec<f64>)>)> {
    let mut lp = 0.0;
    let mut lv = 0.0;
    let mut out = Vec::with_capacity(r.outputs.len());
    match cfg.advantage {
        AdvantageMode::Global => {
            let adv = compute_advantages(&r.trace, gamma)?;
            for ((o, step), rec) in r.outputs.iter().zip(&r.trace.steps).zip(&adv) {
                let (p, gp) = policy_loss_and_grad(
                    o,
                    &step.actions,
                    Advantage::Scalar(rec.advantage),
                    cfg.aggregation,
                    cfg.entropy_bonus,
                )?;
                let (v, gv) = value_loss_and_grad(o, Returns::Scalar(rec.return_to_go), cfg.aggregation)?;
                lp += p;
                lv += v;
                out.push((gp, gv));
            }
        }
        AdvantageMode::PerVoxel => {
            let rewards: Vec<&[f64]> = r.trace.steps.iter().map(|s| s.reward.data()).collect();
            let returns = voxel_returns(&rewards, gamma)?;
            for ((o, step), ret) in r.outputs.iter().zip(&r.trace.steps).zip(&returns) {
                let adv: Vec<f64> = ret.iter().zip(o.value_map.data()).map(|(r, v)| r - v).collect();
                let (p, gp) = policy_loss_and_grad(
                    o,
                    &step.actions,
                    Advantage::PerVoxel(&adv),
                    cfg.aggregation,
                    cfg.entropy_bonus,
                )?;
                let (v, gv) = value_loss_and_grad(o, Returns::PerVoxel(ret), cfg.aggregation)?;
                lp += p;
                lv += v;
                out.push((gp, gv));
            }
        }
    }
    for (_, gv) in &mut out {
        gv.iter_mut().for_each(|g| *g *= cfg.value_weight);
    }
    Ok((lp, lv, out))
}

/// Plays one sampled episode and backpropagates both losses.
pub fn episode_gradient(
    net: &ActorCritic,
    input: &EpisodeInput,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EpisodeGradient> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let augmented;
    let input = if cfg.augment {
        augmented = augment(input, &mut rng);
        &augmented
    } else {
        input
    };
    let mut env = env.clone();
    env.oracle.rng_seed = seed;
    let r = rollout(net, input, &env, SampleMode::Sample, &mut rng)?;
    let (loss_policy, loss_value, grads) = loss_gradients(&r, env.gamma, cfg)?;
    let mut work = net.clone();
    work.zero_grad();
    for (tape, (gp, gv)) in r.tapes.iter().zip(&grads) {
        work.backward(tape, gp, gv)?;
    }
    let mut grads = work.gradients();
    if let Some(max) = cfg.max_grad_norm {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
    }
    let mean_reward = r.trace.mean_rewards().iter().sum::<f64>();
    Ok(EpisodeGradient {
        grads,
        mean_reward,
        final_dice: *r.step_dice.last().expect("dice before the first step"),
        loss_policy,
        loss_value,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ActorCritic,
    pub log: Vec<EpochLog>,
}

/// Mixes run, epoch and episode indices into one stream seed.
fn episode_seed(seed: u64, phase: u64, epoch: usize, slot: usize) -> u64 {
    let mut z = seed
        ^ phase.wrapping_mul(0xd1b5_4a32_d192_ed03)
        ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (slot as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Default)]
struct EpochStats {
    n: usize,
    reward: f64,
    dice: f64,
    lp: f64,
    lv: f64,
}

impl EpochStats {
    fn add(&mut self, g: &EpisodeGradient) {
        self.n += 1;
        self.reward += g.mean_reward;
        self.dice += g.final_dice;
        self.lp += g.loss_policy;
        self.lv += g.loss_value;
    }

    fn finish(&self, epoch: usize, phase: InteractionMode) -> Result<EpochLog> {
        let n = self.n.max(1) as f64;
        let log = EpochLog {
            epoch,
            phase,
            mean_reward: self.reward / n,
            mean_dice: self.dice / n,
            loss_policy: self.lp / n,
            loss_value: self.lv / n,
        };
        for (what, v) in [("policy loss", log.loss_policy), ("value loss", log.loss_value)] {
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, what });
            }
        }
        Ok(log)
    }
}

/// Runs the interaction-free phase (if any) and then the interactive phase.
pub fn train(
    mut net: ActorCritic,
    dataset: &[EpisodeInput],
    env: &EnvConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    env.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if net.config().num_actions != env.actions.len() {
        return Err(Error::Config("policy head size differs from the action set".into()));
    }
    let mut adam = Adam::new(cfg.adam, &net);
    let mut log = Vec::new();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phases = [
        (InteractionMode::Without, cfg.pretrain_epochs),
        (env.oracle.mode, cfg.epochs),
    ];
    let mut epoch_counter = 0;
    for (phase_idx, &(mode, epochs)) in phases.iter().enumerate() {
        let mut env = env.clone();
        env.oracle.mode = mode;
        for epoch in 0..epochs {
            let lr = cfg.rate_at(epoch, epochs);
            let mut cfg = cfg.clone();
            if cfg.decay_entropy {
                cfg.entropy_bonus *= lr / cfg.learning_rate.max(f64::MIN_POSITIVE);
            }
            let cfg = &cfg;
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut order_rng);
            let count = cfg.episodes_per_epoch.unwrap_or(dataset.len());
            let jobs: Vec<(usize, u64)> = (0..count)
                .map(|slot| {
                    (
                        order[slot % order.len()],
                        episode_seed(cfg.seed, phase_idx as u64, epoch, slot),
                    )
                })
                .collect();
            let stats = match cfg.sync_mode {
                SyncMode::Sync => run_sync_epoch(&mut net, &mut adam, dataset, &env, cfg, &jobs, lr)?,
                SyncMode::Async => run_async_epoch(&mut net, &mut adam, dataset, &env, cfg, &jobs, lr)?,
            };
            let entry = stats.finish(epoch_counter, mode)?;
            log::debug!("{}", serde_json::to_string(&entry)?);
            on_epoch(&entry);
            log.push(entry);
            epoch_counter += 1;
        }
    }
    Ok(TrainOutcome { net, log })
}

fn run_sync_epoch(
    net: &mut ActorCritic,
    adam: &mut Adam,
    dataset: &[EpisodeInput],
    env: &EnvConfig,
    cfg: &TrainConfig,
    jobs: &[(usize, u64)],
    lr: f64,
) -> Result<EpochStats> {
    let mut stats = EpochStats::default();
    for batch in jobs.chunks(cfg.workers) {
        let results: Vec<Result<EpisodeGradient>> = if batch.len() == 1 {
            vec![episode_gradient(net, &dataset[batch[0].0], env, cfg, batch[0].1)]
        } else {
            let shared: &ActorCritic = net;
            std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|&(i, seed)| s.spawn(move || episode_gradient(shared, &dataset[i], env, cfg, seed)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            })
        };
        let mut total: Option<Vec<Vec<f64>>> = None;
        for g in results {
            let g = g?;
            stats.add(&g);
            match &mut total {
                None => total = Some(g.grads),
                Some(t) => {
                    for (a, b) in t.iter_mut().flatten().zip(g.grads.iter().flatten()) {
                        *a += b;
                    }
                }
            }
        }
        let mut total = total.expect("nonempty batch");
        let scale = 1.0 / batch.len() as f64;
        total.iter_mut().flatten().for_each(|g| *g *= scale);
        adam.step(net, &total, lr)?;
    }
    Ok(stats)
}

fn run_async_epoch(
    net: &mut ActorCritic,
    adam: &mut Adam,
    dataset: &[EpisodeInput],
    env: &EnvConfig,
    cfg: &TrainConfig,
    jobs: &[(usize, u64)],
    lr: f64,
) -> Result<EpochStats> {
    let mut stats = EpochStats::default();
    let workers = cfg.workers.min(jobs.len()).max(1);
    let (result_tx, result_rx) = mpsc::channel::<(usize, Result<EpisodeGradient>)>();
    std::thread::scope(|s| -> Result<()> {
        let mut job_txs = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = mpsc::channel::<(Arc<ActorCritic>, usize, u64)>();
            job_txs.push(tx);
            let result_tx = result_tx.clone();
            s.spawn(move || {
                for (snapshot, i, seed) in rx {
                    let r = episode_gradient(&snapshot, &dataset[i], env, cfg, seed);
                    if result_tx.send((w, r)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(result_tx);
        let mut next = 0;
        let mut in_flight = 0;
        let snapshot = Arc::new(net.clone());
        for tx in &job_txs {
            if next < jobs.len() {
                tx.send((Arc::clone(&snapshot), jobs[next].0, jobs[next].1))
                    .expect("worker alive");
                next += 1;
                in_flight += 1;
            }
        }
        let mut failure = None;
        while in_flight > 0 {
            let (w, r) = result_rx.recv().expect("workers alive while jobs are in flight");
            in_flight -= 1;
            match r {
                Ok(g) => {
                    stats.add(&g);
                    if failure.is_none() {
                        if let Err(e) = adam.step(net, &g.grads, lr) {
                            failure = Some(e);
                        }
                    }
                }
                Err(e) => failure = failure.or(Some(e)),
            }
            if failure.is_none() && next < jobs.len() {
                let snapshot = Arc::new(net.clone());
                job_txs[w]
                    .send((snapshot, jobs[next].0, jobs[next].1))
                    .expect("worker alive");
                next += 1;
                in_flight += 1;
            }
        }
        drop(job_txs);
        failure.map_or(Ok(()), Err)
    })?;
    Ok(stats)
}
