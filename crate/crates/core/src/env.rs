//! The refinement MDP.
//!
//! Every voxel is an agent that nudges its foreground probability by one of
//! K signed deltas. A step applies the joint action, scores each voxel by the
//! drop in its cross entropy against the truth, asks the oracle for new
//! clicks on the binarised result and rebuilds the hint channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{build_hint_maps, GeodesicConfig, HintMaps, HintSets};
use crate::oracle::{ClickOracle, OracleConfig};
use crate::volume::{binarize, clip, Dims, LabelMask, ProbabilityMap, Volume3D};

/// Probabilities are clamped into `[CE_EPS, 1 - CE_EPS]` before taking logs.
pub const CE_EPS: f64 = 1e-6;

/// Threshold used when showing a probability map to the annotator.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Ordered set of signed probability adjustments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionSet {
    deltas: Vec<f64>,
}

impl ActionSet {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.len() < 2 {
            return Err(Error::Config("action set needs at least two actions".into()));
        }
        for (i, &d) in deltas.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::Config(format!("non-finite action {d}")));
            }
            if deltas[..i].contains(&d) {
                return Err(Error::Config(format!("duplicate action {d}")));
            }
            if !deltas.contains(&-d) {
                return Err(Error::Config(format!("action {d} has no negation in the set")));
            }
        }
        Ok(Self { deltas })
    }

    /// `{-m_k, .., -m_1, m_1, .., m_k}` in ascending order.
    pub fn symmetric(magnitudes: &[f64]) -> Result<Self> {
        let mut deltas: Vec<f64> = magnitudes.iter().flat_map(|&m| [-m.abs(), m.abs()]).collect();
        deltas.sort_by(f64::total_cmp);
        deltas.dedup();
        Self::new(deltas)
    }

    /// Parses `"0.1,0.2,0.4"` into the symmetric set of those magnitudes.
    pub fn parse(text: &str) -> Result<Self> {
        let magnitudes = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad action magnitude {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::symmetric(&magnitudes)
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn delta(&self, k: usize) -> f64 {
        self.deltas[k]
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        Self::symmetric(&[0.1, 0.2, 0.4]).expect("default action set")
    }
}

impl TryFrom<Vec<f64>> for ActionSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ActionSet> for Vec<f64> {
    fn from(a: ActionSet) -> Self {
        a.deltas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HintPolicy {
    /// New clicks are added to all earlier clicks of the episode.
    #[default]
    Accumulate,
    /// Only the latest step's clicks feed the hint maps.
    LatestOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub actions: ActionSet,
    pub oracle: OracleConfig,
    pub geodesy: GeodesicConfig,
    pub hint_policy: HintPolicy,
    pub threshold: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            gamma: 0.95,
            actions: ActionSet::default(),
            oracle: OracleConfig::default(),
            geodesy: GeodesicConfig::default(),
            hint_policy: HintPolicy::Accumulate,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        self.oracle.validate()?;
        self.geodesy.validate()
    }
}

/// Four-channel observation: image, probability, object and background hints.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub image: Volume3D,
    pub prob: ProbabilityMap,
    pub hints: HintMaps,
    pub step: usize,
}

impl AgentState {
    pub const CHANNELS: usize = 4;

    pub fn dims(&self) -> Dims {
        self.image.dims()
    }

    /// Channel-major network input `[b, p, h+, h-]`.
    pub fn to_input(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::CHANNELS * self.image.len());
        out.extend_from_slice(self.image.data());
        out.extend_from_slice(self.prob.data());
        out.extend_from_slice(self.hints.object.data());
        out.extend_from_slice(self.hints.background.data());
        out
    }
}

/// `p' = clip(p + delta[a], 0, 1)` voxelwise.
///
/// Panics on an action index outside the set.
pub fn apply_actions(prob: &ProbabilityMap, actions: &[usize], set: &ActionSet) -> Result<ProbabilityMap> {
    if actions.len() != prob.len() {
        return Err(Error::Shape(format!(
            "{} action indices for {} voxels",
            actions.len(),
            prob.len()
        )));
    }
    let data = prob
        .data()
        .iter()
        .zip(actions)
        .map(|(&p, &a)| clip(p + set.delta(a), 0.0, 1.0))
        .collect();
    Ok(ProbabilityMap::from_clipped(Volume3D::new(prob.dims(), data)?))
}

#[inline]
pub fn cross_entropy(p: f64, y: f64) -> f64 {
    let p = clip(p, CE_EPS, 1.0 - CE_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

pub fn cross_entropy_map(prob: &ProbabilityMap, truth: &LabelMask) -> Result<Volume3D> {
    prob.zip_map(truth, cross_entropy)
}

/// Per-voxel drop in cross entropy from `prev` to `cur`.
pub fn reward_map(prev: &ProbabilityMap, cur: &ProbabilityMap, truth: &LabelMask) -> Result<Volume3D> {
    prev.dims().ensure_same(cur.dims())?;
    prev.dims().ensure_same(truth.dims())?;
    let data = prev
        .data()
        .iter()
        .zip(cur.data())
        .zip(truth.data())
        .map(|((&a, &b), &y)| cross_entropy(a, y) - cross_entropy(b, y))
        .collect();
    Volume3D::new(prev.dims(), data)
}

/// `sum_t gamma^(t-1) r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: Volume3D,
    pub mean_reward: f64,
    pub done: bool,
    /// Clicks added to the episode hint sets by this step.
    pub new_clicks: usize,
}

/// One record per step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// Observation the actions were chosen from.
    pub state: AgentState,
    pub actions: Vec<usize>,
    pub reward: Volume3D,
    pub mean_reward: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean_rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.mean_reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }
}

/// Image, starting probability and truth for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeInput {
    pub image: Volume3D,
    pub initial: ProbabilityMap,
    pub truth: LabelMask,
}

impl EpisodeInput {
    pub fn new(image: Volume3D, initial: ProbabilityMap, truth: LabelMask) -> Result<Self> {
        image.dims().ensure_same(initial.dims())?;
        image.dims().ensure_same(truth.dims())?;
        Ok(Self { image, initial, truth })
    }

    pub fn dims(&self) -> Dims {
        self.image.dims()
    }
}

/// A T-step refinement episode against a known truth and a simulated user.
#[derive(Debug, Clone)]
pub struct RefineEnv {
    cfg: EnvConfig,
    truth: LabelMask,
    state: AgentState,
    hint_sets: HintSets,
    oracle: ClickOracle,
    noise_rng: ChaCha8Rng,
}

impl RefineEnv {
    pub fn reset(image: Volume3D, initial_prob: ProbabilityMap, truth: LabelMask, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = image.dims();
        dims.ensure_same(initial_prob.dims())?;
        dims.ensure_same(truth.dims())?;
        let oracle = ClickOracle::new(cfg.oracle)?;
        let noise_rng = ChaCha8Rng::seed_from_u64(cfg.oracle.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self {
            state: AgentState {
                image,
                prob: initial_prob,
                hints: HintMaps::empty(dims),
                step: 0,
            },
            truth,
            hint_sets: HintSets::new(),
            oracle,
            noise_rng,
            cfg,
        })
    }

    pub fn from_input(input: &EpisodeInput, cfg: EnvConfig) -> Result<Self> {
        Self::reset(input.image.clone(), input.initial.clone(), input.truth.clone(), cfg)
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn truth(&self) -> &LabelMask {
        &self.truth
    }

    pub fn hint_sets(&self) -> &HintSets {
        &self.hint_sets
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.cfg.horizon
    }

    pub fn prediction(&self) -> LabelMask {
        binarize(&self.state.prob, self.cfg.threshold)
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::EpisodeDone(self.state.step));
        }
        let next = apply_actions(&self.state.prob, actions, &self.cfg.actions)?;
        let reward = reward_map(&self.state.prob, &next, &self.truth)?;
        let mean_reward = reward.mean();
        self.state.prob = next;

        let pred = self.prediction();
        let delta = self.oracle.clicks(&pred, &self.truth)?;
        let new_clicks = match self.cfg.hint_policy {
            HintPolicy::Accumulate => self.hint_sets.extend(&delta.hints),
            HintPolicy::LatestOnly => {
                self.hint_sets = delta.hints.clone();
                delta.hints.len()
            }
        };
        self.state.hints = if delta.fill_noise {
            let dims = self.state.dims();
            let rng = &mut self.noise_rng;
            HintMaps {
                object: Volume3D::from_fn(dims, |_, _, _| rng.random::<f64>()),
                background: Volume3D::from_fn(dims, |_, _, _| rng.random::<f64>()),
            }
        } else if new_clicks > 0 || self.cfg.hint_policy == HintPolicy::LatestOnly {
            build_hint_maps(&self.state.image, &self.hint_sets, &self.cfg.geodesy)?
        } else {
            self.state.hints.clone()
        };
        self.state.step += 1;
        Ok(StepOutcome {
            reward,
            mean_reward,
            done: self.is_done(),
            new_clicks,
        })
    }
}
