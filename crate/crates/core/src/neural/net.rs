//! Shared-trunk actor-critic network.
//!
//! Three conv blocks extract features shared by two heads of three blocks
//! each. A block is a 3x3x3 convolution followed by a rectifier; the last
//! convolution of each head is linear so it can emit signed logits and
//! values. The policy head yields K logits per voxel, the value head one
//! value per voxel whose spatial mean is the state value.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::conv::Conv3d;
use super::tensor::Tensor;
use crate::env::AgentState;
use crate::error::{Error, Result};
use crate::volume::Dims;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub in_channels: usize,
    pub trunk_blocks: usize,
    pub head_blocks: usize,
    pub channels: usize,
    pub num_actions: usize,
    /// Per-block dilation, trunk first then head; missing entries default to 1.
    pub dilations: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: AgentState::CHANNELS,
            trunk_blocks: 3,
            head_blocks: 3,
            channels: 16,
            num_actions: 6,
            dilations: Vec::new(),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels == 0 || self.head_blocks == 0 {
            return Err(Error::Config(
                "network needs channels and at least one head block".into(),
            ));
        }
        if self.num_actions < 2 {
            return Err(Error::Config("policy head needs at least two actions".into()));
        }
        Ok(())
    }

    fn dilation(&self, block: usize) -> usize {
        self.dilations.get(block).copied().unwrap_or(1).max(1)
    }
}

/// Policy and value outputs for every voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub dims: Dims,
    /// `[K, nz, ny, nx]`
    pub logits: Tensor,
    /// Softmax of `logits` over the action axis.
    pub action_probs: Tensor,
    /// `[1, nz, ny, nx]`
    pub value_map: Tensor,
    pub value: f64,
}

impl PolicyOutput {
    pub fn num_actions(&self) -> usize {
        self.logits.shape()[0]
    }

    /// Probability of action `k` at voxel `i`.
    #[inline]
    pub fn prob(&self, i: usize, k: usize) -> f64 {
        self.action_probs.data()[k * self.dims.len() + i]
    }
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Tape {
    dims: Dims,
    input: Vec<f64>,
    trunk: Vec<Vec<f64>>,
    policy: Vec<Vec<f64>>,
    value: Vec<Vec<f64>>,
}

impl Tape {
    pub fn dims(&self) -> Dims {
        self.dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    cfg: NetConfig,
    trunk: Vec<Conv3d>,
    policy: Vec<Conv3d>,
    value: Vec<Conv3d>,
}

fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes `grad` wherever the rectified activation was not positive.
fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl ActorCritic {
    /// Glorot-initialised blocks with zeroed output layers, so a fresh
    /// network starts from a uniform policy and zero value.
    pub fn new(cfg: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::random(cfg, rng)?;
        for conv in [net.policy.last_mut(), net.value.last_mut()].into_iter().flatten() {
            conv.weight.data_mut().fill(0.0);
            conv.bias.data_mut().fill(0.0);
        }
        Ok(net)
    }

    /// [`ActorCritic::new`] drawing from a ChaCha8 stream seeded with `seed`.
    pub fn seeded(cfg: NetConfig, seed: u64) -> Result<Self> {
        Self::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    /// Glorot initialisation everywhere, including the output layers.
    pub fn random(cfg: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mut block = 0;
        let mut layer = |i: usize, o: usize, rng: &mut _| {
            let conv = Conv3d::glorot(i, o, cfg.dilation(block), rng);
            block += 1;
            conv
        };
        let trunk: Vec<_> = (0..cfg.trunk_blocks)
            .map(|b| layer(if b == 0 { cfg.in_channels } else { c }, c, rng))
            .collect();
        let head_in = if cfg.trunk_blocks == 0 { cfg.in_channels } else { c };
        let head_start = block;
        let mut head = |out: usize, rng: &mut _| -> Vec<Conv3d> {
            block = head_start;
            (0..cfg.head_blocks)
                .map(|b| {
                    let i = if b == 0 { head_in } else { c };
                    let o = if b + 1 == cfg.head_blocks { out } else { c };
                    let conv = Conv3d::glorot(i, o, cfg.dilation(block), rng);
                    block += 1;
                    conv
                })
                .collect()
        };
        let policy = head(cfg.num_actions, rng);
        let value = head(1, rng);
        Ok(Self {
            cfg,
            trunk,
            policy,
            value,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn forward_state(&self, state: &AgentState) -> Result<(PolicyOutput, Tape)> {
        self.forward(&state.to_input(), state.dims())
    }

    pub fn forward(&self, input: &[f64], dims: Dims) -> Result<(PolicyOutput, Tape)> {
        let n = dims.len();
        if input.len() != self.cfg.in_channels * n {
            return Err(Error::Shape(format!(
                "network expects {} input channels over {dims}",
                self.cfg.in_channels
            )));
        }
        let mut trunk: Vec<Vec<f64>> = Vec::with_capacity(self.trunk.len());
        for conv in &self.trunk {
            let x = trunk.last().map(Vec::as_slice).unwrap_or(input);
            let mut a = conv.forward(x, dims)?;
            relu_inplace(&mut a);
            trunk.push(a);
        }
        let features = trunk.last().map(Vec::as_slice).unwrap_or(input);
        let (policy, logits) = run_head(&self.policy, features, dims)?;
        let (value, value_map) = run_head(&self.value, features, dims)?;

        let k = self.cfg.num_actions;
        let probs = softmax_channels(&logits, k, n);
        let value_scalar = value_map.iter().sum::<f64>() / n as f64;
        let spatial = [dims.nz, dims.ny, dims.nx];
        let output = PolicyOutput {
            dims,
            logits: Tensor::new(vec![k, spatial[0], spatial[1], spatial[2]], logits)?,
            action_probs: Tensor::new(vec![k, spatial[0], spatial[1], spatial[2]], probs)?,
            value_map: Tensor::new(vec![1, spatial[0], spatial[1], spatial[2]], value_map)?,
            value: value_scalar,
        };
        let tape = Tape {
            dims,
            input: input.to_vec(),
            trunk,
            policy,
            value,
        };
        Ok((output, tape))
    }

    /// Reverse pass from output gradients. Parameter gradients accumulate
    /// across calls until `zero_grad`; returns the input gradient.
    pub fn backward(&mut self, tape: &Tape, grad_logits: &[f64], grad_value_map: &[f64]) -> Result<Vec<f64>> {
        let dims = tape.dims;
        let n = dims.len();
        if grad_logits.len() != self.cfg.num_actions * n || grad_value_map.len() != n {
            return Err(Error::Shape(
                "output gradient does not match the recorded forward pass".into(),
            ));
        }
        let features: &[f64] = tape.trunk.last().map(Vec::as_slice).unwrap_or(&tape.input);
        let mut grad = backprop_head(&mut self.policy, &tape.policy, features, dims, grad_logits)?;
        let from_value = backprop_head(&mut self.value, &tape.value, features, dims, grad_value_map)?;
        for (g, v) in grad.iter_mut().zip(&from_value) {
            *g += v;
        }
        for (i, conv) in self.trunk.iter_mut().enumerate().rev() {
            relu_mask(&mut grad, &tape.trunk[i]);
            let input = if i == 0 { &tape.input } else { &tape.trunk[i - 1] };
            grad = conv.backward(input, dims, &grad)?;
        }
        Ok(grad)
    }

    fn layers(&self) -> impl Iterator<Item = (String, &Conv3d)> {
        self.trunk
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("trunk.{i}"), c))
            .chain(self.policy.iter().enumerate().map(|(i, c)| (format!("policy.{i}"), c)))
            .chain(self.value.iter().enumerate().map(|(i, c)| (format!("value.{i}"), c)))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv3d> {
        self.trunk
            .iter_mut()
            .chain(self.policy.iter_mut())
            .chain(self.value.iter_mut())
    }

    /// Named parameter tensors in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .flat_map(|(name, c)| [(format!("{name}.weight"), &c.weight), (format!("{name}.bias"), &c.bias)])
            .collect()
    }

    /// Parameter tensors in the same order as [`ActorCritic::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut().flat_map(|c| [&mut c.weight, &mut c.bias]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.params_mut() {
            t.zero_grad();
        }
    }

    /// Copies of every gradient buffer, zeros where none was allocated.
    pub fn gradients(&self) -> Vec<Vec<f64>> {
        self.params()
            .into_iter()
            .map(|(_, t)| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}

fn run_head(layers: &[Conv3d], features: &[f64], dims: Dims) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut hidden = Vec::with_capacity(layers.len().saturating_sub(1));
    let last = layers.len() - 1;
    for conv in &layers[..last] {
        let x = hidden.last().map(Vec::as_slice).unwrap_or(features);
        let mut a = conv.forward(x, dims)?;
        relu_inplace(&mut a);
        hidden.push(a);
    }
    let x = hidden.last().map(Vec::as_slice).unwrap_or(features);
    let out = layers[last].forward(x, dims)?;
    Ok((hidden, out))
}

fn backprop_head(
    layers: &mut [Conv3d],
    hidden: &[Vec<f64>],
    features: &[f64],
    dims: Dims,
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    let mut grad = grad_out.to_vec();
    for i in (0..layers.len()).rev() {
        if i + 1 < layers.len() {
            relu_mask(&mut grad, &hidden[i]);
        }
        let input = if i == 0 { features } else { &hidden[i - 1] };
        grad = layers[i].backward(input, dims, &grad)?;
    }
    Ok(grad)
}

/// Per-voxel softmax over `k` channel-major planes of length `n`.
pub fn softmax_channels(logits: &[f64], k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..n {
        let max = (0..k).map(|a| logits[a * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for a in 0..k {
            let e = (logits[a * n + i] - max).exp();
            out[a * n + i] = e;
            total += e;
        }
        for a in 0..k {
            out[a * n + i] /= total;
        }
    }
    out
}

/// Per-voxel log-softmax over `k` channel-major planes of length `n`.
pub fn log_softmax_channels(logits: &[f64], k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..n {
        let max = (0..k).map(|a| logits[a * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..k).map(|a| (logits[a * n + i] - max).exp()).sum::<f64>().ln();
        for a in 0..k {
            out[a * n + i] = logits[a * n + i] - lse;
        }
    }
    out
}
