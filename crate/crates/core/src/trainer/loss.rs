//! Advantages and the two actor-critic losses with their output gradients.

use serde::{Deserialize, Serialize};

use crate::env::EpisodeTrace;
use crate::error::{Error, Result};
use crate::neural::PolicyOutput;

/// How per-voxel log-probabilities combine into the joint policy term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

impl Aggregation {
    fn scale(self, n: usize) -> f64 {
        match self {
            Self::Mean => 1.0 / n as f64,
            Self::Sum => 1.0,
        }
    }
}

/// Which return the critic is fitted to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// One scalar per step: return of the spatially averaged reward minus
    /// the mean of the value map.
    #[default]
    Global,
    /// One advantage per voxel from that voxel's own rewards and value.
    PerVoxel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub return_to_go: f64,
    pub value: f64,
    pub advantage: f64,
}

/// Return-to-go of the mean rewards, minus the critic's estimate.
pub fn advantages(mean_rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<AdvantageRecord>> {
    if mean_rewards.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if mean_rewards.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} rewards but {} values",
            mean_rewards.len(),
            values.len()
        )));
    }
    let mut out = vec![
        AdvantageRecord {
            return_to_go: 0.0,
            value: 0.0,
            advantage: 0.0
        };
        values.len()
    ];
    let mut ret = 0.0;
    for t in (0..values.len()).rev() {
        ret = mean_rewards[t] + gamma * ret;
        out[t] = AdvantageRecord {
            return_to_go: ret,
            value: values[t],
            advantage: ret - values[t],
        };
    }
    Ok(out)
}

pub fn compute_advantages(trace: &EpisodeTrace, gamma: f64) -> Result<Vec<AdvantageRecord>> {
    advantages(&trace.mean_rewards(), &trace.values(), gamma)
}

/// Per-voxel returns-to-go for every step, from per-step reward maps.
pub fn voxel_returns(rewards: &[&[f64]], gamma: f64) -> Result<Vec<Vec<f64>>> {
    let Some(n) = rewards.first().map(|r| r.len()) else {
        return Err(Error::EmptyTrace);
    };
    let mut out = vec![vec![0.0; n]; rewards.len()];
    let mut acc = vec![0.0; n];
    for t in (0..rewards.len()).rev() {
        for (a, &r) in acc.iter_mut().zip(rewards[t]) {
            *a = r + gamma * *a;
        }
        out[t].copy_from_slice(&acc);
    }
    Ok(out)
}

/// Advantage signal for one step; treated as a constant by both losses.
#[derive(Debug, Clone, Copy)]
pub enum Advantage<'a> {
    Scalar(f64),
    PerVoxel(&'a [f64]),
}

impl Advantage<'_> {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            Self::Scalar(a) => *a,
            Self::PerVoxel(a) => a[i],
        }
    }
}

/// `-(s * sum_i A_i log pi_i(a_i)) - beta * s * sum_i H_i` with `s` from the
/// aggregation, and its gradient with respect to the logits.
pub fn policy_loss_and_grad(
    out: &PolicyOutput,
    actions: &[usize],
    advantage: Advantage<'_>,
    aggregation: Aggregation,
    entropy_bonus: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = out.dims.len();
    let k = out.num_actions();
    if actions.len() != n {
        return Err(Error::Shape(format!("{} actions for {n} voxels", actions.len())));
    }
    if let Advantage::PerVoxel(a) = advantage {
        if a.len() != n {
            return Err(Error::Shape(format!("{} advantages for {n} voxels", a.len())));
        }
    }
    let s = aggregation.scale(n);
    let logits = out.logits.data();
    let mut grad = vec![0.0; k * n];
    let mut loss = 0.0;
    let mut logp = vec![0.0; k];
    for i in 0..n {
        // Log-softmax from the logits keeps tiny probabilities exact.
        let max = (0..k).map(|a| logits[a * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..k).map(|a| (logits[a * n + i] - max).exp()).sum::<f64>().ln();
        for a in 0..k {
            logp[a] = logits[a * n + i] - lse;
        }
        let adv = advantage.at(i);
        loss -= s * adv * logp[actions[i]];
        for a in 0..k {
            let p = out.prob(i, a);
            let onehot = (a == actions[i]) as u8 as f64;
            grad[a * n + i] = -s * adv * (onehot - p);
        }
        if entropy_bonus != 0.0 {
            let h: f64 = -(0..k).map(|a| out.prob(i, a) * logp[a]).sum::<f64>();
            loss -= entropy_bonus * s * h;
            for a in 0..k {
                let p = out.prob(i, a);
                grad[a * n + i] += entropy_bonus * s * p * (logp[a] + h);
            }
        }
    }
    Ok((loss, grad))
}

/// Target for the critic; treated as a constant.
#[derive(Debug, Clone, Copy)]
pub enum Returns<'a> {
    /// Fit the spatial mean of the value map: loss `(R - V)^2`.
    Scalar(f64),
    /// Fit every voxel: loss `s * sum_i (R_i - v_i)^2`.
    PerVoxel(&'a [f64]),
}

/// Squared advantage and its gradient with respect to the value map.
pub fn value_loss_and_grad(
    out: &PolicyOutput,
    returns: Returns<'_>,
    aggregation: Aggregation,
) -> Result<(f64, Vec<f64>)> {
    let n = out.dims.len();
    let v = out.value_map.data();
    match returns {
        Returns::Scalar(r) => {
            let a = r - out.value;
            Ok((a * a, vec![-2.0 * a / n as f64; n]))
        }
        Returns::PerVoxel(r) => {
            if r.len() != n {
                return Err(Error::Shape(format!("{} returns for {n} voxels", r.len())));
            }
            let s = aggregation.scale(n);
            let mut loss = 0.0;
            let grad = r
                .iter()
                .zip(v)
                .map(|(&r, &v)| {
                    let a = r - v;
                    loss += s * a * a;
                    -2.0 * s * a
                })
                .collect();
            Ok((loss, grad))
        }
    }
}
