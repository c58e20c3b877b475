//! Minimal dense autodiff for the actor-critic network.

mod checkpoint;
mod conv;
mod net;
mod tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointIndex, TensorEntry, BLOB_FILE, CHECKPOINT_FORMAT, INDEX_FILE};
pub use conv::Conv3d;
pub use net::{log_softmax_channels, softmax_channels, ActorCritic, NetConfig, PolicyOutput, Tape};
pub use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Categorical draw per voxel.
    Sample,
    /// Most likely action, lowest index on ties.
    Argmax,
}

/// Picks one action index per voxel.
pub fn sample_actions(policy: &PolicyOutput, mode: SampleMode, rng: &mut impl Rng) -> Vec<usize> {
    let n = policy.dims.len();
    let k = policy.num_actions();
    (0..n)
        .map(|i| match mode {
            SampleMode::Argmax => {
                let mut best = 0;
                for a in 1..k {
                    if policy.prob(i, a) > policy.prob(i, best) {
                        best = a;
                    }
                }
                best
            }
            SampleMode::Sample => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in 0..k {
                    acc += policy.prob(i, a);
                    if u < acc {
                        return a;
                    }
                }
                // Rounding left u above the cumulative sum: take the last
                // action with nonzero mass.
                (0..k).rev().find(|&a| policy.prob(i, a) > 0.0).unwrap_or(k - 1)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(dims: Dims, probs_per_voxel: &[f64]) -> PolicyOutput {
        let n = dims.len();
        let k = probs_per_voxel.len();
        let mut probs = vec![0.0; k * n];
        for a in 0..k {
            probs[a * n..(a + 1) * n].fill(probs_per_voxel[a]);
        }
        let shape = vec![k, dims.nz, dims.ny, dims.nx];
        PolicyOutput {
            dims,
            logits: Tensor::new(shape.clone(), probs.iter().map(|p: &f64| p.ln()).collect()).unwrap(),
            action_probs: Tensor::new(shape, probs).unwrap(),
            value_map: Tensor::zeros(vec![1, dims.nz, dims.ny, dims.nx]),
            value: 0.0,
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let dims = Dims::new(3, 2, 2).unwrap();
        let p = policy(dims, &[1.0 / 6.0; 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_actions(&p, SampleMode::Argmax, &mut rng).iter().all(|&a| a == 0));
    }

    #[test]
    fn one_hot_policy_is_deterministic_in_both_modes() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let p = policy(dims, &[0.0, 0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [SampleMode::Argmax, SampleMode::Sample] {
            assert!(sample_actions(&p, mode, &mut rng).iter().all(|&a| a == 2));
        }
    }

    #[test]
    fn sampling_frequency_follows_policy() {
        let dims = Dims::new(100, 100, 10).unwrap();
        let p = policy(dims, &[0.7, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = sample_actions(&p, SampleMode::Sample, &mut rng);
        let freq = a.iter().filter(|&&x| x == 0).count() as f64 / a.len() as f64;
        assert!((freq - 0.7).abs() <= 0.01, "{freq}");
    }
}
