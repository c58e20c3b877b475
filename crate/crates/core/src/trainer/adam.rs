use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::ActorCritic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over the network's parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, net: &ActorCritic) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descends along `grads`, laid out like [`ActorCritic::params`].
    pub fn step(&mut self, net: &mut ActorCritic, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        let params = net.params_mut();
        if params.len() != grads.len() || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::Shape("gradient layout does not match the network".into()));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> ActorCritic {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ActorCritic::random(
            NetConfig {
                channels: 2,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut a = net();
        let before = a.clone();
        let grads: Vec<Vec<f64>> = a.params().iter().map(|(_, t)| vec![-3.0; t.numel()]).collect();
        let mut opt = Adam::new(AdamConfig::default(), &a);
        opt.step(&mut a, &grads, 0.01).unwrap();
        for ((_, x), (_, y)) in a.params().iter().zip(before.params()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_rate_leaves_weights() {
        let mut a = net();
        let before = a.clone();
        let grads: Vec<Vec<f64>> = a.params().iter().map(|(_, t)| vec![1.0; t.numel()]).collect();
        Adam::new(AdamConfig::default(), &a).step(&mut a, &grads, 0.0).unwrap();
        assert_eq!(a, before);
    }
}
