//! Dice overlap and per-step evaluation reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentState, EnvConfig, EpisodeInput, RefineEnv};
use crate::error::{Error, Result};
use crate::neural::{sample_actions, ActorCritic, SampleMode};
use crate::volume::{binarize, LabelMask};

/// `2|P ∩ G| / (|P| + |G|)`, with two empty masks scoring 1.
pub fn dice(pred: &LabelMask, truth: &LabelMask) -> Result<f64> {
    pred.dims().ensure_same(truth.dims())?;
    let (mut both, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(truth.data()) {
        let (a, b) = (a > 0.5, b > 0.5);
        p += a as usize;
        g += b as usize;
        both += (a && b) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// Dice after every refinement step of one sequence; index 0 is the
/// initial segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step_dice: Vec<f64>,
    /// `deltas[t] = step_dice[t] - step_dice[t-1]`, with `deltas[0] = 0`.
    pub deltas: Vec<f64>,
    /// Clicks issued by the oracle during each step; `clicks_per_step[0] = 0`.
    pub clicks_per_step: Vec<usize>,
}

impl EvalReport {
    pub fn from_dice(step_dice: Vec<f64>, clicks_per_step: Vec<usize>) -> Self {
        let deltas = std::iter::once(0.0)
            .chain(step_dice.windows(2).map(|w| w[1] - w[0]))
            .collect();
        Self {
            step_dice,
            deltas,
            clicks_per_step,
        }
    }

    pub fn final_dice(&self) -> f64 {
        self.step_dice.last().copied().unwrap_or(0.0)
    }
}

/// Runs one episode with argmax actions and records dice per step.
pub fn evaluate_sequence(net: &ActorCritic, input: &EpisodeInput, cfg: &EnvConfig) -> Result<EvalReport> {
    evaluate_sequence_with(net, input, cfg, |_| {})
}

/// [`evaluate_sequence`] that also shows `visit` the initial state and the
/// state after every step.
pub fn evaluate_sequence_with(
    net: &ActorCritic,
    input: &EpisodeInput,
    cfg: &EnvConfig,
    mut visit: impl FnMut(&AgentState),
) -> Result<EvalReport> {
    let mut env = RefineEnv::from_input(input, cfg.clone())?;
    visit(env.state());
    let mut step_dice = vec![dice(&binarize(&input.initial, cfg.threshold), &input.truth)?];
    let mut clicks = vec![0];
    // Argmax never draws from the rng.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while !env.is_done() {
        let (out, _) = net.forward_state(env.state())?;
        let actions = sample_actions(&out, SampleMode::Argmax, &mut rng);
        let outcome = env.step(&actions)?;
        visit(env.state());
        step_dice.push(dice(&env.prediction(), &input.truth)?);
        clicks.push(outcome.new_clicks);
    }
    Ok(EvalReport::from_dice(step_dice, clicks))
}

/// Per-step means over a suite of sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub mean: EvalReport,
    pub cases: Vec<EvalReport>,
}

pub fn summarize(cases: Vec<EvalReport>) -> Result<SuiteReport> {
    let first = cases
        .first()
        .ok_or_else(|| Error::Dataset("no evaluation cases".into()))?;
    let steps = first.step_dice.len();
    if cases.iter().any(|c| c.step_dice.len() != steps) {
        return Err(Error::Shape("evaluation cases have different horizons".into()));
    }
    let n = cases.len() as f64;
    let dice = (0..steps)
        .map(|t| cases.iter().map(|c| c.step_dice[t]).sum::<f64>() / n)
        .collect();
    let clicks = (0..steps)
        .map(|t| {
            let total: usize = cases.iter().map(|c| c.clicks_per_step[t]).sum();
            (total as f64 / n).round() as usize
        })
        .collect();
    Ok(SuiteReport {
        mean: EvalReport::from_dice(dice, clicks),
        cases,
    })
}

/// Evaluates every input, giving episode `i` oracle seed `cfg.oracle.rng_seed + i`.
pub fn evaluate_suite(net: &ActorCritic, inputs: &[EpisodeInput], cfg: &EnvConfig) -> Result<SuiteReport> {
    let cases = inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let mut cfg = cfg.clone();
            cfg.oracle.rng_seed = cfg.oracle.rng_seed.wrapping_add(i as u64);
            evaluate_sequence(net, input, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use proptest::prelude::*;

    fn mask(bits: &[bool]) -> LabelMask {
        LabelMask::from_bools(Dims::new(bits.len(), 1, 1).unwrap(), bits).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(&[true, false, true]);
        assert_eq!(dice(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        assert_eq!(dice(&mask(&[true, false]), &mask(&[false, true])).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap() {
        let p = mask(&[true, true, true, true, false, false]);
        let g = mask(&[false, false, true, true, true, true]);
        assert_eq!(dice(&p, &g).unwrap(), 0.5);
    }

    #[test]
    fn empty_pair_scores_one() {
        let m = mask(&[false; 4]);
        assert_eq!(dice(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn deltas_telescope() {
        let r = EvalReport::from_dice(vec![0.1, 0.4, 0.35, 0.9], vec![0, 5, 5, 2]);
        assert_eq!(r.deltas.len(), 4);
        assert!((r.deltas.iter().sum::<f64>() - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in proptest::collection::vec(any::<bool>(), 1..64),
                                 b in proptest::collection::vec(any::<bool>(), 1..64)) {
            let n = a.len().min(b.len());
            let (a, b) = (mask(&a[..n]), mask(&b[..n]));
            let ab = dice(&a, &b).unwrap();
            prop_assert_eq!(ab, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            if a.count() > 0 && b.count() > 0 {
                prop_assert_eq!(ab == 1.0, a == b);
            }
        }
    }
}
