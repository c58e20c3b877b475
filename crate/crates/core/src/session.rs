//! Human-driven refinement: clicks come from a person instead of the
//! simulated oracle, and the policy acts greedily.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{apply_actions, AgentState, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::geodesy::{build_hint_maps, GeodesicConfig, HintLabel, HintMaps, HintSets};
use crate::metrics::dice;
use crate::neural::{sample_actions, Checkpoint, SampleMode};
use crate::volume::{binarize, Dims, LabelMask, ProbabilityMap, Volume3D, VoxelCoord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Self::X),
            "y" => Ok(Self::Y),
            "z" => Ok(Self::Z),
            other => Err(Error::Config(format!("unknown axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Image,
    Prob,
    /// Object then background hint map.
    Hints,
    Binarized,
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Self::Image),
            "prob" => Ok(Self::Prob),
            "hints" => Ok(Self::Hints),
            "binarized" => Ok(Self::Binarized),
            other => Err(Error::Config(format!("unknown layer {other:?}"))),
        }
    }
}

/// Row-major 2D payload; `channels` planes of `height × width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// `(width, height)` of a slice across `axis`.
pub fn slice_shape(dims: Dims, axis: Axis) -> (usize, usize) {
    match axis {
        Axis::X => (dims.ny, dims.nz),
        Axis::Y => (dims.nx, dims.nz),
        Axis::Z => (dims.nx, dims.ny),
    }
}

/// Plane `index` across `axis`; rows follow the slower in-plane axis.
pub fn extract_slice(v: &Volume3D, axis: Axis, index: usize) -> Result<Vec<f64>> {
    let dims = v.dims();
    let depth = match axis {
        Axis::X => dims.nx,
        Axis::Y => dims.ny,
        Axis::Z => dims.nz,
    };
    if index >= depth {
        return Err(Error::Config(format!("slice {index} outside 0..{depth}")));
    }
    let (w, h) = slice_shape(dims, axis);
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let (x, y, z) = match axis {
                Axis::X => (index, col, row),
                Axis::Y => (col, index, row),
                Axis::Z => (col, row, index),
            };
            out.push(v.get(x, y, z));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    /// Present when ground truth was supplied.
    pub dice: Option<f64>,
    pub object_clicks: usize,
    pub background_clicks: usize,
}

#[derive(Debug, Clone)]
pub struct InteractiveSession {
    state: AgentState,
    hints: HintSets,
    stale: bool,
    truth: Option<LabelMask>,
    geodesy: GeodesicConfig,
    threshold: f64,
}

impl InteractiveSession {
    pub fn new(image: Volume3D, prob: ProbabilityMap, truth: Option<LabelMask>) -> Result<Self> {
        image.dims().ensure_same(prob.dims())?;
        if let Some(t) = &truth {
            image.dims().ensure_same(t.dims())?;
        }
        let dims = image.dims();
        Ok(Self {
            state: AgentState {
                image,
                prob,
                hints: HintMaps::empty(dims),
                step: 0,
            },
            hints: HintSets::new(),
            stale: false,
            truth,
            geodesy: GeodesicConfig::default(),
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn with_geodesy(mut self, geodesy: GeodesicConfig) -> Self {
        self.geodesy = geodesy;
        self
    }

    pub fn dims(&self) -> Dims {
        self.state.dims()
    }

    pub fn step_count(&self) -> usize {
        self.state.step
    }

    pub fn image(&self) -> &Volume3D {
        &self.state.image
    }

    pub fn prob(&self) -> &ProbabilityMap {
        &self.state.prob
    }

    pub fn hint_maps(&self) -> &HintMaps {
        &self.state.hints
    }

    pub fn hint_sets(&self) -> &HintSets {
        &self.hints
    }

    pub fn has_truth(&self) -> bool {
        self.truth.is_some()
    }

    pub fn dice(&self) -> Result<Option<f64>> {
        self.truth
            .as_ref()
            .map(|t| dice(&binarize(&self.state.prob, self.threshold), t))
            .transpose()
    }

    /// Records a click; returns false for a duplicate.
    pub fn add_click(&mut self, label: HintLabel, at: VoxelCoord) -> Result<bool> {
        self.dims().checked_index(at)?;
        let added = self.hints.insert(label, at);
        self.stale |= added;
        Ok(added)
    }

    /// One greedy policy step over the clicks collected so far.
    pub fn step(&mut self, model: &Checkpoint) -> Result<StepReport> {
        if self.stale {
            self.state.hints = build_hint_maps(&self.state.image, &self.hints, &self.geodesy)?;
            self.stale = false;
        }
        let (out, _) = model.net.forward_state(&self.state)?;
        let actions = sample_actions(&out, SampleMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0));
        self.state.prob = apply_actions(&self.state.prob, &actions, &model.actions)?;
        self.state.step += 1;
        Ok(StepReport {
            step: self.state.step,
            dice: self.dice()?,
            object_clicks: self.hints.object.len(),
            background_clicks: self.hints.background.len(),
        })
    }

    pub fn slice(&self, axis: Axis, index: usize, layer: Layer) -> Result<Slice> {
        let (width, height) = slice_shape(self.dims(), axis);
        let planes: Vec<Vec<f64>> = match layer {
            Layer::Image => vec![extract_slice(&self.state.image, axis, index)?],
            Layer::Prob => vec![extract_slice(&self.state.prob, axis, index)?],
            Layer::Binarized => {
                let mask = binarize(&self.state.prob, self.threshold);
                vec![extract_slice(&mask, axis, index)?]
            }
            Layer::Hints => vec![
                extract_slice(&self.state.hints.object, axis, index)?,
                extract_slice(&self.state.hints.background, axis, index)?,
            ],
        };
        Ok(Slice {
            channels: planes.len(),
            height,
            width,
            data: planes.concat(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionSet;
    use crate::neural::{ActorCritic, NetConfig};

    fn dims(nx: usize, ny: usize, nz: usize) -> Dims {
        Dims::new(nx, ny, nz).unwrap()
    }

    fn model(seed: u64) -> Checkpoint {
        let cfg = NetConfig {
            channels: 2,
            trunk_blocks: 1,
            head_blocks: 1,
            ..NetConfig::default()
        };
        let net = ActorCritic::random(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        Checkpoint::new(net, ActionSet::default()).unwrap()
    }

    fn session(d: Dims, truth: bool) -> InteractiveSession {
        let image = Volume3D::from_fn(d, |x, y, z| (x + 10 * y + 100 * z) as f64);
        let truth = truth.then(|| LabelMask::new(Volume3D::from_fn(d, |x, _, _| (x < 2) as u8 as f64)).unwrap());
        InteractiveSession::new(image, ProbabilityMap::filled(d, 0.0).unwrap(), truth).unwrap()
    }

    #[test]
    fn z_slice_of_a_small_volume_has_in_plane_shape() {
        let s = session(dims(4, 4, 2), false);
        let sl = s.slice(Axis::Z, 0, Layer::Image).unwrap();
        assert_eq!((sl.channels, sl.height, sl.width), (1, 4, 4));
        assert_eq!(sl.data[5], 11.0);
    }

    #[test]
    fn slices_follow_each_axis() {
        let s = session(dims(3, 4, 5), false);
        let x = s.slice(Axis::X, 2, Layer::Image).unwrap();
        assert_eq!((x.height, x.width), (5, 4));
        assert_eq!(x.data[4 + 3], 2.0 + 30.0 + 100.0);
        let y = s.slice(Axis::Y, 1, Layer::Image).unwrap();
        assert_eq!((y.height, y.width), (5, 3));
        assert_eq!(y.data[3 * 2 + 1], 1.0 + 10.0 + 200.0);
        assert!(s.slice(Axis::Z, 5, Layer::Image).is_err());
    }

    #[test]
    fn hints_layer_carries_both_channels() {
        let s = session(dims(4, 4, 2), false);
        let sl = s.slice(Axis::Z, 1, Layer::Hints).unwrap();
        assert_eq!(sl.channels, 2);
        assert!(sl.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn first_object_click_zeroes_its_hint_after_the_next_step() {
        let mut s = session(dims(4, 4, 2), true);
        let c = VoxelCoord::new(1, 2, 1);
        assert!(s.add_click(HintLabel::Object, c).unwrap());
        assert_eq!(s.hint_maps().object.at(c), 1.0);
        let report = s.step(&model(1)).unwrap();
        assert_eq!(s.hint_maps().object.at(c), 0.0);
        assert!(s.hint_maps().background.data().iter().all(|&v| v == 1.0));
        assert_eq!(report.step, 1);
        assert_eq!(report.object_clicks, 1);
        assert!(report.dice.unwrap().is_finite());
    }

    #[test]
    fn duplicate_clicks_are_ignored() {
        let mut s = session(dims(4, 4, 2), false);
        let c = VoxelCoord::new(0, 0, 0);
        assert!(s.add_click(HintLabel::Background, c).unwrap());
        assert!(!s.add_click(HintLabel::Background, c).unwrap());
        assert_eq!(s.hint_sets().len(), 1);
    }

    #[test]
    fn out_of_bounds_click_is_rejected() {
        let mut s = session(dims(4, 4, 2), false);
        assert!(matches!(
            s.add_click(HintLabel::Object, VoxelCoord::new(0, 0, 2)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn steps_without_clicks_keep_probabilities_bounded_and_binary_layer_binary() {
        let mut s = session(dims(5, 4, 3), false);
        let m = model(2);
        for t in 1..=4 {
            let r = s.step(&m).unwrap();
            assert_eq!(r.step, t);
            assert_eq!(r.dice, None);
            assert!(s.prob().data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
        let sl = s.slice(Axis::Y, 2, Layer::Binarized).unwrap();
        assert!(sl.data.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn axis_and_layer_parse() {
        assert_eq!("y".parse::<Axis>().unwrap(), Axis::Y);
        assert_eq!("binarized".parse::<Layer>().unwrap(), Layer::Binarized);
        assert!("w".parse::<Axis>().is_err());
        assert!("mask".parse::<Layer>().is_err());
    }
}
