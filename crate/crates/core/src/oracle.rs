//! Simulated annotator.
//!
//! Error regions are the connected components of the false-negative and
//! false-positive masks. The oracle clicks the centres of the largest ones,
//! jittered by a bounded integer offset.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{HintLabel, HintSets};
use crate::volume::{Connectivity, Dims, LabelMask, VoxelCoord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Predicted foreground where the truth is background.
    FalsePositive,
    /// Missed foreground.
    FalseNegative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorRegion {
    pub voxels: Vec<VoxelCoord>,
    pub kind: ErrorKind,
    pub center: VoxelCoord,
    /// Smallest linear index in the region, used for tie-breaking.
    pub first_index: usize,
}

impl ErrorRegion {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMode {
    /// Clicks at the centres of the largest error regions.
    #[default]
    Good,
    /// No clicks; hint channels are replaced by uniform noise.
    Without,
    /// Clicks at uniformly random voxels with random labels.
    Bad,
}

impl std::str::FromStr for InteractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(Self::Good),
            "without" => Ok(Self::Without),
            "bad" => Ok(Self::Bad),
            other => Err(Error::Config(format!("unknown interaction mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub n_click: usize,
    pub noise_halfwidth: usize,
    pub mode: InteractionMode,
    pub connectivity: Connectivity,
    pub rng_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_click: 5,
            noise_halfwidth: 3,
            mode: InteractionMode::Good,
            connectivity: Connectivity::TwentySix,
            rng_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_click == 0 {
            return Err(Error::Config("n_click must be >= 1".into()));
        }
        Ok(())
    }
}

/// New clicks for one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClickDelta {
    pub hints: HintSets,
    /// Set in `Without` mode: the caller fills hint channels with noise.
    pub fill_noise: bool,
}

pub fn label_error_regions(
    pred: &LabelMask,
    truth: &LabelMask,
    connectivity: Connectivity,
) -> Result<Vec<ErrorRegion>> {
    let dims = pred.dims();
    dims.ensure_same(truth.dims())?;
    let n = dims.len();
    // 0 = correct, 1 = false negative, 2 = false positive.
    let class: Vec<u8> = (0..n)
        .map(|i| match (truth.is_set(i), pred.is_set(i)) {
            (true, false) => 1,
            (false, true) => 2,
            _ => 0,
        })
        .collect();
    let offsets = connectivity.offsets();
    let mut visited = vec![false; n];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..n {
        if class[start] == 0 || visited[start] {
            continue;
        }
        let label = class[start];
        visited[start] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let c = dims.coord(i);
            for o in &offsets {
                let (x, y, z) = (c.x as i64 + o[0], c.y as i64 + o[1], c.z as i64 + o[2]);
                if !dims.contains(x, y, z) {
                    continue;
                }
                let j = dims.index(x as usize, y as usize, z as usize);
                if !visited[j] && class[j] == label {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        let voxels: Vec<VoxelCoord> = members.iter().map(|&i| dims.coord(i)).collect();
        regions.push(ErrorRegion {
            center: region_center(&voxels),
            first_index: start,
            kind: if label == 1 {
                ErrorKind::FalseNegative
            } else {
                ErrorKind::FalsePositive
            },
            voxels,
        });
    }
    regions.sort_by(|a, b| b.len().cmp(&a.len()).then(a.first_index.cmp(&b.first_index)));
    Ok(regions)
}

/// Region voxel nearest the centroid; `voxels` must be in linear order so
/// the first minimum is the one with the smallest index.
fn region_center(voxels: &[VoxelCoord]) -> VoxelCoord {
    let n = voxels.len() as f64;
    let (sx, sy, sz) = voxels.iter().fold((0.0, 0.0, 0.0), |(a, b, c), v| {
        (a + v.x as f64, b + v.y as f64, c + v.z as f64)
    });
    let centroid = (sx / n, sy / n, sz / n);
    let mut best = voxels[0];
    let mut best_d = f64::INFINITY;
    for &v in voxels {
        let d =
            (v.x as f64 - centroid.0).powi(2) + (v.y as f64 - centroid.1).powi(2) + (v.z as f64 - centroid.2).powi(2);
        if d < best_d {
            best_d = d;
            best = v;
        }
    }
    best
}

fn jitter(c: VoxelCoord, halfwidth: usize, dims: Dims, rng: &mut impl Rng) -> VoxelCoord {
    if halfwidth == 0 {
        return c;
    }
    let h = halfwidth as i64;
    let mut axis = |v: usize, n: usize| -> usize {
        let shifted = v as i64 + rng.random_range(-h..=h);
        shifted.clamp(0, n as i64 - 1) as usize
    };
    let x = axis(c.x, dims.nx);
    let y = axis(c.y, dims.ny);
    let z = axis(c.z, dims.nz);
    VoxelCoord::new(x, y, z)
}

/// Draws one step's clicks from sorted error regions.
pub fn sample_clicks(regions: &[ErrorRegion], cfg: &OracleConfig, dims: Dims, rng: &mut impl Rng) -> ClickDelta {
    let mut delta = ClickDelta::default();
    match cfg.mode {
        InteractionMode::Good => {
            for region in regions.iter().take(cfg.n_click) {
                let click = jitter(region.center, cfg.noise_halfwidth, dims, rng);
                let label = match region.kind {
                    ErrorKind::FalseNegative => HintLabel::Object,
                    ErrorKind::FalsePositive => HintLabel::Background,
                };
                delta.hints.insert(label, click);
            }
        }
        InteractionMode::Bad => {
            for _ in 0..cfg.n_click {
                let c = dims.coord(rng.random_range(0..dims.len()));
                let label = if rng.random_bool(0.5) {
                    HintLabel::Object
                } else {
                    HintLabel::Background
                };
                delta.hints.insert(label, c);
            }
        }
        InteractionMode::Without => delta.fill_noise = true,
    }
    delta
}

/// Oracle with its own seeded random stream, one per episode.
#[derive(Debug, Clone)]
pub struct ClickOracle {
    cfg: OracleConfig,
    rng: ChaCha8Rng,
}

impl ClickOracle {
    pub fn new(cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn clicks(&mut self, pred: &LabelMask, truth: &LabelMask) -> Result<ClickDelta> {
        let regions = match self.cfg.mode {
            InteractionMode::Good => label_error_regions(pred, truth, self.cfg.connectivity)?,
            _ => Vec::new(),
        };
        Ok(sample_clicks(&regions, &self.cfg, pred.dims(), &mut self.rng))
    }
}
