//! Phantom datasets on disk: RV3D volumes plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::{initial_segmentation, InitMethod};
use super::phantom::{generate_phantom, PhantomConfig};
use super::preprocess::{preprocess, zscore};
use super::rv3d::{self, VolumeKind};
use crate::env::EpisodeInput;
use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMask, ProbabilityMap, Volume3D};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train1: Vec<usize>,
    pub train2: Vec<usize>,
    pub test: Vec<usize>,
}

/// Two disjoint training sets of `n_train` ids each; the rest is test.
pub fn split_dataset(ids: &[usize], n_train: usize, seed: u64) -> Result<Split> {
    if ids.len() < 2 * n_train + 1 {
        return Err(Error::Dataset(format!(
            "{} ids cannot hold two training sets of {n_train} and a test set",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(2 * n_train);
    let train2 = shuffled.split_off(n_train);
    Ok(Split {
        train1: shuffled,
        train2,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_prob_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub seed: u64,
    /// Intensity mean and deviation removed by the z-score step.
    pub normalization: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub count: usize,
    pub n_train: usize,
    pub phantom: PhantomConfig,
    /// Resize target; the phantom grid when unset.
    pub target_dims: Option<Dims>,
    /// Largest random margin kept around the cropped region.
    pub extension: usize,
    pub initial: InitMethod,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 60,
            n_train: 20,
            phantom: PhantomConfig::default(),
            target_dims: None,
            extension: 10,
            initial: InitMethod::Bg,
            seed: 0,
        }
    }
}

/// Phantoms after preprocessing and dataset-wide normalisation.
pub fn generate_cases(cfg: &DatasetConfig) -> Result<(Vec<(Volume3D, LabelMask)>, [f64; 2])> {
    if cfg.count == 0 {
        return Err(Error::Dataset("count must be positive".into()));
    }
    let target = cfg.target_dims.unwrap_or(cfg.phantom.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut images = Vec::with_capacity(cfg.count);
    let mut labels = Vec::with_capacity(cfg.count);
    for id in 0..cfg.count {
        let phantom = PhantomConfig {
            seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(id as u64),
            ..cfg.phantom.clone()
        };
        let (image, truth) = generate_phantom(&phantom)?;
        let (image, truth) = if target == phantom.dims && cfg.extension == 0 {
            (image, truth)
        } else {
            preprocess(&image, &truth, cfg.extension, target, &mut rng)?
        };
        images.push(image);
        labels.push(truth);
    }
    let (mean, std) = zscore(&mut images)?;
    Ok((images.into_iter().zip(labels).collect(), [mean, std]))
}

/// In-memory episode inputs built from generated phantoms.
pub fn phantom_suite(cfg: &DatasetConfig) -> Result<Vec<EpisodeInput>> {
    let (cases, _) = generate_cases(cfg)?;
    cases
        .into_iter()
        .map(|(image, truth)| {
            let initial = initial_segmentation(&image, &cfg.initial)?;
            EpisodeInput::new(image, initial, truth)
        })
        .collect()
}

/// Writes volumes and `manifest.json` under `root`.
pub fn generate_dataset(root: &Path, cfg: &DatasetConfig) -> Result<DatasetManifest> {
    let (cases, normalization) = generate_cases(cfg)?;
    let ids: Vec<usize> = (0..cases.len()).collect();
    let split = split_dataset(&ids, cfg.n_train, cfg.seed)?;
    let mut entries = Vec::with_capacity(cases.len());
    for (id, (image, truth)) in cases.iter().enumerate() {
        let image_path = PathBuf::from(format!("volumes/case_{id:04}_image.rv3d"));
        let label_path = PathBuf::from(format!("volumes/case_{id:04}_label.rv3d"));
        rv3d::write(&root.join(&image_path), image, VolumeKind::Image)?;
        rv3d::write(&root.join(&label_path), truth, VolumeKind::Label)?;
        let initial_prob_path = match &cfg.initial {
            InitMethod::Bg => None,
            method => {
                let path = PathBuf::from(format!("volumes/case_{id:04}_init.rv3d"));
                let p = initial_segmentation(image, method)?;
                rv3d::write(&root.join(&path), &p, VolumeKind::Prob)?;
                Some(path)
            }
        };
        entries.push(ManifestEntry {
            id,
            image_path,
            label_path,
            initial_prob_path,
        });
    }
    let manifest = DatasetManifest {
        entries,
        split,
        seed: cfg.seed,
        normalization,
    };
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A manifest with its volumes loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub cases: Vec<EpisodeInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train1,
    Train2,
    Test,
    All,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train1" => Ok(Self::Train1),
            "train2" => Ok(Self::Train2),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut cases = Vec::with_capacity(manifest.entries.len());
        for (pos, e) in manifest.entries.iter().enumerate() {
            if e.id != pos {
                return Err(Error::format(&path, format!("entry {pos} has id {}", e.id)));
            }
            let image = rv3d::read_kind(&root.join(&e.image_path), VolumeKind::Image)?;
            let truth = LabelMask::new(rv3d::read_kind(&root.join(&e.label_path), VolumeKind::Label)?)?;
            let initial = match &e.initial_prob_path {
                None => ProbabilityMap::filled(image.dims(), 0.0)?,
                Some(p) => ProbabilityMap::new(rv3d::read_kind(&root.join(p), VolumeKind::Prob)?)?,
            };
            cases.push(EpisodeInput::new(image, initial, truth)?);
        }
        Ok(Self { manifest, cases })
    }

    pub fn ids(&self, split: SplitName) -> Vec<usize> {
        let s = &self.manifest.split;
        match split {
            SplitName::Train1 => s.train1.clone(),
            SplitName::Train2 => s.train2.clone(),
            SplitName::Test => s.test.clone(),
            SplitName::All => (0..self.cases.len()).collect(),
        }
    }

    pub fn select(&self, split: SplitName) -> Result<Vec<EpisodeInput>> {
        self.ids(split)
            .into_iter()
            .map(|i| {
                self.cases
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Dataset(format!("split refers to missing case {i}")))
            })
            .collect()
    }
}
