//! Coarse initial segmentations fed to the refinement loop.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::rv3d::{self, VolumeKind};
use crate::error::{Error, Result};
use crate::volume::{ProbabilityMap, Volume3D};

/// Slope of the logistic applied to min-max normalised intensity.
pub const SIGMOID_GAIN: f64 = 10.0;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method", content = "path")]
pub enum InitMethod {
    /// Everything background.
    #[default]
    Bg,
    Threshold,
    BlurThreshold,
    /// A probability map stored as an RV3D file.
    External(PathBuf),
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bg" => Ok(Self::Bg),
            "threshold" => Ok(Self::Threshold),
            "blur-threshold" => Ok(Self::BlurThreshold),
            other => match other.strip_prefix("external:") {
                Some(path) => Ok(Self::External(path.into())),
                None => Err(Error::Config(format!(
                    "unknown initial method {other:?}; expected bg, threshold, blur-threshold or external:PATH"
                ))),
            },
        }
    }
}

fn sigmoid_of_normalised(v: &Volume3D) -> ProbabilityMap {
    let (lo, hi) = v.min_max();
    let span = hi - lo;
    ProbabilityMap::from_clipped(v.map(|x| {
        let t = if span > 0.0 { (x - lo) / span } else { 0.0 };
        1.0 / (1.0 + (-SIGMOID_GAIN * (t - 0.5)).exp())
    }))
}

/// Mean over the 3x3x3 neighbourhood clipped to the grid.
pub fn box_blur(v: &Volume3D) -> Volume3D {
    let d = v.dims();
    Volume3D::from_fn(d, |x, y, z| {
        let (mut s, mut n) = (0.0, 0usize);
        for zz in z.saturating_sub(1)..=(z + 1).min(d.nz - 1) {
            for yy in y.saturating_sub(1)..=(y + 1).min(d.ny - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(d.nx - 1) {
                    s += v.get(xx, yy, zz);
                    n += 1;
                }
            }
        }
        s / n as f64
    })
}

pub fn initial_segmentation(image: &Volume3D, method: &InitMethod) -> Result<ProbabilityMap> {
    match method {
        InitMethod::Bg => ProbabilityMap::filled(image.dims(), 0.0),
        InitMethod::Threshold => Ok(sigmoid_of_normalised(image)),
        InitMethod::BlurThreshold => Ok(sigmoid_of_normalised(&box_blur(image))),
        InitMethod::External(path) => {
            let v = rv3d::read_kind(path, VolumeKind::Prob)?;
            image.dims().ensure_same(v.dims())?;
            ProbabilityMap::new(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::phantom::{generate_phantom, PhantomConfig};
    use crate::metrics::dice;
    use crate::volume::binarize;

    #[test]
    fn bg_is_all_zero() {
        let (image, _) = generate_phantom(&PhantomConfig::default()).unwrap();
        let p = initial_segmentation(&image, &InitMethod::Bg).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_separates_noiseless_phantom() {
        let cfg = PhantomConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let (image, truth) = generate_phantom(&cfg).unwrap();
        let p = initial_segmentation(&image, &InitMethod::Threshold).unwrap();
        assert_eq!(dice(&binarize(&p, 0.5), &truth).unwrap(), 1.0);
    }

    #[test]
    fn blur_threshold_is_a_valid_map() {
        let (image, _) = generate_phantom(&PhantomConfig::default()).unwrap();
        let p = initial_segmentation(&image, &InitMethod::BlurThreshold).unwrap();
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn external_round_trip_is_bit_identical() {
        let (image, _) = generate_phantom(&PhantomConfig::default()).unwrap();
        // f32-representable values survive storage unchanged.
        let p = initial_segmentation(&image, &InitMethod::Threshold)
            .unwrap()
            .map(|v| v as f32 as f64);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.rv3d");
        rv3d::write(&path, &p, VolumeKind::Prob).unwrap();
        let back = initial_segmentation(&image, &InitMethod::External(path)).unwrap();
        assert_eq!(back.volume(), &p);
    }

    #[test]
    fn missing_external_file_is_an_error() {
        let (image, _) = generate_phantom(&PhantomConfig::default()).unwrap();
        assert!(initial_segmentation(&image, &InitMethod::External("/nonexistent.rv3d".into())).is_err());
    }

    #[test]
    fn parses_method_names() {
        assert_eq!("bg".parse::<InitMethod>().unwrap(), InitMethod::Bg);
        assert_eq!(
            "external:a/b.rv3d".parse::<InitMethod>().unwrap(),
            InitMethod::External("a/b.rv3d".into())
        );
        assert!("otsu".parse::<InitMethod>().is_err());
    }
}
