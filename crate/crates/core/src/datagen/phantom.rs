//! Synthetic blob phantoms standing in for real scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMask, Volume3D};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomShape {
    #[default]
    Sphere,
    Ellipsoid,
    TwoBlob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub shape: PhantomShape,
    /// Foreground intensity above the zero-mean background.
    pub contrast: f64,
    pub noise_sigma: f64,
    /// Relative amplitude of the low-frequency boundary ripple.
    pub perturbation: f64,
    /// Fixed radius in voxels for spheres; drawn per phantom when unset.
    pub radius: Option<f64>,
    /// Place the object at the grid centre instead of a random position.
    pub centered: bool,
    /// Bright blobs that are not part of the object.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: Dims { nx: 24, ny: 24, nz: 12 },
            shape: PhantomShape::Sphere,
            contrast: 1.0,
            noise_sigma: 0.3,
            perturbation: 0.15,
            radius: None,
            centered: false,
            distractors: 0,
            seed: 0,
        }
    }
}

/// An ellipsoid with a rippled surface.
#[derive(Debug, Clone)]
struct Blob {
    center: [f64; 3],
    radii: [f64; 3],
    ripple: Vec<([f64; 3], f64, f64)>,
    amplitude: f64,
}

impl Blob {
    fn random(center: [f64; 3], radii: [f64; 3], amplitude: f64, rng: &mut ChaCha8Rng) -> Self {
        let ripple = (0..3)
            .map(|_| {
                let dir: [f64; 3] = UnitSphere.sample(rng);
                (
                    dir,
                    rng.random_range(2.0..4.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self {
            center,
            radii,
            ripple,
            amplitude,
        }
    }

    fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let d = [
            (x as f64 - self.center[0]) / self.radii[0],
            (y as f64 - self.center[1]) / self.radii[1],
            (z as f64 - self.center[2]) / self.radii[2],
        ];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if r == 0.0 {
            return true;
        }
        let ripple = if self.amplitude == 0.0 {
            0.0
        } else {
            let u = [d[0] / r, d[1] / r, d[2] / r];
            self.ripple
                .iter()
                .map(|(v, freq, phase)| (freq * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) + phase).sin())
                .sum::<f64>()
                / self.ripple.len() as f64
        };
        r <= 1.0 + self.amplitude * ripple
    }
}

fn random_center(dims: Dims, radii: [f64; 3], centered: bool, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let n = [dims.nx, dims.ny, dims.nz];
    std::array::from_fn(|a| {
        let mid = (n[a] / 2) as f64;
        let lo = radii[a] + 1.0;
        let hi = n[a] as f64 - 2.0 - radii[a];
        if centered || lo >= hi {
            mid
        } else {
            rng.random_range(lo..=hi)
        }
    })
}

/// Generates `(image, truth)`; deterministic in `cfg.seed`.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(Volume3D, LabelMask)> {
    let dims = cfg.dims;
    if dims.nx < 4 || dims.ny < 4 || dims.nz < 4 {
        return Err(Error::InvalidDims(format!(
            "phantoms need at least 4 voxels per axis, got {dims}"
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.perturbation >= 0.0 && cfg.perturbation < 1.0) {
        return Err(Error::Config(
            "noise must be nonnegative and perturbation in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = [dims.nx as f64, dims.ny as f64, dims.nz as f64];
    let min_extent = n.iter().copied().fold(f64::INFINITY, f64::min);
    let amp = cfg.perturbation;

    let mut blobs = Vec::new();
    match cfg.shape {
        PhantomShape::Sphere => {
            let r = cfg.radius.unwrap_or_else(|| min_extent * rng.random_range(0.2..0.35));
            let radii = [r; 3];
            let c = random_center(dims, radii, cfg.centered, &mut rng);
            blobs.push(Blob::random(c, radii, amp, &mut rng));
        }
        PhantomShape::Ellipsoid => {
            let radii: [f64; 3] = std::array::from_fn(|a| n[a] * rng.random_range(0.15..0.33));
            let c = random_center(dims, radii, cfg.centered, &mut rng);
            blobs.push(Blob::random(c, radii, amp, &mut rng));
        }
        PhantomShape::TwoBlob => {
            for _ in 0..2 {
                let r = cfg.radius.unwrap_or_else(|| min_extent * rng.random_range(0.15..0.25));
                let radii = [r; 3];
                let c = random_center(dims, radii, false, &mut rng);
                blobs.push(Blob::random(c, radii, amp, &mut rng));
            }
        }
    }
    let truth: Vec<bool> = (0..dims.len())
        .map(|i| {
            let c = dims.coord(i);
            blobs.iter().any(|b| b.contains(c.x, c.y, c.z))
        })
        .collect();
    let count = truth.iter().filter(|&&t| t).count();
    if count == 0 || count == dims.len() {
        return Err(Error::Config(format!(
            "phantom foreground covers {count} of {} voxels",
            dims.len()
        )));
    }

    // Distractors are rejected if they would touch the object.
    let mut clutter: Vec<Blob> = Vec::new();
    for _ in 0..cfg.distractors {
        for _attempt in 0..50 {
            let r = min_extent * rng.random_range(0.12..0.22);
            let radii = [r; 3];
            let c = random_center(dims, radii, false, &mut rng);
            let blob = Blob::random(c, radii, amp, &mut rng);
            let grown = Blob {
                radii: radii.map(|r| r + 1.5),
                ..blob.clone()
            };
            let clash = (0..dims.len()).any(|i| {
                let v = dims.coord(i);
                truth[i] && grown.contains(v.x, v.y, v.z)
            });
            if !clash {
                clutter.push(blob);
                break;
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let image: Vec<f64> = (0..dims.len())
        .map(|i| {
            let c = dims.coord(i);
            let bright = truth[i] || clutter.iter().any(|b| b.contains(c.x, c.y, c.z));
            let base = if bright { cfg.contrast } else { 0.0 };
            if cfg.noise_sigma == 0.0 {
                base
            } else {
                base + noise.sample(&mut rng)
            }
        })
        .collect();
    Ok((Volume3D::new(dims, image)?, LabelMask::from_bools(dims, &truth)?))
}
