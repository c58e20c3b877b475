//! Random flips and in-plane rotation applied identically to image,
//! probability and labels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EpisodeInput;
use crate::volume::{LabelMask, ProbabilityMap, Volume3D};

/// Largest rotation angle drawn by [`Augmentation::sample`].
pub const MAX_ROTATION: f64 = std::f64::consts::PI / 8.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Mirror along x, y, z.
    pub flips: [bool; 3],
    /// Rotation about the z axis through the volume centre, in radians.
    pub angle: f64,
}

impl Augmentation {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            flips: [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)],
            angle: rng.random_range(-MAX_ROTATION..=MAX_ROTATION),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.flips == [false; 3] && self.angle == 0.0
    }

    fn transform(&self, v: &Volume3D, nearest: bool) -> Volume3D {
        let d = v.dims();
        let flipped = if self.flips == [false; 3] {
            v.clone()
        } else {
            let f = |c: usize, n: usize, on: bool| if on { n - 1 - c } else { c };
            Volume3D::from_fn(d, |x, y, z| {
                v.get(
                    f(x, d.nx, self.flips[0]),
                    f(y, d.ny, self.flips[1]),
                    f(z, d.nz, self.flips[2]),
                )
            })
        };
        if self.angle == 0.0 {
            return flipped;
        }
        let (s, c) = self.angle.sin_cos();
        let cx = (d.nx - 1) as f64 / 2.0;
        let cy = (d.ny - 1) as f64 / 2.0;
        Volume3D::from_fn(d, |x, y, z| {
            // Pull back through the inverse rotation.
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + c * dx + s * dy;
            let sy = cy - s * dx + c * dy;
            if nearest {
                flipped.sample_nearest(sx, sy, z as f64)
            } else {
                flipped.sample_trilinear(sx, sy, z as f64)
            }
        })
    }

    pub fn apply(&self, input: &EpisodeInput) -> EpisodeInput {
        if self.is_identity() {
            return input.clone();
        }
        EpisodeInput {
            image: self.transform(&input.image, false),
            initial: ProbabilityMap::from_clipped(self.transform(&input.initial, false)),
            truth: LabelMask::new(self.transform(&input.truth, true)).expect("nearest resampling keeps labels binary"),
        }
    }
}

/// Draws a random augmentation and applies it.
pub fn augment(input: &EpisodeInput, rng: &mut impl Rng) -> EpisodeInput {
    Augmentation::sample(rng).apply(input)
}
