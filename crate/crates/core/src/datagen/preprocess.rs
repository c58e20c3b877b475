//! Cropping, resizing and intensity normalisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMask, Volume3D};

/// Half-open box `[lo, hi)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn dims(&self) -> Dims {
        Dims {
            nx: self.hi[0] - self.lo[0],
            ny: self.hi[1] - self.lo[1],
            nz: self.hi[2] - self.lo[2],
        }
    }
}

/// Tight box around every nonzero voxel.
pub fn nonzero_bbox(v: &Volume3D) -> Option<BoundingBox> {
    let d = v.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, &x) in v.data().iter().enumerate() {
        if x != 0.0 {
            let c = d.coord(i);
            for (a, p) in [c.x, c.y, c.z].into_iter().enumerate() {
                lo[a] = lo[a].min(p);
                hi[a] = hi[a].max(p + 1);
            }
        }
    }
    (lo[0] != usize::MAX).then_some(BoundingBox { lo, hi })
}

pub fn crop(v: &Volume3D, b: &BoundingBox) -> Volume3D {
    Volume3D::from_fn(b.dims(), |x, y, z| v.get(x + b.lo[0], y + b.lo[1], z + b.lo[2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Resamples onto `target` with voxel centres aligned.
pub fn resize(v: &Volume3D, target: Dims, interp: Interpolation) -> Volume3D {
    let d = v.dims();
    if d == target {
        return v.clone();
    }
    let scale = |n: usize, m: usize| n as f64 / m as f64;
    let (sx, sy, sz) = (scale(d.nx, target.nx), scale(d.ny, target.ny), scale(d.nz, target.nz));
    Volume3D::from_fn(target, |x, y, z| {
        let (px, py, pz) = (
            (x as f64 + 0.5) * sx - 0.5,
            (y as f64 + 0.5) * sy - 0.5,
            (z as f64 + 0.5) * sz - 0.5,
        );
        match interp {
            Interpolation::Trilinear => v.sample_trilinear(px, py, pz),
            Interpolation::Nearest => v.sample_nearest(px, py, pz),
        }
    })
}

/// Crops image and labels to the image's nonzero box grown by a random
/// `0..=extension` voxels per side, then resizes both to `target`.
pub fn preprocess(
    image: &Volume3D,
    truth: &LabelMask,
    extension: usize,
    target: Dims,
    rng: &mut impl Rng,
) -> Result<(Volume3D, LabelMask)> {
    image.dims().ensure_same(truth.dims())?;
    let d = image.dims();
    let tight = nonzero_bbox(image).ok_or_else(|| Error::Dataset("image has no nonzero voxel".into()))?;
    let n = [d.nx, d.ny, d.nz];
    let mut b = tight;
    for a in 0..3 {
        b.lo[a] = b.lo[a].saturating_sub(rng.random_range(0..=extension));
        b.hi[a] = (b.hi[a] + rng.random_range(0..=extension)).min(n[a]);
    }
    let image = resize(&crop(image, &b), target, Interpolation::Trilinear);
    let labels = resize(&crop(truth, &b), target, Interpolation::Nearest);
    Ok((image, LabelMask::new(labels)?))
}

/// Shifts and scales every image so the pooled voxels have zero mean and
/// unit variance. Returns `(mean, std)` of the input.
pub fn zscore(images: &mut [Volume3D]) -> Result<(f64, f64)> {
    let count: usize = images.iter().map(Volume3D::len).sum();
    if count == 0 {
        return Err(Error::Dataset("no voxels to normalise".into()));
    }
    let mean = images.iter().map(Volume3D::sum).sum::<f64>() / count as f64;
    let var = images
        .iter()
        .flat_map(|v| v.data().iter())
        .map(|&x| (x - mean) * (x - mean))
        .sum::<f64>()
        / count as f64;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::Dataset("images are constant".into()));
    }
    for v in images.iter_mut() {
        v.data_mut().iter_mut().for_each(|x| *x = (*x - mean) / std);
    }
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d(nx: usize, ny: usize, nz: usize) -> Dims {
        Dims::new(nx, ny, nz).unwrap()
    }

    #[test]
    fn tight_volume_at_target_is_unchanged() {
        let v = Volume3D::from_fn(d(4, 3, 2), |x, y, z| 1.0 + (x + 4 * y + 12 * z) as f64);
        let t = LabelMask::new(Volume3D::from_fn(d(4, 3, 2), |x, _, _| (x % 2) as f64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = preprocess(&v, &t, 0, d(4, 3, 2), &mut rng).unwrap();
        assert_eq!(a, v);
        assert_eq!(b, t);
    }

    #[test]
    fn zero_margin_is_cropped() {
        let inner = d(3, 4, 2);
        let v = Volume3D::from_fn(d(13, 14, 12), |x, y, z| {
            let inside = (5..8).contains(&x) && (5..9).contains(&y) && (5..7).contains(&z);
            if inside {
                1.0 + x as f64
            } else {
                0.0
            }
        });
        let b = nonzero_bbox(&v).unwrap();
        assert_eq!(b.lo, [5, 5, 5]);
        assert_eq!(b.dims(), inner);
        let c = crop(&v, &b);
        assert!(c.data().iter().all(|&x| x != 0.0));
    }

    #[test]
    fn all_zero_is_an_error() {
        let v = Volume3D::zeros(d(3, 3, 3));
        let t = LabelMask::new(v.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(preprocess(&v, &t, 2, d(3, 3, 3), &mut rng).is_err());
    }

    #[test]
    fn zscore_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vols: Vec<Volume3D> = (0..5)
            .map(|_| Volume3D::from_fn(d(5, 4, 3), |_, _, _| rng.random::<f64>() * 7.0 + 3.0))
            .collect();
        zscore(&mut vols).unwrap();
        let all: Vec<f64> = vols.iter().flat_map(|v| v.data().to_vec()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 1e-9);
        assert!((var - 1.0).abs() <= 1e-9);
    }

    proptest! {
        #[test]
        fn crop_keeps_every_nonzero_voxel(cells in proptest::collection::vec(0u8..6, 60), ext in 0usize..3, seed: u64) {
            let dims = d(5, 4, 3);
            let v = Volume3D::new(dims, cells.iter().map(|&c| if c == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
            prop_assume!(nonzero_bbox(&v).is_some());
            let t = LabelMask::new(v.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = nonzero_bbox(&v).unwrap();
            let total = v.sum();
            prop_assert_eq!(crop(&v, &b).sum(), total);
            let (_, labels) = preprocess(&v, &t, ext, dims, &mut rng).unwrap();
            prop_assert!(labels.data().iter().all(|&x| x == 0.0 || x == 1.0));
        }

        #[test]
        fn resize_keeps_bounds(vals in proptest::collection::vec(0.0f64..=1.0, 24), nx in 1usize..9, ny in 1usize..9, nz in 1usize..5) {
            let v = Volume3D::new(d(4, 3, 2), vals).unwrap();
            let r = resize(&v, d(nx, ny, nz), Interpolation::Trilinear);
            prop_assert!(r.data().iter().all(|x| (0.0..=1.0).contains(x)));
            let labels = v.map(|x| (x > 0.5) as u8 as f64);
            let r = resize(&labels, d(nx, ny, nz), Interpolation::Nearest);
            prop_assert!(r.data().iter().all(|&x| x == 0.0 || x == 1.0));
        }
    }
}
