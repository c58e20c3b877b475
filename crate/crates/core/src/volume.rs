//! Dense 3D grids shared by every stage of the pipeline.
//!
//! All volumes use one global linear layout: x varies fastest, so voxel
//! `(x, y, z)` lives at `x + nx * (y + ny * z)`. File formats, network
//! tensors and slice payloads all rely on this ordering.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidDims(format!("{nx}x{ny}x{nz}")));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coord(&self, index: usize) -> VoxelCoord {
        let x = index % self.nx;
        let rest = index / self.nx;
        VoxelCoord::new(x, rest % self.ny, rest / self.ny)
    }

    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0 && y >= 0 && z >= 0 && (x as usize) < self.nx && (y as usize) < self.ny && (z as usize) < self.nz
    }

    /// Checks a coordinate and returns its linear index.
    pub fn checked_index(&self, c: VoxelCoord) -> Result<usize> {
        if c.x < self.nx && c.y < self.ny && c.z < self.nz {
            Ok(self.index(c.x, c.y, c.z))
        } else {
            Err(Error::OutOfBounds {
                x: c.x as i64,
                y: c.y as i64,
                z: c.z as i64,
                dims: *self,
            })
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn ensure_same(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::DimsMismatch {
                expected: *self,
                actual: other,
            })
        }
    }
}

impl TryFrom<[usize; 3]> for Dims {
    type Error = Error;

    fn try_from([nx, ny, nz]: [usize; 3]) -> Result<Self> {
        Self::new(nx, ny, nz)
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        [d.nx, d.ny, d.nz]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Integer voxel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelCoord {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }
}

/// Neighbourhood used for path costs and connected components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets `(dx, dy, dz)` excluding the origin.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::Config(format!("connectivity must be 6 or 26, got {other}"))),
        }
    }
}

/// Dense scalar grid in x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DataLength {
                dims,
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn at(&self, c: VoxelCoord) -> f64 {
        self.get(c.x, c.y, c.z)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.dims.index(x, y, z);
        self.data[i] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Voxelwise combination of two equally sized volumes.
    pub fn zip_map(&self, other: &Volume3D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.dims.ensure_same(other.dims)?;
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Trilinear interpolation at a continuous position; coordinates outside
    /// the grid are clamped to the border.
    pub fn sample_trilinear(&self, x: f64, y: f64, z: f64) -> f64 {
        let axis = |v: f64, n: usize| -> (usize, usize, f64) {
            let v = v.clamp(0.0, (n - 1) as f64);
            let lo = v.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, v - lo as f64)
        };
        let (x0, x1, fx) = axis(x, self.dims.nx);
        let (y0, y1, fy) = axis(y, self.dims.ny);
        let (z0, z1, fz) = axis(z, self.dims.nz);
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
        let plane = |z: usize| {
            lerp(
                lerp(self.get(x0, y0, z), self.get(x1, y0, z), fx),
                lerp(self.get(x0, y1, z), self.get(x1, y1, z), fx),
                fy,
            )
        };
        lerp(plane(z0), plane(z1), fz)
    }

    /// Value of the voxel nearest to a continuous position, clamped to the grid.
    pub fn sample_nearest(&self, x: f64, y: f64, z: f64) -> f64 {
        let r = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
        self.get(r(x, self.dims.nx), r(y, self.dims.ny), r(z, self.dims.nz))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Maps every value through `min(max(v, lo), hi)`.
///
/// Panics when `lo > hi`.
pub fn elementwise_clip(v: &Volume3D, lo: f64, hi: f64) -> Volume3D {
    assert!(lo <= hi, "clip bounds inverted: {lo} > {hi}");
    v.map(|x| clip(x, lo, hi))
}

#[inline]
pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Foreground probabilities, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap(Volume3D);

impl ProbabilityMap {
    pub fn new(volume: Volume3D) -> Result<Self> {
        if let Some((index, &value)) = volume
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidValue {
                what: "[0, 1]",
                index,
                value,
            });
        }
        Ok(Self(volume))
    }

    pub fn filled(dims: Dims, p: f64) -> Result<Self> {
        Self::new(Volume3D::filled(dims, p))
    }

    /// Clamps arbitrary values into `[0, 1]`.
    pub fn from_clipped(volume: Volume3D) -> Self {
        Self(elementwise_clip(&volume, 0.0, 1.0))
    }

    pub fn volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }
}

impl Deref for ProbabilityMap {
    type Target = Volume3D;

    fn deref(&self) -> &Volume3D {
        &self.0
    }
}

/// Binary mask, every value exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask(Volume3D);

impl LabelMask {
    pub fn new(volume: Volume3D) -> Result<Self> {
        if let Some((index, &value)) = volume.data().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidValue {
                what: "{0, 1}",
                index,
                value,
            });
        }
        Ok(Self(volume))
    }

    pub fn from_bools(dims: Dims, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self(Volume3D::new(dims, data)?))
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.0.data()[index] == 1.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }
}

impl Deref for LabelMask {
    type Target = Volume3D;

    fn deref(&self) -> &Volume3D {
        &self.0
    }
}

/// Threshold probabilities into a mask; `p >= threshold` is foreground.
pub fn binarize(p: &ProbabilityMap, threshold: f64) -> LabelMask {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    LabelMask(p.map(|v| if v >= threshold { 1.0 } else { 0.0 }))
}
