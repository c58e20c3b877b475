//! Geodesic distance fields and the two-channel click encoding.
//!
//! A path between voxels costs the sum over its grid edges of
//! `spatial_len + lambda * |I(u) - I(w)|`. Hint maps are the minimum such
//! cost from every voxel to the nearest click of a class, scaled by the
//! map's maximum so both channels lie in `[0, 1]`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Connectivity, Dims, Volume3D, VoxelCoord};

/// Fields whose maximum falls below this are treated as all-zero.
const FLAT_FIELD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeodesicBackend {
    ExactDijkstra,
    /// Alternating forward/backward sweeps; more passes approach the exact field.
    RasterScan {
        passes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicConfig {
    pub connectivity: Connectivity,
    pub lambda: f64,
    pub backend: GeodesicBackend,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self {
            connectivity: Connectivity::TwentySix,
            lambda: 1.0,
            backend: GeodesicBackend::ExactDijkstra,
        }
    }
}

impl GeodesicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let GeodesicBackend::RasterScan { passes: 0 } = self.backend {
            return Err(Error::Config("raster scan needs at least one pass".into()));
        }
        Ok(())
    }
}

/// Precomputed neighbour table: linear offset, coordinate offset, spatial length.
struct Stencil {
    entries: Vec<([i64; 3], f64)>,
}

impl Stencil {
    fn new(connectivity: Connectivity) -> Self {
        let entries = connectivity
            .offsets()
            .into_iter()
            .map(|o| {
                let sq = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64;
                (o, sq.sqrt())
            })
            .collect();
        Self { entries }
    }
}

#[inline]
fn edge_cost(spatial: f64, lambda: f64, a: f64, b: f64) -> f64 {
    spatial + lambda * (a - b).abs()
}

#[derive(Clone, Copy)]
struct Frontier {
    cost: f64,
    index: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // Min-heap on cost.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Minimum path cost from any seed to every voxel.
pub fn geodesic_field(image: &Volume3D, seeds: &[VoxelCoord], cfg: &GeodesicConfig) -> Result<Volume3D> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let dims = image.dims();
    let mut dist = vec![f64::INFINITY; dims.len()];
    for &s in seeds {
        dist[dims.checked_index(s)?] = 0.0;
    }
    let stencil = Stencil::new(cfg.connectivity);
    match cfg.backend {
        GeodesicBackend::ExactDijkstra => dijkstra(image, &stencil, cfg.lambda, &mut dist),
        GeodesicBackend::RasterScan { passes } => raster_scan(image, &stencil, cfg.lambda, passes, &mut dist),
    }
    Volume3D::new(dims, dist)
}

fn dijkstra(image: &Volume3D, stencil: &Stencil, lambda: f64, dist: &mut [f64]) {
    let dims = image.dims();
    let values = image.data();
    let mut heap: BinaryHeap<Frontier> = dist
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0.0)
        .map(|(index, _)| Frontier { cost: 0.0, index })
        .collect();
    let mut settled = vec![false; dist.len()];
    while let Some(Frontier { cost, index }) = heap.pop() {
        if settled[index] {
            continue;
        }
        settled[index] = true;
        let c = dims.coord(index);
        for &(o, spatial) in &stencil.entries {
            let (nx, ny, nz) = (c.x as i64 + o[0], c.y as i64 + o[1], c.z as i64 + o[2]);
            if !dims.contains(nx, ny, nz) {
                continue;
            }
            let n = dims.index(nx as usize, ny as usize, nz as usize);
            if settled[n] {
                continue;
            }
            let candidate = cost + edge_cost(spatial, lambda, values[index], values[n]);
            if candidate < dist[n] {
                dist[n] = candidate;
                heap.push(Frontier {
                    cost: candidate,
                    index: n,
                });
            }
        }
    }
}

fn raster_scan(image: &Volume3D, stencil: &Stencil, lambda: f64, passes: usize, dist: &mut [f64]) {
    let dims = image.dims();
    let values = image.data();
    // Offsets earlier in scan order drive the forward sweep, later ones the backward sweep.
    let linear = |o: &[i64; 3]| o[0] + dims.nx as i64 * (o[1] + dims.ny as i64 * o[2]);
    let (causal, anticausal): (Vec<_>, Vec<_>) = stencil.entries.iter().copied().partition(|(o, _)| linear(o) < 0);

    let relax = |dist: &mut [f64], index: usize, half: &[([i64; 3], f64)]| -> bool {
        let c = dims.coord(index);
        let mut best = dist[index];
        for &(o, spatial) in half {
            let (nx, ny, nz) = (c.x as i64 + o[0], c.y as i64 + o[1], c.z as i64 + o[2]);
            if !dims.contains(nx, ny, nz) {
                continue;
            }
            let n = dims.index(nx as usize, ny as usize, nz as usize);
            let candidate = dist[n] + edge_cost(spatial, lambda, values[index], values[n]);
            if candidate < best {
                best = candidate;
            }
        }
        let changed = best < dist[index];
        dist[index] = best;
        changed
    };

    for _ in 0..passes {
        let mut changed = false;
        for index in 0..dist.len() {
            changed |= relax(dist, index, &causal);
        }
        for index in (0..dist.len()).rev() {
            changed |= relax(dist, index, &anticausal);
        }
        if !changed {
            break;
        }
    }
}

/// Object and background click coordinates accumulated for one episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSets {
    pub object: Vec<VoxelCoord>,
    pub background: Vec<VoxelCoord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HintLabel {
    Object,
    Background,
}

impl HintSets {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a click; returns `false` when it was already present.
    pub fn insert(&mut self, label: HintLabel, c: VoxelCoord) -> bool {
        let set = match label {
            HintLabel::Object => &mut self.object,
            HintLabel::Background => &mut self.background,
        };
        if set.contains(&c) {
            false
        } else {
            set.push(c);
            true
        }
    }

    /// Merges another delta; returns the number of new clicks.
    pub fn extend(&mut self, other: &HintSets) -> usize {
        let mut added = 0;
        for &c in &other.object {
            added += self.insert(HintLabel::Object, c) as usize;
        }
        for &c in &other.background {
            added += self.insert(HintLabel::Background, c) as usize;
        }
        added
    }

    pub fn len(&self) -> usize {
        self.object.len() + self.background.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.object.clear();
        self.background.clear();
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        for &c in self.object.iter().chain(&self.background) {
            dims.checked_index(c)?;
        }
        Ok(())
    }
}

/// Normalised geodesic maps for both hint classes.
#[derive(Debug, Clone, PartialEq)]
pub struct HintMaps {
    pub object: Volume3D,
    pub background: Volume3D,
}

impl HintMaps {
    /// Uniform 1 in both channels: no clicks yet.
    pub fn empty(dims: Dims) -> Self {
        Self {
            object: Volume3D::filled(dims, 1.0),
            background: Volume3D::filled(dims, 1.0),
        }
    }
}

pub fn build_hint_maps(image: &Volume3D, hints: &HintSets, cfg: &GeodesicConfig) -> Result<HintMaps> {
    let dims = image.dims();
    hints.validate(dims)?;
    Ok(HintMaps {
        object: normalized_map(image, &hints.object, cfg)?,
        background: normalized_map(image, &hints.background, cfg)?,
    })
}

fn normalized_map(image: &Volume3D, seeds: &[VoxelCoord], cfg: &GeodesicConfig) -> Result<Volume3D> {
    if seeds.is_empty() {
        return Ok(Volume3D::filled(image.dims(), 1.0));
    }
    let field = geodesic_field(image, seeds, cfg)?;
    let (_, max) = field.min_max();
    if max <= FLAT_FIELD_EPS {
        return Ok(Volume3D::zeros(image.dims()));
    }
    Ok(field.map(|d| d / max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(values: &[f64]) -> Volume3D {
        Volume3D::new(Dims::new(values.len(), 1, 1).unwrap(), values.to_vec()).unwrap()
    }

    fn cfg6(lambda: f64) -> GeodesicConfig {
        GeodesicConfig {
            connectivity: Connectivity::Six,
            lambda,
            backend: GeodesicBackend::ExactDijkstra,
        }
    }

    /// Quadratic-time Dijkstra over an explicit edge list.
    fn brute_force(image: &Volume3D, seeds: &[VoxelCoord], cfg: &GeodesicConfig) -> Vec<f64> {
        let dims = image.dims();
        let n = dims.len();
        let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for u in 0..n {
            let cu = dims.coord(u);
            for w in 0..n {
                let cw = dims.coord(w);
                let d = [
                    cw.x as i64 - cu.x as i64,
                    cw.y as i64 - cu.y as i64,
                    cw.z as i64 - cu.z as i64,
                ];
                let cheb = d.iter().map(|v| v.abs()).max().unwrap();
                let manhattan: i64 = d.iter().map(|v| v.abs()).sum();
                let adjacent = match cfg.connectivity {
                    Connectivity::Six => manhattan == 1,
                    Connectivity::TwentySix => cheb == 1,
                };
                if adjacent {
                    let len = (manhattan as f64).sqrt();
                    let cost = len + cfg.lambda * (image.data()[u] - image.data()[w]).abs();
                    edges[u].push((w, cost));
                }
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        for s in seeds {
            dist[dims.index(s.x, s.y, s.z)] = 0.0;
        }
        for _ in 0..n {
            let Some(u) = (0..n)
                .filter(|&i| !done[i] && dist[i].is_finite())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
            else {
                break;
            };
            done[u] = true;
            for &(w, c) in &edges[u] {
                if dist[u] + c < dist[w] {
                    dist[w] = dist[u] + c;
                }
            }
        }
        dist
    }

    fn random_volume(rng: &mut ChaCha8Rng, max_side: usize) -> Volume3D {
        let dims = Dims::new(
            rng.random_range(1..=max_side),
            rng.random_range(1..=max_side),
            rng.random_range(1..=max_side),
        )
        .unwrap();
        Volume3D::from_fn(dims, |_, _, _| rng.random_range(-2.0..2.0))
    }

    fn random_seeds(rng: &mut ChaCha8Rng, dims: Dims, count: usize) -> Vec<VoxelCoord> {
        (0..count)
            .map(|_| dims.coord(rng.random_range(0..dims.len())))
            .collect()
    }

    #[test]
    fn uniform_line_reduces_to_grid_length() {
        for lambda in [0.0, 1.0, 7.5] {
            let f = geodesic_field(&line(&[3.0; 5]), &[VoxelCoord::new(0, 0, 0)], &cfg6(lambda)).unwrap();
            assert_eq!(f.data(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn intensity_steps_add_cost() {
        let f = geodesic_field(&line(&[0.0, 1.0, 0.0]), &[VoxelCoord::new(0, 0, 0)], &cfg6(1.0)).unwrap();
        assert_eq!(f.data(), &[0.0, 2.0, 4.0]);
    }

    #[test]
    fn empty_seed_list_is_an_error() {
        assert!(matches!(
            geodesic_field(&line(&[0.0; 3]), &[], &cfg6(1.0)),
            Err(Error::EmptySeeds)
        ));
    }

    #[test]
    fn hint_map_sentinel_and_normalisation() {
        let image = line(&[0.0; 4]);
        let maps = build_hint_maps(&image, &HintSets::new(), &cfg6(1.0)).unwrap();
        assert!(maps.object.data().iter().all(|&v| v == 1.0));
        assert!(maps.background.data().iter().all(|&v| v == 1.0));

        let mut hints = HintSets::new();
        hints.insert(HintLabel::Object, VoxelCoord::new(1, 0, 0));
        let maps = build_hint_maps(&image, &hints, &cfg6(1.0)).unwrap();
        assert_eq!(maps.object.get(1, 0, 0), 0.0);
        assert_eq!(maps.object.min_max().1, 1.0);
        assert!(maps.background.data().iter().all(|&v| v == 1.0));

        let mut two = HintSets::new();
        two.insert(HintLabel::Object, VoxelCoord::new(0, 0, 0));
        two.insert(HintLabel::Object, VoxelCoord::new(3, 0, 0));
        let maps = build_hint_maps(&image, &two, &cfg6(1.0)).unwrap();
        assert_eq!(maps.object.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn flat_field_normalises_to_zero() {
        let image = line(&[0.0]);
        let mut hints = HintSets::new();
        hints.insert(HintLabel::Background, VoxelCoord::new(0, 0, 0));
        let maps = build_hint_maps(&image, &hints, &cfg6(1.0)).unwrap();
        assert_eq!(maps.background.data(), &[0.0]);
    }

    #[test]
    fn out_of_bounds_hint_rejected() {
        let mut hints = HintSets::new();
        hints.insert(HintLabel::Object, VoxelCoord::new(9, 0, 0));
        assert!(build_hint_maps(&line(&[0.0; 3]), &hints, &cfg6(1.0)).is_err());
    }

    #[test]
    fn duplicate_hints_are_ignored() {
        let mut hints = HintSets::new();
        assert!(hints.insert(HintLabel::Object, VoxelCoord::new(1, 1, 1)));
        assert!(!hints.insert(HintLabel::Object, VoxelCoord::new(1, 1, 1)));
        assert!(hints.insert(HintLabel::Background, VoxelCoord::new(1, 1, 1)));
        assert_eq!(hints.len(), 2);
    }

    #[test]
    fn exact_matches_brute_force_on_random_volumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let image = random_volume(&mut rng, 5);
            let conn = if trial % 2 == 0 {
                Connectivity::Six
            } else {
                Connectivity::TwentySix
            };
            let cfg = GeodesicConfig {
                connectivity: conn,
                lambda: rng.random_range(0.0..3.0),
                backend: GeodesicBackend::ExactDijkstra,
            };
            let count = rng.random_range(1..4);
            let seeds = random_seeds(&mut rng, image.dims(), count);
            let fast = geodesic_field(&image, &seeds, &cfg).unwrap();
            let slow = brute_force(&image, &seeds, &cfg);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-9, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn raster_scan_never_underestimates_and_converges_on_smooth_volumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dims = Dims::new(8, 8, 6).unwrap();
            let (fx, fy, fz) = (
                rng.random_range(0.1..0.6),
                rng.random_range(0.1..0.6),
                rng.random_range(0.1..0.6),
            );
            let image = Volume3D::from_fn(dims, |x, y, z| {
                (fx * x as f64).sin() + (fy * y as f64).cos() + (fz * z as f64).sin()
            });
            let seeds = random_seeds(&mut rng, dims, 2);
            let exact = geodesic_field(&image, &seeds, &GeodesicConfig::default()).unwrap();
            let raster_cfg = GeodesicConfig {
                backend: GeodesicBackend::RasterScan { passes: 2 },
                ..GeodesicConfig::default()
            };
            let raster = geodesic_field(&image, &seeds, &raster_cfg).unwrap();
            for (r, e) in raster.data().iter().zip(exact.data()) {
                assert!(*r >= e - 1e-12);
                if *e > 0.0 {
                    assert!((r - e) / e <= 0.05, "raster {r} exact {e}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn adding_a_seed_never_increases_distances(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let image = random_volume(&mut rng, 5);
            let mut seeds = random_seeds(&mut rng, image.dims(), 2);
            let cfg = GeodesicConfig::default();
            let before = geodesic_field(&image, &seeds, &cfg).unwrap();
            seeds.extend(random_seeds(&mut rng, image.dims(), 1));
            let after = geodesic_field(&image, &seeds, &cfg).unwrap();
            for (a, b) in after.data().iter().zip(before.data()) {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn zero_lambda_is_spatial_distance(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let image = random_volume(&mut rng, 5);
            let flat = Volume3D::zeros(image.dims());
            let seeds = random_seeds(&mut rng, image.dims(), 2);
            let cfg = GeodesicConfig { lambda: 0.0, ..GeodesicConfig::default() };
            let a = geodesic_field(&image, &seeds, &cfg).unwrap();
            let b = geodesic_field(&flat, &seeds, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn field_is_locally_consistent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let image = random_volume(&mut rng, 5);
            let dims = image.dims();
            let seeds = random_seeds(&mut rng, dims, 1);
            let cfg = GeodesicConfig::default();
            let f = geodesic_field(&image, &seeds, &cfg).unwrap();
            for u in 0..dims.len() {
                let c = dims.coord(u);
                for o in cfg.connectivity.offsets() {
                    let (x, y, z) = (c.x as i64 + o[0], c.y as i64 + o[1], c.z as i64 + o[2]);
                    if !dims.contains(x, y, z) { continue; }
                    let w = dims.index(x as usize, y as usize, z as usize);
                    let len = ((o[0]*o[0] + o[1]*o[1] + o[2]*o[2]) as f64).sqrt();
                    let cost = len + cfg.lambda * (image.data()[u] - image.data()[w]).abs();
                    prop_assert!(f.data()[w] <= f.data()[u] + cost + 1e-9);
                }
            }
        }
    }
}
