//! A single phantom, the bundled model and a click-refine loop, rendered
//! as RGBA slices. The wasm build wraps [`Demo`] for `web/index.html`;
//! everything else is plain Rust so it can be tested natively.

use iterseg::benchmark::benchmark_phantom;
use iterseg::datagen::{phantom_suite, DatasetConfig, InitMethod};
use iterseg::geodesy::HintLabel;
use iterseg::neural::Checkpoint;
use iterseg::session::{extract_slice, slice_shape, Axis, InteractiveSession};
use iterseg::volume::{binarize, LabelMask, VoxelCoord};

#[cfg(target_arch = "wasm32")]
mod web;

const MODEL_INDEX: &str = include_str!("../assets/model.json");
const MODEL_BLOB: &[u8] = include_bytes!("../assets/model.bin");

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Engine(#[from] iterseg::Error),
    #[error("slice {0} is outside the volume")]
    Slice(usize),
}

pub type Result<T> = std::result::Result<T, DemoError>;

pub fn bundled_model() -> Result<Checkpoint> {
    Ok(Checkpoint::from_bytes(MODEL_INDEX, MODEL_BLOB)?)
}

pub struct Demo {
    session: InteractiveSession,
    truth: LabelMask,
    model: Checkpoint,
    /// Image intensity range used for the grey levels.
    range: (f64, f64),
}

impl Demo {
    /// Fresh phantom `seed` with an empty initial segmentation.
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_model(seed, bundled_model()?)
    }

    pub fn with_model(seed: u64, model: Checkpoint) -> Result<Self> {
        let cfg = DatasetConfig {
            count: 1,
            n_train: 0,
            phantom: benchmark_phantom(),
            target_dims: None,
            extension: 0,
            initial: InitMethod::Bg,
            seed,
        };
        let case = phantom_suite(&cfg)?.remove(0);
        let range = case
            .image
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Ok(Self {
            session: InteractiveSession::new(case.image, case.initial, Some(case.truth.clone()))?,
            truth: case.truth,
            model,
            range,
        })
    }

    /// `(nx, ny, nz)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let d = self.session.dims();
        (d.nx, d.ny, d.nz)
    }

    pub fn truth(&self) -> &LabelMask {
        &self.truth
    }

    pub fn steps(&self) -> usize {
        self.session.step_count()
    }

    pub fn dice(&self) -> Result<f64> {
        Ok(self.session.dice()?.unwrap_or(0.0))
    }

    /// Marks a voxel as object or background; false if it was already marked.
    pub fn click(&mut self, x: usize, y: usize, z: usize, object: bool) -> Result<bool> {
        let label = if object {
            HintLabel::Object
        } else {
            HintLabel::Background
        };
        Ok(self.session.add_click(label, VoxelCoord::new(x, y, z))?)
    }

    /// One refinement step; returns the new dice.
    pub fn refine(&mut self) -> Result<f64> {
        let report = self.session.step(&self.model)?;
        Ok(report.dice.unwrap_or(0.0))
    }

    /// Axial slice `z` as `nx × ny` RGBA pixels: grey image, red
    /// segmentation, yellow ground-truth edge, green object clicks and
    /// blue background clicks.
    pub fn render(&self, z: usize) -> Result<Vec<u8>> {
        let (nx, ny, nz) = self.dims();
        if z >= nz {
            return Err(DemoError::Slice(z));
        }
        let image = extract_slice(self.session.image(), Axis::Z, z)?;
        let mask = extract_slice(&binarize(self.session.prob(), 0.5), Axis::Z, z)?;
        let truth = extract_slice(&self.truth, Axis::Z, z)?;
        debug_assert_eq!(slice_shape(self.session.dims(), Axis::Z), (nx, ny));
        let (lo, hi) = self.range;
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let inside = |x: isize, y: isize| {
            x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny && truth[y as usize * nx + x as usize] > 0.5
        };
        let mut out = Vec::with_capacity(nx * ny * 4);
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                let g = ((image[i] - lo) * scale).clamp(0.0, 255.0);
                let mut rgb = [g, g, g];
                if mask[i] > 0.5 {
                    rgb = [0.55 * g + 115.0, 0.55 * g, 0.55 * g];
                }
                let (xi, yi) = (x as isize, y as isize);
                let edge = inside(xi, yi)
                    && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                        .iter()
                        .any(|&(dx, dy)| !inside(xi + dx, yi + dy));
                if edge {
                    rgb = [255.0, 220.0, 0.0];
                }
                out.extend(rgb.iter().map(|&c| c as u8));
                out.push(255);
            }
        }
        let sets = self.session.hint_sets();
        for (clicks, colour) in [(&sets.object, [0u8, 230, 0]), (&sets.background, [40, 120, 255])] {
            for c in clicks.iter().filter(|c| c.z == z) {
                let i = (c.y * nx + c.x) * 4;
                out[i..i + 3].copy_from_slice(&colour);
            }
        }
        Ok(out)
    }
}
