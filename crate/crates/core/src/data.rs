//! Training samples and the interface datasets expose to the trainer.

use alloc::string::String;

use crate::composer::{ImagePlane, PlacementParams};
use crate::error::Result;
use crate::scene_graph::SceneGraph;

/// A background with its scene graph, a foreground to place, and one
/// placement of it (plausible for real samples, implausible for fakes).
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSample {
    pub graph: SceneGraph,
    pub foreground: String,
    /// Native foreground size in pixels; only its aspect ratio matters for
    /// placement.
    pub fg_size: (f64, f64),
    /// `3 × H × W` background.
    pub bg: ImagePlane,
    /// `3 × H × W` foreground, aspect-fit and centered on the canvas.
    pub fg: ImagePlane,
    /// `1 × H × W` foreground mask on the same canvas.
    pub mask: ImagePlane,
    pub t: PlacementParams,
    pub real: bool,
}

impl CompositeSample {
    /// Foreground size on the canvas as a fraction of each side.
    pub fn fg_extent(&self) -> (f64, f64) {
        fit_extent(
            self.fg_size,
            (self.bg.width() as f64, self.bg.height() as f64),
        )
    }

    /// The same sample with every image plane box-filtered by `factor`.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            bg: self.bg.downsampled(factor)?,
            fg: self.fg.downsampled(factor)?,
            mask: self.mask.downsampled(factor)?,
            ..self.clone()
        })
    }

    pub fn canvas(&self) -> (f64, f64) {
        (self.bg.width() as f64, self.bg.height() as f64)
    }
}

/// Fraction of a `canvas` covered by an aspect-preserving fit of `size`.
pub fn fit_extent(size: (f64, f64), canvas: (f64, f64)) -> (f64, f64) {
    let scale = (canvas.0 / size.0).min(canvas.1 / size.1);
    (size.0 * scale / canvas.0, size.1 * scale / canvas.1)
}

/// Random access to the real and fake pools of a dataset.
pub trait SampleSource {
    /// Full image size `(width, height)` in pixels.
    fn canvas(&self) -> (usize, usize);
    fn num_real(&self) -> usize;
    fn num_fake(&self) -> usize;
    fn real(&self, index: usize) -> Result<CompositeSample>;
    fn fake(&self, index: usize) -> Result<CompositeSample>;

    /// Real sample with images reduced by `factor`. Sources that can render
    /// at low resolution directly should override this.
    fn real_reduced(&self, index: usize, factor: usize) -> Result<CompositeSample> {
        self.real(index)?.downsampled(factor)
    }

    fn fake_reduced(&self, index: usize, factor: usize) -> Result<CompositeSample> {
        self.fake(index)?.downsampled(factor)
    }
}
