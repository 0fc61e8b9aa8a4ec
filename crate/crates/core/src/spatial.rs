//! Per-node geometric descriptors and their fusion with graph features.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, ParamStore};
use crate::scalar::Scalar;
use crate::scene_graph::BoundingBox;
use crate::tensor::Tensor;

/// Smallest and largest value a normalized placement parameter may take.
pub const PARAM_FLOOR: f64 = 1e-4;
pub const PARAM_CEIL: f64 = 1.0 - 1e-4;

/// `[W_bg, H_bg, x, y, w, h, t_r, t_x, t_y]` for one box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialVector {
    pub bg_width: f64,
    pub bg_height: f64,
    pub bbox: BoundingBox,
    pub t_r: f64,
    pub t_x: f64,
    pub t_y: f64,
    /// Set when the box spans a full background dimension and the
    /// translation denominator had to be clamped.
    pub degenerate: bool,
}

impl SpatialVector {
    pub fn to_array(&self) -> [f64; 9] {
        let b = self.bbox;
        [
            self.bg_width,
            self.bg_height,
            b.x,
            b.y,
            b.w,
            b.h,
            self.t_r,
            self.t_x,
            self.t_y,
        ]
    }

    /// Network input: pixel components divided by the longer background side
    /// so every entry is O(1).
    pub fn features(&self) -> [f64; 9] {
        let r = self.bg_width.max(self.bg_height);
        let mut a = self.to_array();
        for v in &mut a[..6] {
            *v /= r;
        }
        a
    }

    pub fn params(&self) -> [f64; 3] {
        [self.t_r, self.t_x, self.t_y]
    }
}

fn clamp_param(v: f64) -> f64 {
    v.clamp(PARAM_FLOOR, PARAM_CEIL)
}

/// Scale and normalized translation of `bbox` inside a `bg_width × bg_height`
/// background. Scale is measured along the limiting dimension: height when
/// the box is relatively taller than the background, width otherwise.
pub fn spatial_vector(bbox: BoundingBox, bg_width: f64, bg_height: f64) -> Result<SpatialVector> {
    if !(bg_width > 0.0 && bg_height > 0.0 && bg_width.is_finite() && bg_height.is_finite()) {
        return Err(Error::Domain(format!("background {bg_width}x{bg_height}")));
    }
    let problems = bbox.violations(bg_width, bg_height);
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let t_r = if bbox.aspect() < bg_width / bg_height {
        bbox.h / bg_height
    } else {
        bbox.w / bg_width
    };
    let slack_x = bg_width - bbox.w;
    let slack_y = bg_height - bbox.h;
    let degenerate = slack_x < 1.0 || slack_y < 1.0;
    Ok(SpatialVector {
        bg_width,
        bg_height,
        bbox,
        t_r: clamp_param(t_r),
        t_x: clamp_param(bbox.x / slack_x.max(1.0)),
        t_y: clamp_param(bbox.y / slack_y.max(1.0)),
        degenerate,
    })
}

/// Multiplier on the Xavier init of the spatial projection. The box
/// features are nine O(1) numbers while the graph half of the concatenation
/// is layer-normalised, so without it geometry enters several times weaker
/// than identity and the model memorises scenes instead of reading boxes.
pub const INIT_GAIN: f64 = 6.0;

/// Registers the `9 → d_spatial` projection under `{prefix}.proj`.
pub fn init_params<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_spatial: usize,
    rng: &mut impl rand::Rng,
) {
    let name = format!("{prefix}.proj");
    store.init_linear(&name, 9, d_spatial, true, rng);
    let w = store
        .get_mut(&format!("{name}.weight"))
        .expect("just created");
    for v in w.data_mut() {
        *v *= T::of(INIT_GAIN);
    }
}

/// `[X ∥ P(s)]`: graph features followed by projected spatial features.
pub fn enhance<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    node_features: Var,
    vectors: &[SpatialVector],
) -> Result<Var> {
    let n = tape.value(node_features).rows();
    if n != vectors.len() {
        return Err(Error::Shape(format!(
            "{n} node rows but {} spatial vectors",
            vectors.len()
        )));
    }
    let raw: Vec<T> = vectors
        .iter()
        .flat_map(|v| v.features())
        .map(T::of)
        .collect();
    let s = tape.constant(Tensor::new(&[n, 9], raw)?);
    let projected = nn::linear(tape, store, &format!("{prefix}.proj"), s)?;
    tape.concat_cols(&[node_features, projected])
}
