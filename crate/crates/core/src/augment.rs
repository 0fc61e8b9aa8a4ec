//! Sample augmentation: joint horizontal flip plus photometric jitter,
//! blur and grayscale on the images.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::composer::{ImagePlane, PlacementParams};
use crate::data::CompositeSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip: f64,
    pub color_jitter: f64,
    pub blur: f64,
    pub grayscale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: 0.5,
            color_jitter: 0.5,
            blur: 0.5,
            grayscale: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            flip: 0.0,
            color_jitter: 0.0,
            blur: 0.0,
            grayscale: 0.0,
        }
    }

    pub fn problems(&self) -> Vec<alloc::string::String> {
        [
            ("flip", self.flip),
            ("color_jitter", self.color_jitter),
            ("blur", self.blur),
            ("grayscale", self.grayscale),
        ]
        .iter()
        .filter(|(_, p)| !(0.0..=1.0).contains(p))
        .map(|(n, p)| alloc::format!("train.augment.{n} = {p} is not a probability"))
        .collect()
    }
}

/// Jitter factors are drawn from `[1 − JITTER, 1 + JITTER]`.
pub const JITTER: f64 = 0.2;
pub const BLUR_RADIUS: usize = 2;
pub const BLUR_SIGMA: (f64, f64) = (0.1, 2.0);

/// Mirrors images, mask, scene boxes and the horizontal placement.
pub fn flip_sample(sample: &CompositeSample) -> CompositeSample {
    let t = sample.t;
    CompositeSample {
        graph: sample.graph.flipped_horizontally(),
        bg: sample.bg.flipped_horizontally(),
        fg: sample.fg.flipped_horizontally(),
        mask: sample.mask.flipped_horizontally(),
        t: PlacementParams {
            t_x: 1.0 - t.t_x,
            ..t
        },
        ..sample.clone()
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn grayscale(img: &ImagePlane) -> ImagePlane {
    ImagePlane::from_fn(3, img.height(), img.width(), |_, i, j| {
        luma(img.get(0, i, j), img.get(1, i, j), img.get(2, i, j))
    })
}

/// Brightness, contrast and saturation scaling, clamped to `[0, 1]`.
pub fn color_jitter(
    img: &ImagePlane,
    brightness: f32,
    contrast: f32,
    saturation: f32,
) -> ImagePlane {
    let (h, w) = (img.height(), img.width());
    let gray = grayscale(img);
    let mean = gray.channel(0).iter().sum::<f32>() / (h * w) as f32 * brightness;
    ImagePlane::from_fn(3, h, w, |c, i, j| {
        let v = img.get(c, i, j) * brightness;
        let g = gray.get(0, i, j) * brightness;
        let v = g + (v - g) * saturation;
        ((v - mean) * contrast + mean).clamp(0.0, 1.0)
    })
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &ImagePlane, sigma: f64) -> ImagePlane {
    let r = BLUR_RADIUS as i64;
    let mut kernel: Vec<f32> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let z: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= z;
    }
    let (h, w) = (img.height() as i64, img.width() as i64);
    let pass = |src: &ImagePlane, horizontal: bool| {
        ImagePlane::from_fn(src.channels(), h as usize, w as usize, |c, i, j| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| {
                    let d = k as i64 - r;
                    let (ii, jj) = if horizontal {
                        (i as i64, (j as i64 + d).clamp(0, w - 1))
                    } else {
                        ((i as i64 + d).clamp(0, h - 1), j as i64)
                    };
                    kv * src.get(c, ii as usize, jj as usize)
                })
                .sum()
        })
    };
    pass(&pass(img, true), false)
}

/// Applies each augmentation with its configured probability. Draws the
/// same number of values from `rng` whatever is applied.
pub fn augment(
    sample: &CompositeSample,
    config: &AugmentConfig,
    rng: &mut impl Rng,
) -> CompositeSample {
    let gates: [f64; 4] = core::array::from_fn(|_| rng.random::<f64>());
    let factors: [f64; 3] = core::array::from_fn(|_| rng.random_range(1.0 - JITTER..=1.0 + JITTER));
    let sigma = rng.random_range(BLUR_SIGMA.0..=BLUR_SIGMA.1);
    let mut out = if gates[0] < config.flip {
        flip_sample(sample)
    } else {
        sample.clone()
    };
    let mut photometric = |f: &dyn Fn(&ImagePlane) -> ImagePlane| {
        out.bg = f(&out.bg);
        out.fg = f(&out.fg);
    };
    if gates[1] < config.color_jitter {
        let [b, c, s] = factors.map(|v| v as f32);
        photometric(&|img| color_jitter(img, b, c, s));
    }
    if gates[2] < config.blur {
        photometric(&|img| gaussian_blur(img, sigma));
    }
    if gates[3] < config.grayscale {
        photometric(&grayscale);
    }
    out
}
