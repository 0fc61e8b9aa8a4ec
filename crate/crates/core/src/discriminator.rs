//! Realism critic over 4-channel composites (RGB + placed mask).
//!
//! The input is average-pooled to a fixed working size, then five 3×3
//! stride-2 convolutions halve the resolution stage by stage. A patch head
//! scores the stage-3 feature map cell by cell, a global head scores the
//! pooled stage-5 features, and the two logits are averaged.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::conv;
use crate::error::{Error, Result};
use crate::nn::{self, ParamStore};
use crate::scalar::Scalar;

pub const INPUT_CHANNELS: usize = 4;
const PATCH_STAGE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Side length the composite is pooled down to before the first stage.
    pub input_size: usize,
    pub channels: [usize; 5],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: [16, 32, 64, 64, 64],
        }
    }
}

pub const LEAK: f64 = 0.2;

impl DiscriminatorConfig {
    pub fn validate(&self, canvas: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_size < 32 || !self.input_size.is_multiple_of(32) {
            problems.push(format!(
                "discriminator.input_size ({}) must be a positive multiple of 32",
                self.input_size
            ));
        } else if !canvas.is_multiple_of(self.input_size) {
            problems.push(format!(
                "canvas ({canvas}) must be a multiple of discriminator.input_size ({})",
                self.input_size
            ));
        }
        if self.channels.contains(&0) {
            problems.push("discriminator.channels must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn init_params<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut impl Rng,
    ) {
        let mut c_in = INPUT_CHANNELS;
        for (i, &c_out) in self.channels.iter().enumerate() {
            let fan_in = c_in * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            store.init_uniform(
                &format!("{prefix}.conv{i}.weight"),
                &[c_out, c_in, 3, 3],
                bound,
                rng,
            );
            store.init_const(&format!("{prefix}.conv{i}.bias"), &[c_out], 0.0);
            c_in = c_out;
        }
        let patch_in = self.channels[PATCH_STAGE];
        let bound = (3.0 / patch_in as f64).sqrt();
        store.init_uniform(
            &format!("{prefix}.patch.weight"),
            &[1, patch_in, 1, 1],
            bound,
            rng,
        );
        store.init_const(&format!("{prefix}.patch.bias"), &[1], 0.0);
        store.init_linear(&format!("{prefix}.global"), self.channels[4], 1, true, rng);
    }
}

/// Realism scores in `(0, 1)` for a `[B, 4, S, S]` batch; returns `B × 1`.
pub fn discriminate<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    config: &DiscriminatorConfig,
    images: Var,
) -> Result<Var> {
    let shape = tape.value(images).shape().to_vec();
    if shape.len() != 4 || shape[1] != INPUT_CHANNELS || shape[2] != shape[3] {
        return Err(Error::Shape(format!("discriminator input {shape:?}")));
    }
    if !shape[2].is_multiple_of(config.input_size) {
        return Err(Error::Shape(format!(
            "canvas {} is not a multiple of {}",
            shape[2], config.input_size
        )));
    }
    let mut x = conv::avg_pool(tape, images, shape[2] / config.input_size)?;
    let mut patch_features = None;
    for i in 0..config.channels.len() {
        let w = tape.param(store, &format!("{prefix}.conv{i}.weight"))?;
        let b = tape.param(store, &format!("{prefix}.conv{i}.bias"))?;
        x = conv::conv2d(tape, x, w, b, 2, 1)?;
        x = tape.leaky_relu(x, LEAK);
        if i == PATCH_STAGE {
            patch_features = Some(x);
        }
    }
    let patch_features = patch_features.expect("five stages");
    let pw = tape.param(store, &format!("{prefix}.patch.weight"))?;
    let pb = tape.param(store, &format!("{prefix}.patch.bias"))?;
    let patch = conv::conv2d(tape, patch_features, pw, pb, 1, 0)?;
    let patch = conv::spatial_mean(tape, patch)?;
    let pooled = conv::spatial_mean(tape, x)?;
    let global = nn::linear(tape, store, &format!("{prefix}.global"), pooled)?;
    let logit = tape.add(patch, global)?;
    let logit = tape.affine(logit, 0.5, 0.0);
    Ok(tape.sigmoid(logit))
}
